use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use scriptorium::detector::DetectorSpec;
use scriptorium::eval::{evaluate_with, Detection, EvalConfig, Interpolation, MetricsReport, OperatingPoint};
use scriptorium::experiment::{
    load_rounds, load_run_config, percent, render_report, run_experiment, ExperimentConfig, RunControl, StrategyRun,
};
use scriptorium::merge::{
    dataset_stats, load_image_manifest, load_page_sources, merge_sources, MergeConfig, SourceDirs,
};
use scriptorium::split::{load_features, make_split, SplitResult};
use scriptorium::{CategoryTable, DatasetCOCO, ImageId};
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};
use tracing::{info, warn};

use crate::args::{EvalArgs, InterpolationArg, MergeArgs, ReportArgs, RunArgs, SplitArgs};
use crate::error::CliError;

const DEFAULT_RATIO: f64 = 0.2;

/// Collects the names of absent required inputs so they can be reported together.
struct Required {
    section: &'static str,
    missing: Vec<String>,
}

impl Required {
    fn new(section: &'static str) -> Self {
        Self { section, missing: Vec::new() }
    }

    fn take<T>(&mut self, value: Option<T>, flag: &str) -> Option<T> {
        if value.is_none() {
            self.missing.push(format!("--{flag}"));
        }
        value
    }

    fn check(self) -> Result<(), CliError> {
        if self.missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::Missing { section: self.section, flags: self.missing })
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Json { path: path.display().to_string(), message: e.to_string() })
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_gt(path: &Path) -> Result<DatasetCOCO, CliError> {
    let (ds, report) = DatasetCOCO::load(path)?;
    if report.clamped > 0 {
        warn!(clamped = report.clamped, "ground-truth boxes clamped to their images");
    }
    if !report.rejected.is_empty() {
        warn!(rejected = ?report.rejected, "ground-truth boxes without area dropped");
    }
    Ok(ds)
}

pub fn merge(args: MergeArgs) -> Result<(), CliError> {
    let mut req = Required::new("merge");
    let images = req.take(args.images, "images");
    let out = req.take(args.out, "out");
    if args.pagexml.is_none() && args.mei.is_none() && args.svg.is_none() {
        req.missing.push("--pagexml/--mei/--svg (at least one)".into());
    }
    req.check()?;
    let (images, out) = (images.unwrap(), out.unwrap());

    let config = match &args.mapping {
        Some(p) => MergeConfig::load(p)?,
        None => MergeConfig::default(),
    };
    let dirs = SourceDirs { pagexml: args.pagexml, mei: args.mei, svg: args.svg };
    let records = load_image_manifest(&images)?;
    let pages = records
        .par_iter()
        .map(|img| load_page_sources(&dirs, img.stem()).map(|p| (img.id, p)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let (ds, report) = merge_sources(&pages, records, &config)?;
    write_output(&out, &ds.to_json_string())?;
    if let Some(path) = &args.report {
        write_output(path, &report.to_json_string())?;
    }
    let stats = dataset_stats(&ds);
    info!(annotations = stats.total, images = stats.images, warnings = report.warning_count, "merged");
    println!("{} annotations on {} images ({} warnings)", stats.total, stats.images, report.warning_count);
    for (name, count) in stats.nonzero() {
        println!("  {name:<16}{count:>7}");
    }
    Ok(())
}

pub fn split(args: SplitArgs) -> Result<(), CliError> {
    let mut req = Required::new("split");
    let features = req.take(args.features, "features");
    let out = req.take(args.out, "out");
    req.check()?;
    let ratio = args.ratio.unwrap_or(DEFAULT_RATIO);
    let features = load_features(&features.unwrap())?;
    let split = make_split(&features, ratio)?;
    write_output(&out.unwrap(), &split.to_json_string())?;
    info!(test = split.test_ids.len(), train = split.train_ids.len(), "split written");
    println!("{} test / {} train", split.test_ids.len(), split.train_ids.len());
    Ok(())
}

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let mut req = Required::new("run");
    let strategy = req.take(args.strategy, "strategy");
    let gt = req.take(args.gt, "gt");
    let split = req.take(args.split, "split");
    let detector = req.take(args.detector, "detector");
    let out = req.take(args.out, "out");
    req.check()?;
    let (strategy, out) = (strategy.unwrap(), out.unwrap());

    let gt = load_gt(&gt.unwrap())?;
    let split_path = split.unwrap();
    let split = SplitResult::from_json_str(&read_text(&split_path)?)
        .map_err(|e| CliError::Json { path: split_path.display().to_string(), message: e.to_string() })?;
    let mut spec = DetectorSpec::load(&detector.unwrap())?;
    if let Some(w) = args.warm_start {
        spec.warm_start = w;
    }
    let mut cfg = ExperimentConfig::new(strategy, split, spec);
    if let Some(v) = args.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed_count {
        cfg.seed_count = v;
    }
    if let Some(v) = args.rng_seed {
        cfg.rng_seed = v;
    }
    let outcome = run_experiment(&cfg, &gt, &out, RunControl { stop_after: args.stop_after })?;
    let report = render_report(&[StrategyRun { name: strategy.label().to_string(), states: outcome.states.clone() }])?;
    print!("{}", report.text);
    if !outcome.complete {
        println!("stopped after round {}; rerun the same command to continue", outcome.states.len() - 1);
    }
    Ok(())
}

fn parse_test_ids(path: &Path) -> Result<BTreeSet<ImageId>, CliError> {
    let value: Value = read_json(path)?;
    let list = match &value {
        Value::Object(o) => o.get("test_ids"),
        v => Some(v),
    };
    let bad = || CliError::Json {
        path: path.display().to_string(),
        message: "expected an array of image ids or an object with \"test_ids\"".into(),
    };
    let ids = list.and_then(Value::as_array).ok_or_else(bad)?;
    ids.iter().map(|v| v.as_u64().ok_or_else(bad)).collect()
}

fn rounded_percent(v: f64) -> Value {
    percent(v).parse::<f64>().ok().filter(|x| x.is_finite()).map_or(Value::Null, Value::from)
}

/// Metrics as percentages at one decimal; F1 is null when undefined.
pub fn metrics_json(m: &MetricsReport, table: &CategoryTable, images: usize, detections: usize) -> Value {
    let mut per_class = Map::new();
    for (id, ap) in &m.per_class_ap50 {
        let name = table.name(*id).map_or_else(|| id.to_string(), str::to_string);
        per_class.insert(name, rounded_percent(*ap));
    }
    json!({
        "images": images,
        "detections": detections,
        "map50": rounded_percent(m.map50),
        "map5095": rounded_percent(m.map5095),
        "precision": rounded_percent(m.precision),
        "recall": rounded_percent(m.recall),
        "f1": rounded_percent(m.f1),
        "confidence_threshold": m.confidence_threshold,
        "per_class_ap50": per_class,
    })
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut req = Required::new("eval");
    let gt = req.take(args.gt, "gt");
    let dets = req.take(args.dets, "dets");
    let out = req.take(args.out, "out");
    req.check()?;

    let mut gt = load_gt(&gt.unwrap())?;
    if let Some(path) = &args.test_ids {
        gt = gt.restrict(&parse_test_ids(path)?)?;
    }
    let dets: Vec<Detection> = read_json(&dets.unwrap())?;
    let config = EvalConfig {
        interpolation: match args.interpolation {
            Some(InterpolationArg::All) => Interpolation::AllPoints,
            Some(InterpolationArg::Points101) | None => Interpolation::Points101,
        },
        operating_point: match args.threshold {
            Some(t) if (0.0..=1.0).contains(&t) => OperatingPoint::Fixed(t),
            Some(t) => return Err(CliError::Invalid(format!("threshold {t} is outside [0, 1]"))),
            None => OperatingPoint::MaxF1,
        },
    };
    let metrics = evaluate_with(&dets, &gt, &config)?;
    let doc = metrics_json(&metrics, gt.categories(), gt.images().len(), dets.len());
    let mut text = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    text.push('\n');
    write_output(&out.unwrap(), &text)?;
    println!(
        "mAP@50 {}  mAP@50:95 {}  P {}  R {}  F1 {}",
        percent(metrics.map50),
        percent(metrics.map5095),
        percent(metrics.precision),
        percent(metrics.recall),
        percent(metrics.f1)
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    if args.runs.is_empty() {
        return Err(CliError::Missing { section: "report", flags: vec!["--runs".into()] });
    }
    let mut runs = Vec::new();
    for dir in &args.runs {
        let cfg = load_run_config(dir)?;
        runs.push((dir, cfg.strategy.label().to_string(), load_rounds(dir)?));
    }
    let names: Vec<&String> = runs.iter().map(|r| &r.1).collect();
    let clash = (1..names.len()).any(|i| names[..i].contains(&names[i]));
    let runs: Vec<StrategyRun> = runs
        .into_iter()
        .map(|(dir, name, states)| {
            let name = if clash { format!("{name}:{}", dir_name(dir)) } else { name };
            StrategyRun { name, states }
        })
        .collect();
    let report = render_report(&runs)?;
    if let Some(out) = &args.out {
        write_output(out, &report.csv)?;
    }
    print!("{}", report.text);
    Ok(())
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}
