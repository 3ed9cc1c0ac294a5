//! Round-based labeling experiments. Each round trains on the labeled pool,
//! evaluates on the held-out test images, then grows the pool either in page
//! order (sequential) or by lowest maximum detection confidence (uncertainty).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::dataset::{Annotation, DatasetCOCO, DatasetError, ImageId, ImageRecord};
use crate::detector::{Detector, DetectorError, DetectorKind, DetectorSpec, Predictions, TrainRequest};
use crate::eval::{evaluate, Detection, EvalError, MetricsReport};
use crate::split::SplitResult;
use crate::yolo::{write_labels, YoloError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sequential,
    Uncertainty,
}

impl Strategy {
    /// Short column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Sequential => "SL",
            Strategy::Uncertainty => "AL",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Sequential => "sequential",
            Strategy::Uncertainty => "uncertainty",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sl" | "sequential" => Ok(Strategy::Sequential),
            "al" | "uncertainty" => Ok(Strategy::Uncertainty),
            _ => Err(format!("unknown strategy {s:?} (expected al or sl)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("image {0} belongs to the test set and cannot be labeled")]
    Leakage(ImageId),
    #[error("image {0} is not in the training pool")]
    NotInPool(ImageId),
    #[error("no prediction for unlabeled image {0}")]
    MissingPrediction(ImageId),
    #[error("round {round}: detector failed: {source}")]
    Detector {
        round: usize,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Labels(#[from] YoloError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("run directory {0} holds a different experiment configuration")]
    ConfigMismatch(String),
    #[error("runs have different round counts: {0:?}")]
    RoundMismatch(Vec<usize>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub batch_size: usize,
    pub seed_count: usize,
    /// Seeds the synthetic detector (replacing its own `rng_seed`).
    pub rng_seed: u64,
    pub detector: DetectorSpec,
    pub split: SplitResult,
}

impl ExperimentConfig {
    pub fn new(strategy: Strategy, split: SplitResult, detector: DetectorSpec) -> Self {
        Self { strategy, rounds: 20, batch_size: 15, seed_count: 1, rng_seed: 0, detector, split }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.rounds < 1 {
            return bad("rounds must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if self.seed_count < 1 {
            return bad("seed count must be at least 1");
        }
        if self.split.train_ids.is_empty() {
            return bad("the split has no training images");
        }
        let test: BTreeSet<_> = self.split.test_ids.iter().collect();
        if let Some(id) = self.split.train_ids.iter().find(|id| test.contains(id)) {
            return bad(&format!("image {id} is in both the train and test sets"));
        }
        self.detector.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// The detector spec with the experiment seed applied.
    pub fn effective_detector(&self) -> DetectorSpec {
        let mut spec = self.detector.clone();
        if spec.kind == DetectorKind::Synthetic {
            if let Some(p) = spec.synthetic_params.as_mut() {
                p.rng_seed = self.rng_seed;
            }
        }
        spec
    }
}

/// Labeled-pool size at `round`: `seed_count + round * batch_size`, capped at the pool.
pub fn schedule_size(round: usize, seed_count: usize, batch_size: usize, pool: usize) -> usize {
    round.saturating_mul(batch_size).saturating_add(seed_count).min(pool)
}

/// Maximum detection score of an image; 0.0 without detections.
pub fn image_uncertainty(dets: &[Detection]) -> f64 {
    dets.iter().map(|d| d.score).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub image_id: ImageId,
    /// Maximum detection confidence; absent for sequential selection.
    pub uncertainty: Option<f64>,
}

/// Picks up to `k` of the `unlabeled` images. Sequential takes ascending
/// page order; uncertainty takes the lowest scores, ties by page order.
pub fn select_next(
    unlabeled: &[&ImageRecord],
    preds: &Predictions,
    k: usize,
    strategy: Strategy,
) -> Result<Vec<SelectionEntry>, ExperimentError> {
    let mut ranked: Vec<(Option<f64>, u32, ImageId)> = Vec::with_capacity(unlabeled.len());
    for img in unlabeled {
        let score = match strategy {
            Strategy::Sequential => None,
            Strategy::Uncertainty => {
                let dets = preds.get(&img.id).ok_or(ExperimentError::MissingPrediction(img.id))?;
                Some(image_uncertainty(dets))
            }
        };
        ranked.push((score, img.page_index, img.id));
    }
    ranked.sort_by(|a, b| {
        let by_score = match (a.0, b.0) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => std::cmp::Ordering::Equal,
        };
        by_score.then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    Ok(ranked.into_iter().take(k).map(|(uncertainty, _, image_id)| SelectionEntry { image_id, uncertainty }).collect())
}

/// Ground truth of training-pool images, as a human annotator would supply it.
pub fn reveal_labels(
    ids: &[ImageId],
    gt: &DatasetCOCO,
    split: &SplitResult,
) -> Result<Vec<Annotation>, ExperimentError> {
    let mut out = Vec::new();
    for &id in ids {
        if split.is_test(id) {
            return Err(ExperimentError::Leakage(id));
        }
        if split.train_ids.binary_search(&id).is_err() || !gt.contains_image(id) {
            return Err(ExperimentError::NotInPool(id));
        }
        out.extend(gt.annotations_for(id).cloned());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    /// In the order the images were labeled.
    pub labeled_ids: Vec<ImageId>,
    /// In ascending page order.
    pub unlabeled_ids: Vec<ImageId>,
    pub metrics: MetricsReport,
    /// Images chosen at the end of this round for the next one.
    pub selection_trace: Vec<SelectionEntry>,
}

impl RoundState {
    /// Equality that treats two NaN F1 values as equal.
    pub fn same_as(&self, other: &Self) -> bool {
        self.round == other.round
            && self.labeled_ids == other.labeled_ids
            && self.unlabeled_ids == other.unlabeled_ids
            && self.selection_trace == other.selection_trace
            && self.metrics.same_as(&other.metrics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundPredictions {
    test: BTreeMap<ImageId, Vec<Detection>>,
    unlabeled: BTreeMap<ImageId, Vec<Detection>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailureRecord {
    round: usize,
    error: String,
}

pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FAILURE_FILE: &str = "failed.json";

pub fn round_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(format!("round_{round}"))
}

fn tmp_round_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(format!(".round_{round}.tmp"))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("run records serialize");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Corrupt { path: path.display().to_string(), message: e.to_string() })
}

/// Cumulative per-round metrics, one row per round.
pub fn metrics_csv(states: &[RoundState]) -> String {
    let mut out = String::from("round,images,map50,map5095,precision,recall,f1,confidence_threshold\n");
    for s in states {
        let m = &s.metrics;
        let threshold = m.confidence_threshold.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.round,
            s.labeled_ids.len(),
            m.map50,
            m.map5095,
            m.precision,
            m.recall,
            if m.f1.is_nan() { "NaN".to_string() } else { m.f1.to_string() },
            threshold
        ));
    }
    out
}

/// Reads the persisted rounds of a run directory, in order. Stops at the
/// first round without a complete `state.json`.
pub fn load_rounds(run_dir: &Path) -> Result<Vec<RoundState>, ExperimentError> {
    let mut states = Vec::new();
    loop {
        let path = round_dir(run_dir, states.len()).join("state.json");
        if !path.is_file() {
            return Ok(states);
        }
        let state: RoundState = read_json(&path)?;
        if state.round != states.len() {
            return Err(ExperimentError::Corrupt {
                path: path.display().to_string(),
                message: format!("holds round {}", state.round),
            });
        }
        states.push(state);
    }
}

pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig, ExperimentError> {
    read_json(&run_dir.join(RUN_FILE))
}

/// Controls how far a call to [`run_experiment`] goes.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Stop (as if interrupted) once this round has been persisted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub states: Vec<RoundState>,
    /// Round this call started from (non-zero when resuming).
    pub resumed_from: usize,
    pub complete: bool,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    gt: &'a DatasetCOCO,
    test_gt: DatasetCOCO,
    test_images: Vec<ImageRecord>,
    /// Training pool in ascending page order.
    pool: Vec<&'a ImageRecord>,
    run_dir: &'a Path,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig, gt: &'a DatasetCOCO, run_dir: &'a Path) -> Result<Self, ExperimentError> {
        let mut pool = Vec::with_capacity(cfg.split.train_ids.len());
        for &id in &cfg.split.train_ids {
            pool.push(
                gt.image(id)
                    .ok_or_else(|| ExperimentError::Config(format!("train image {id} is not in the ground truth")))?,
            );
        }
        pool.sort_by_key(|i| (i.page_index, i.id));
        let test_set: BTreeSet<ImageId> = cfg.split.test_ids.iter().copied().collect();
        for id in &test_set {
            if !gt.contains_image(*id) {
                return Err(ExperimentError::Config(format!("test image {id} is not in the ground truth")));
            }
        }
        let test_gt = gt.restrict(&test_set)?;
        let test_images = test_gt.images().to_vec();
        Ok(Self { cfg, gt, test_gt, test_images, pool, run_dir })
    }

    fn initial_labeled(&self) -> Vec<ImageId> {
        let n = schedule_size(0, self.cfg.seed_count, self.cfg.batch_size, self.pool.len());
        self.pool[..n].iter().map(|i| i.id).collect()
    }

    fn run_round(
        &self,
        detector: &mut dyn Detector,
        round: usize,
        labeled: Vec<ImageId>,
        dir: &Path,
    ) -> Result<RoundState, ExperimentError> {
        let labeled_set: BTreeSet<ImageId> = labeled.iter().copied().collect();
        let annotations = reveal_labels(&labeled, self.gt, &self.cfg.split)?;
        let labeled_images: Vec<ImageRecord> =
            labeled.iter().map(|id| self.gt.image(*id).expect("pool images exist").clone()).collect();
        let train_set = DatasetCOCO::new(labeled_images.clone(), annotations)?;
        let labels_dir = dir.join("labels");
        write_labels(&train_set, &labeled, &labels_dir)?;

        let det_err = |source| ExperimentError::Detector { round, source };
        let workdir = self.run_dir.join("workdir");
        fs::create_dir_all(&workdir).map_err(io_err(&workdir))?;
        let handle = detector
            .train(&TrainRequest {
                images: &labeled_images,
                labels_dir: &labels_dir,
                workdir: &workdir,
                warm_start: self.cfg.detector.warm_start,
            })
            .map_err(det_err)?;

        let unlabeled: Vec<&ImageRecord> = self.pool.iter().copied().filter(|i| !labeled_set.contains(&i.id)).collect();
        let next_size = schedule_size(round + 1, self.cfg.seed_count, self.cfg.batch_size, self.pool.len());
        let k = if round + 1 < self.cfg.rounds { next_size.saturating_sub(labeled.len()) } else { 0 };

        let test_preds = detector.predict(&handle, &self.test_images, self.gt).map_err(det_err)?;
        let pool_preds = if self.cfg.strategy == Strategy::Uncertainty && k > 0 {
            let imgs: Vec<ImageRecord> = unlabeled.iter().map(|i| (*i).clone()).collect();
            detector.predict(&handle, &imgs, self.gt).map_err(det_err)?
        } else {
            Predictions::new()
        };

        let flat: Vec<Detection> = test_preds.values().flatten().cloned().collect();
        let metrics = evaluate(&flat, &self.test_gt)?;
        let selection_trace =
            if k == 0 { Vec::new() } else { select_next(&unlabeled, &pool_preds, k, self.cfg.strategy)? };
        // the guard runs before anything is handed to the next round
        let chosen: Vec<ImageId> = selection_trace.iter().map(|s| s.image_id).collect();
        reveal_labels(&chosen, self.gt, &self.cfg.split)?;

        let predictions = RoundPredictions { test: test_preds, unlabeled: pool_preds };
        let path = dir.join("predictions.json");
        fs::write(&path, to_json(&predictions)).map_err(io_err(&path))?;
        let state = RoundState {
            round,
            labeled_ids: labeled,
            unlabeled_ids: unlabeled.iter().map(|i| i.id).collect(),
            metrics,
            selection_trace,
        };
        let path = dir.join("state.json");
        fs::write(&path, to_json(&state)).map_err(io_err(&path))?;
        Ok(state)
    }
}

/// Runs (or resumes) an experiment in `run_dir`. Every finished round is
/// written to a scratch directory and renamed into place, so the directory
/// only ever holds complete rounds. A failing round leaves `failed.json`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    gt: &DatasetCOCO,
    run_dir: &Path,
    control: RunControl,
) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let run_file = run_dir.join(RUN_FILE);
    if run_file.is_file() {
        let existing: ExperimentConfig = read_json(&run_file)?;
        if &existing != cfg {
            return Err(ExperimentError::ConfigMismatch(run_dir.display().to_string()));
        }
    } else {
        write_atomic(&run_file, &to_json(cfg))?;
    }

    let ctx = Context::new(cfg, gt, run_dir)?;
    let mut states = load_rounds(run_dir)?;
    states.truncate(cfg.rounds);
    let resumed_from = states.len();
    if resumed_from > 0 {
        info!(round = resumed_from, "resuming run");
    }
    let failure = run_dir.join(FAILURE_FILE);
    if failure.exists() {
        fs::remove_file(&failure).map_err(io_err(&failure))?;
    }

    let mut detector: Option<Box<dyn Detector>> = None;
    for round in resumed_from..cfg.rounds {
        let labeled = match states.last() {
            None => ctx.initial_labeled(),
            Some(prev) => {
                let mut l = prev.labeled_ids.clone();
                l.extend(prev.selection_trace.iter().map(|s| s.image_id));
                l
            }
        };
        let tmp = tmp_round_dir(run_dir, round);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;

        let result = (|| {
            if detector.is_none() {
                let spec = cfg.effective_detector();
                detector = Some(spec.build().map_err(|source| ExperimentError::Detector { round, source })?);
            }
            ctx.run_round(detector.as_deref_mut().expect("built above"), round, labeled, &tmp)
        })();
        let state = match result {
            Ok(s) => s,
            Err(e) => {
                warn!(round, error = %e, "round failed");
                let _ = fs::remove_dir_all(&tmp);
                write_atomic(&failure, &to_json(&FailureRecord { round, error: e.to_string() }))?;
                return Err(e);
            }
        };
        let dest = round_dir(run_dir, round);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
        }
        fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
        info!(
            round,
            images = state.labeled_ids.len(),
            map50 = state.metrics.map50,
            map5095 = state.metrics.map5095,
            "round complete"
        );
        states.push(state);
        write_atomic(&run_dir.join(METRICS_FILE), &metrics_csv(&states))?;
        if control.stop_after == Some(round) && round + 1 < cfg.rounds {
            return Ok(RunOutcome { states, resumed_from, complete: false });
        }
    }
    Ok(RunOutcome { states, resumed_from, complete: true })
}

/// One strategy's rounds, labeled for the report.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub name: String,
    pub states: Vec<RoundState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub text: String,
}

const METRIC_NAMES: [&str; 5] = ["map50", "map5095", "precision", "recall", "f1"];
const METRIC_HEADERS: [&str; 5] = ["mAP@50", "mAP@50:95", "P", "R", "F1"];

fn metric_values(m: &MetricsReport) -> [f64; 5] {
    [m.map50, m.map5095, m.precision, m.recall, m.f1]
}

/// Percentage at one decimal; NaN is printed literally.
pub fn percent(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{:.1}", v * 100.0)
    }
}

/// Per-round comparison table. With two or more runs, the best value of each
/// metric in a round (compared as printed) is flagged; ties flag every holder
/// and NaN never wins.
pub fn render_report(runs: &[StrategyRun]) -> Result<Report, ExperimentError> {
    let counts: Vec<usize> = runs.iter().map(|r| r.states.len()).collect();
    if runs.is_empty() || counts.iter().any(|&c| c != counts[0]) {
        return Err(ExperimentError::RoundMismatch(counts));
    }
    let compare = runs.len() > 1;

    let mut csv_header = vec!["round".to_string()];
    let mut text_header = vec!["Round".to_string()];
    for r in runs {
        csv_header.push(format!("{}_images", r.name));
        text_header.push(format!("{} #Images", r.name));
        for (n, h) in METRIC_NAMES.iter().zip(METRIC_HEADERS) {
            csv_header.push(format!("{}_{n}", r.name));
            text_header.push(format!("{} {h}", r.name));
        }
    }
    if compare {
        csv_header.push("best".into());
    }

    let mut csv_rows = vec![csv_header.join(",")];
    let mut text_rows = vec![text_header];
    for round in 0..counts[0] {
        let cells: Vec<[String; 5]> =
            runs.iter().map(|r| metric_values(&r.states[round].metrics).map(percent)).collect();
        let mut best = vec![[false; 5]; runs.len()];
        let mut best_notes = Vec::new();
        if compare {
            for m in 0..5 {
                let parsed: Vec<Option<f64>> =
                    cells.iter().map(|c| c[m].parse::<f64>().ok().filter(|v| !v.is_nan())).collect();
                let Some(top) = parsed.iter().flatten().copied().reduce(f64::max) else { continue };
                let holders: Vec<&str> = (0..runs.len())
                    .filter(|&i| parsed[i] == Some(top))
                    .inspect(|&i| best[i][m] = true)
                    .map(|i| runs[i].name.as_str())
                    .collect();
                best_notes.push(format!("{}:{}", METRIC_NAMES[m], holders.join("+")));
            }
        }
        let mut csv = vec![round.to_string()];
        let mut text = vec![round.to_string()];
        for (i, r) in runs.iter().enumerate() {
            let images = r.states[round].labeled_ids.len().to_string();
            csv.push(images.clone());
            text.push(images);
            for m in 0..5 {
                csv.push(cells[i][m].clone());
                text.push(if best[i][m] { format!("{}*", cells[i][m]) } else { cells[i][m].clone() });
            }
        }
        if compare {
            csv.push(best_notes.join(";"));
        }
        csv_rows.push(csv.join(","));
        text_rows.push(text);
    }

    let widths: Vec<usize> =
        (0..text_rows[0].len()).map(|c| text_rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for row in &text_rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    let mut csv = csv_rows.join("\n");
    csv.push('\n');
    Ok(Report { csv, text })
}
