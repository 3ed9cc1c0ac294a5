//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use scriptorium::categories::{CategoryTable, REFERENCE_COUNTS};
use scriptorium::corpus::{generate_dataset, generate_features};
use scriptorium::detector::{DetectorSpec, SyntheticParams};
use scriptorium::eval::{evaluate, f1_score};
use scriptorium::experiment::{
    round_dir, run_experiment, schedule_size, select_next, ExperimentConfig, RoundState, RunControl, Strategy,
};
use scriptorium::merge::{
    dataset_stats, load_image_manifest, load_page_sources, merge_sources, Disposition, MergeConfig, SourceDirs,
};
use scriptorium::split::{make_split, single_linkage_cluster, FeatureVector};
use scriptorium::yolo::write_labels;
use scriptorium::{DatasetCOCO, ImageRecord};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn schedule() -> Result<String, String> {
    let want = [1, 16, 31, 46, 61, 76, 91, 106, 121, 136, 151, 166, 181, 196, 211, 226, 241, 256, 271, 272];
    let got: Vec<usize> = (0..20).map(|r| schedule_size(r, 1, 15, 272)).collect();
    ensure(got == want, || format!("got {got:?}"))?;
    Ok("20 rounds exact".into())
}

fn metrics_oracle() -> Result<String, String> {
    let mut r = rng(1001);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let (dets, gt) = random_eval_instance(&mut r);
        let got = evaluate(&dets, &gt).map_err(|e| format!("case {case}: {e}"))?;
        let want = ref_evaluate(&dets, &gt);
        for (name, a, b) in [
            ("map50", got.map50, want.map50),
            ("map5095", got.map5095, want.map5095),
            ("precision", got.precision, want.precision),
            ("recall", got.recall, want.recall),
            ("f1", got.f1, want.f1),
        ] {
            if a.is_nan() && b.is_nan() {
                continue;
            }
            let d = (a - b).abs();
            ensure(d <= 1e-9, || format!("case {case}: {name} {a} vs {b}"))?;
            worst = worst.max(d);
        }
        ensure(got.confidence_threshold == want.threshold, || format!("case {case}: threshold"))?;
    }
    Ok(format!("500 instances, max deviation {worst:.1e}"))
}

fn f1_convention() -> Result<String, String> {
    let f = f1_score(0.807, 0.858);
    ensure((f - 0.832).abs() <= 0.0005, || format!("F1(0.807, 0.858) = {f}"))?;
    let z = f1_score(0.0, 0.0);
    ensure(z.is_nan(), || format!("F1(0, 0) = {z}"))?;
    Ok(format!("F1(0.807, 0.858) = {f:.4}, F1(0, 0) = NaN"))
}

fn split_at_scale() -> Result<String, String> {
    let f = generate_features(340, 32, 20, 77);
    let a = make_split(&f, 0.2).map_err(|e| e.to_string())?;
    ensure((a.test_ids.len(), a.train_ids.len()) == (68, 272), || {
        format!("{} test / {} train", a.test_ids.len(), a.train_ids.len())
    })?;
    let b = make_split(&f, 0.2).map_err(|e| e.to_string())?;
    ensure(a.to_json_string() == b.to_json_string(), || "two runs differ".into())?;
    let mut r = rng(1002);
    for trial in 0..5 {
        let scaled: Vec<FeatureVector> = f
            .iter()
            .map(|x| {
                let s: f64 = rand::Rng::gen_range(&mut r, 0.001..1000.0);
                FeatureVector { image_id: x.image_id, vector: x.vector.iter().map(|v| v * s).collect() }
            })
            .collect();
        let c = make_split(&scaled, 0.2).map_err(|e| e.to_string())?;
        ensure(c.test_ids == a.test_ids && c.cluster_assignment == a.cluster_assignment, || {
            format!("rescaling {trial} changed the split")
        })?;
    }
    Ok("68 test / 272 train, deterministic, scale-invariant".into())
}

fn clustering_oracle() -> Result<String, String> {
    let mut r = rng(1003);
    for trial in 0..200 {
        let f = random_features(&mut r);
        let k = rand::Rng::gen_range(&mut r, 1..=f.len());
        let (merges, assignment) = ref_single_linkage(&f, k);
        let c = single_linkage_cluster(&f, k).map_err(|e| format!("trial {trial}: {e}"))?;
        let got: Vec<_> = c.merges.iter().map(|m| (m.left, m.right)).collect();
        ensure(got == merges && c.assignment == assignment, || format!("trial {trial}: {got:?} vs {merges:?}"))?;
    }
    Ok("200 trials agree".into())
}

fn selection_optimality() -> Result<String, String> {
    let mut r = rng(1004);
    for case in 0..200 {
        let (images, preds, k) = random_prediction_map(&mut r);
        let want = ref_select(&selection_candidates(&images, &preds), k);
        let refs: Vec<&ImageRecord> = images.iter().collect();
        let got: Vec<u64> = select_next(&refs, &preds, k, Strategy::Uncertainty)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|e| e.image_id)
            .collect();
        ensure(got == want, || format!("case {case}: {got:?} vs {want:?}"))?;
    }
    Ok("200 maps agree".into())
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn learning_curve() -> Result<String, String> {
    let gt = generate_dataset(340, 2024);
    let split = make_split(&generate_features(340, 32, 20, 2025), 0.2).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for strategy in [Strategy::Uncertainty, Strategy::Sequential] {
        let mut cfg =
            ExperimentConfig::new(strategy, split.clone(), DetectorSpec::synthetic(SyntheticParams::default()));
        cfg.rng_seed = 7;
        let whole = tempfile::tempdir().map_err(|e| e.to_string())?;
        let full = run_experiment(&cfg, &gt, whole.path(), RunControl::default()).map_err(|e| e.to_string())?;
        let states: &[RoundState] = &full.states;
        ensure(states.len() == 20, || format!("{strategy}: {} rounds", states.len()))?;

        let map50: Vec<f64> = states.iter().map(|s| s.metrics.map50).collect();
        let rounds: Vec<f64> = (0..map50.len()).map(|r| r as f64).collect();
        let rho = spearman(&rounds, &map50);
        ensure(rho > 0.8, || format!("{strategy}: spearman {rho:.3}, curve {map50:?}"))?;
        let gain = map50[19] - map50[0];
        ensure(gain >= 0.3, || format!("{strategy}: gain {gain:.3} over the first round"))?;
        let gain1 = map50[19] - map50[1];
        ensure(gain1 >= 0.3, || format!("{strategy}: gain {gain1:.3} over round 1"))?;

        for s in states {
            let leaked = s
                .labeled_ids
                .iter()
                .chain(s.selection_trace.iter().map(|e| &e.image_id))
                .find(|id| split.is_test(**id));
            ensure(leaked.is_none(), || format!("{strategy}: round {} leaks image {leaked:?}", s.round))?;
            let label_dir = round_dir(whole.path(), s.round).join("labels");
            for entry in fs::read_dir(&label_dir).map_err(|e| e.to_string())? {
                let name = entry.map_err(|e| e.to_string())?.file_name().to_string_lossy().into_owned();
                let img = gt.images().iter().find(|i| format!("{}.txt", i.stem()) == name);
                ensure(img.is_some_and(|i| !split.is_test(i.id)), || {
                    format!("{strategy}: round {} label file {name} is not a training image", s.round)
                })?;
            }
        }

        let resumed = tempfile::tempdir().map_err(|e| e.to_string())?;
        let first =
            run_experiment(&cfg, &gt, resumed.path(), RunControl { stop_after: Some(9) }).map_err(|e| e.to_string())?;
        ensure(first.states.len() == 10 && !first.complete, || {
            format!("{strategy}: interrupted run kept {}", first.states.len())
        })?;
        let rest = run_experiment(&cfg, &gt, resumed.path(), RunControl::default()).map_err(|e| e.to_string())?;
        ensure(rest.resumed_from == 10, || format!("{strategy}: resumed from {}", rest.resumed_from))?;
        let same = rest.states.len() == states.len() && rest.states.iter().zip(states).all(|(a, b)| a.same_as(b));
        ensure(same, || format!("{strategy}: resumed states differ"))?;
        ensure(read_tree(whole.path()) == read_tree(resumed.path()), || format!("{strategy}: run directories differ"))?;

        notes.push(format!("{strategy} mAP50 {:.3}->{:.3} rho {rho:.3}", map50[0], map50[19]));
    }
    Ok(notes.join("; "))
}

fn merge_fixture() -> Result<(DatasetCOCO, scriptorium::merge::MergeReport, usize, usize), String> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/merge");
    let dirs =
        SourceDirs { pagexml: Some(root.join("pagexml")), mei: Some(root.join("mei")), svg: Some(root.join("svg")) };
    let images = load_image_manifest(&root.join("images.json")).map_err(|e| e.to_string())?;
    let mut pages = BTreeMap::new();
    let (mut parsed, mut skipped) = (0, 0);
    for img in &images {
        let page = load_page_sources(&dirs, img.stem()).map_err(|e| e.to_string())?;
        parsed += page.object_count();
        skipped += page.warnings.len();
        pages.insert(img.id, page);
    }
    let (ds, report) = merge_sources(&pages, images, &MergeConfig::default()).map_err(|e| e.to_string())?;
    Ok((ds, report, parsed, skipped))
}

fn merge_conservation() -> Result<String, String> {
    let (ds, report, parsed, skipped) = merge_fixture()?;
    let fates: Vec<_> = report.pages.iter().flat_map(|p| &p.objects).collect();
    ensure(fates.len() == parsed, || format!("{} fates for {parsed} objects", fates.len()))?;
    let rejected = fates.iter().filter(|f| matches!(f.disposition, Disposition::Rejected { .. })).count();
    let absorbed = fates.iter().filter(|f| matches!(f.disposition, Disposition::Absorbed { .. })).count();
    ensure(fates.len() - rejected - absorbed == ds.annotations().len(), || {
        "emitted objects do not match annotations".into()
    })?;
    ensure((parsed, skipped, absorbed, rejected) == (21, 4, 7, 0), || {
        format!("parsed {parsed}, skipped {skipped}, absorbed {absorbed}, rejected {rejected}")
    })?;
    let stats = dataset_stats(&ds);
    let want: BTreeMap<&str, u64> = [("neume", 5), ("line", 4), ("clef", 2), ("staff", 2), ("discard", 1)].into();
    ensure(stats.nonzero() == want, || format!("per-class {:?}", stats.nonzero()))?;

    let published = [
        ("neume", 2745u64),
        ("line", 2522),
        ("discard", 530),
        ("staff", 301),
        ("clef", 261),
        ("musicDelimiter", 183),
        ("text", 189),
        ("custos", 172),
        ("musicText", 112),
    ];
    let table = CategoryTable::standard();
    for (name, count) in published {
        let id = table.id_of(name).ok_or_else(|| format!("no category {name}"))?;
        ensure(REFERENCE_COUNTS[id as usize] == count, || format!("{name} count {}", REFERENCE_COUNTS[id as usize]))?;
    }
    let total: u64 = published.iter().map(|p| p.1).sum();
    ensure(total == 7015, || format!("class counts sum to {total}"))?;
    Ok(format!("{parsed} objects accounted for, {} annotations, reference counts sum to {total}", stats.total))
}

fn format_goldens() -> Result<String, String> {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/goldens");
    let (ds, _, _, _) = merge_fixture()?;
    let coco = fs::read_to_string(golden.join("merged.json")).map_err(|e| e.to_string())?;
    ensure(ds.to_json_string() == coco, || "COCO output differs from golden".into())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ids: Vec<u64> = ds.image_ids().collect();
    write_labels(&ds, &ids, tmp.path()).map_err(|e| e.to_string())?;
    for img in ds.images() {
        let name = format!("{}.txt", img.stem());
        let got = fs::read(tmp.path().join(&name)).map_err(|e| e.to_string())?;
        let want = fs::read(golden.join("labels").join(&name)).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{name} differs from golden"))?;
    }
    protocol_round_trips(1005, 10_000)?;
    Ok("COCO + 3 label files byte-identical, 10^4 messages each way round-trip".into())
}

fn main() -> ExitCode {
    let checks: [(&str, Duration, Check); 9] = [
        ("schedule reproduction", Duration::from_secs(1), schedule),
        ("metrics oracle equivalence", Duration::from_secs(30), metrics_oracle),
        ("F1 convention", Duration::from_secs(1), f1_convention),
        ("split reproduction at scale", Duration::from_secs(10), split_at_scale),
        ("clustering oracle", Duration::from_secs(30), clustering_oracle),
        ("selection optimality", Duration::from_secs(5), selection_optimality),
        ("end-to-end synthetic learning curve", Duration::from_secs(300), learning_curve),
        ("merge conservation", Duration::from_secs(10), merge_conservation),
        ("format goldens", Duration::from_secs(30), format_goldens),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if took <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {took:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({took:.2?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
