use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use scriptorium::merge::{
    dataset_stats, load_image_manifest, load_page_sources, merge_sources, Disposition, MergeConfig, MergeReport,
    SourceDirs,
};
use scriptorium::yolo::write_labels;
use scriptorium::DatasetCOCO;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/merge")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/goldens")
}

fn merged() -> (DatasetCOCO, MergeReport, usize, usize) {
    let root = fixture();
    let dirs =
        SourceDirs { pagexml: Some(root.join("pagexml")), mei: Some(root.join("mei")), svg: Some(root.join("svg")) };
    let images = load_image_manifest(&root.join("images.json")).unwrap();
    let mut pages = BTreeMap::new();
    let mut parsed = 0;
    let mut skipped = 0;
    for img in &images {
        let page = load_page_sources(&dirs, img.stem()).unwrap();
        parsed += page.object_count();
        skipped += page.warnings.len();
        pages.insert(img.id, page);
    }
    let (ds, report) = merge_sources(&pages, images, &MergeConfig::default()).unwrap();
    (ds, report, parsed, skipped)
}

#[test]
fn class_totals() {
    let (ds, report, _, _) = merged();
    let stats = dataset_stats(&ds);
    let want: BTreeMap<&str, u64> = [("neume", 5), ("line", 4), ("clef", 2), ("staff", 2), ("discard", 1)].into();
    assert_eq!(stats.nonzero(), want);
    assert_eq!(stats.total, 14);
    assert_eq!(report.annotation_count, 14);
    assert_eq!(stats.images, 3);
}

#[test]
fn every_object_is_accounted_for() {
    let (ds, report, parsed, skipped) = merged();
    // two undersized regions, one zero-width zone, one zero-width rect
    assert_eq!(skipped, 4);
    assert_eq!(parsed, 21);
    let fates: usize = report.pages.iter().map(|p| p.objects.len()).sum();
    assert_eq!(fates, parsed);
    let mut emitted = 0;
    let mut absorbed = 0;
    for page in &report.pages {
        for fate in &page.objects {
            match &fate.disposition {
                Disposition::Emitted { annotation_id } => {
                    emitted += 1;
                    assert!(ds.annotations().iter().any(|a| a.id == *annotation_id));
                }
                Disposition::Absorbed { annotation_id } => {
                    absorbed += 1;
                    assert!(ds.annotations().iter().any(|a| a.id == *annotation_id));
                }
                Disposition::Rejected { reason } => panic!("{} rejected: {reason}", fate.native_id),
            }
        }
    }
    assert_eq!((emitted, absorbed), (14, 7));
    assert_eq!(report.warning_count, skipped);
}

#[test]
fn pairings() {
    let (_, report, _, _) = merged();
    let svg_pairs: Vec<Vec<(&str, &str)>> = report
        .pages
        .iter()
        .map(|p| p.svg_mei.pairs.iter().map(|m| (m.left.as_str(), m.right.as_str())).collect())
        .collect();
    let flat: usize = svg_pairs.iter().map(Vec::len).sum();
    assert_eq!(flat, 6);
    assert_eq!(report.pages[0].staff.pairs.len(), 1);
    assert!(report.pages[1].staff.pairs.is_empty());
}

#[test]
fn merged_coco_matches_golden() {
    let (ds, _, _, _) = merged();
    let path = golden_dir().join("merged.json");
    let text = ds.to_json_string();
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, &text).unwrap();
    }
    assert_eq!(text, fs::read_to_string(&path).unwrap());
    let (back, _) = DatasetCOCO::from_json_str(&text).unwrap();
    assert_eq!(back.to_json_string(), text);
}

#[test]
fn yolo_labels_match_golden() {
    let (ds, _, _, _) = merged();
    let tmp = tempfile::tempdir().unwrap();
    let ids: Vec<u64> = ds.image_ids().collect();
    assert_eq!(write_labels(&ds, &ids, tmp.path()).unwrap(), 3);
    let golden = golden_dir().join("labels");
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for img in ds.images() {
            let name = format!("{}.txt", img.stem());
            fs::copy(tmp.path().join(&name), golden.join(&name)).unwrap();
        }
    }
    for img in ds.images() {
        let name = format!("{}.txt", img.stem());
        assert_eq!(fs::read(tmp.path().join(&name)).unwrap(), fs::read(golden.join(&name)).unwrap(), "{name}");
    }
}
