use std::path::Path;

use mps_core::oracle::SyntheticOracleSpec;
use mps_core::pipeline::{
    make_report, run_extraction, ModelEntry, RecordDocument, RecordStore, ReportOptions, RunConfig, RunOptions,
};
use mps_core::{PixelMask, SearchConfig};

fn write_images(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = image::GrayImage::from_fn(12, 12, |x, y| image::Luma([50 + ((x * 17 + y * 5 + i as u32 * 41) % 200) as u8]));
        img.save(dir.join(format!("img{i}.png"))).unwrap();
    }
}

fn config(root: &Path) -> RunConfig {
    write_images(&root.join("images"), 3);
    let mut cfg = RunConfig::new(
        vec![
            ModelEntry::synthetic("corner", "keyed", SyntheticOracleSpec::pixel_key(12, 12, [(0, 0), (0, 1)])),
            ModelEntry::synthetic("centre", "keyed", SyntheticOracleSpec::pixel_key(12, 12, [(5, 5), (6, 6), (5, 6)])),
        ],
        root.join("images"),
        root.join("run"),
    );
    cfg.search = SearchConfig { iterations: 4, mutant_budget: 800, min_side: 1, seed: 9, ..SearchConfig::default() };
    cfg
}

#[test]
fn run_persists_every_record_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let first = run_extraction(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(first.records.len(), 6);
    assert_eq!(first.computed, 6);
    assert!(first.oracle_calls > 0);
    let ids: Vec<(&str, &str)> = first.records.iter().map(|r| (r.model_id.as_str(), r.image_id.as_str())).collect();
    assert_eq!(
        ids,
        [("centre", "img0"), ("centre", "img1"), ("centre", "img2"), ("corner", "img0"), ("corner", "img1"), ("corner", "img2")]
    );

    let run = tmp.path().join("run");
    for r in &first.records {
        let dir = run.join("records").join(&r.model_id);
        let doc: RecordDocument =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{}.json", r.image_id))).unwrap()).unwrap();
        assert_eq!(doc.config_hash, first.config_hash);
        let mask = PixelMask::load_png(&dir.join(&doc.mask_path)).unwrap();
        assert_eq!(mask, r.mask);
        assert_eq!(mask.area() as f64 / 144.0, r.area_ratio);
    }
    // the keyed models need exactly their key pixels
    let corner = first.records.iter().find(|r| r.model_id == "corner").unwrap();
    assert!(corner.mask.get(0, 0) && corner.mask.get(0, 1));
    let csv = std::fs::read_to_string(run.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let second = run_extraction(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(second.computed, 0);
    assert_eq!(second.reused, 6);
    assert_eq!(second.oracle_calls, 0);
    assert_eq!(second.records, first.records);
    assert_eq!(std::fs::read_to_string(run.join("records.csv")).unwrap(), csv);

    let forced = run_extraction(&cfg, &RunOptions { force: true, ..RunOptions::default() }).unwrap();
    assert_eq!(forced.computed, 6);

    let mut changed = cfg.clone();
    changed.search.seed = 10;
    let rerun = run_extraction(&changed, &RunOptions::default()).unwrap();
    assert_eq!(rerun.computed, 6);
    assert_ne!(rerun.config_hash, first.config_hash);
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.output = tmp.path().join("one");
    run_extraction(&cfg, &RunOptions { workers: Some(1), force: false }).unwrap();
    let mut cfg8 = cfg.clone();
    cfg8.output = tmp.path().join("eight");
    run_extraction(&cfg8, &RunOptions { workers: Some(8), force: false }).unwrap();
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("one", "records.csv"), read("eight", "records.csv"));
    assert_eq!(read("one", "records/corner/img1.png"), read("eight", "records/corner/img1.png"));
}

#[test]
fn unreadable_images_are_skipped_and_failed_models_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    std::fs::write(tmp.path().join("images/broken.png"), b"nope").unwrap();
    let missing = tmp.path().join("missing.json");
    cfg.models.push(ModelEntry::Manifest { path: missing });
    let summary = run_extraction(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(summary.skipped_images, 1);
    assert_eq!(summary.records.len(), 6);
    assert_eq!(summary.failed_models.len(), 1);
    let store = RecordStore::open(&cfg.output).unwrap();
    assert!(store.models.iter().any(|m| m.error.is_some()));
}

#[test]
fn report_from_a_run_has_table_and_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    std::fs::write(tmp.path().join("labels.csv"), "img0,1\nimg1,1\nimg2,0\n").unwrap();
    cfg.labels = Some(tmp.path().join("labels.csv"));
    cfg.models.push(ModelEntry::synthetic(
        "band",
        "region",
        SyntheticOracleSpec::threshold_region(12, 12, (0..12).map(|c| (3, c)), 5),
    ));
    run_extraction(&cfg, &RunOptions::default()).unwrap();
    let store = RecordStore::open(&cfg.output).unwrap();
    let report = make_report(&store, &ReportOptions::default()).unwrap();
    assert_eq!(report.area_table.len(), 3);
    let corner = report.area_table.iter().find(|r| r.model_id == "corner").unwrap();
    assert!((corner.accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let dice = report.dice.as_ref().unwrap();
    assert_eq!(dice.labels.len(), 2);
    for (i, row) in dice.values.iter().enumerate() {
        assert_eq!(row[i], 1.0);
    }
    let out = tmp.path().join("report");
    report.write_to(&out).unwrap();
    assert!(std::fs::read_to_string(out.join("area.csv")).unwrap().starts_with("Model,Area,Correct,Incorrect,Mean,Accuracy\n"));
}
