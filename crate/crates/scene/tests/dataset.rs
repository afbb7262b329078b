use gonogo_scene::dataset::{read_dataset, read_manifest, write_dataset};
use gonogo_scene::{auto_label, simulate_run, LabelingConfig, SimOptions, World};

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let trace = simulate_run(&World::random(2, 30, 0.2), 30, &SimOptions::default()).unwrap();
    let frames = auto_label(&trace, 9, &LabelingConfig::default());
    write_dataset(dir.path(), &frames).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, frames);
    let recs = read_manifest(dir.path()).unwrap();
    assert_eq!(recs[0].path, "images/000000.ppm");
    assert_eq!(recs[29].index, 29);
}

#[test]
fn bad_manifest_line_is_located() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.jsonl"), "{\"path\":1}\n").unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("manifest.jsonl:1"), "{err}");
}
