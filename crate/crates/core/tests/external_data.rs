use std::fs;

use fusionnas::feature_adapter::{AxisRole, FeatureSpec};
use fusionnas::metrics::accuracy;
use fusionnas::network::{Labels, TaskMode};
use fusionnas::tasks::{export_manifest, generate, load_external, Manifest, PlantedTaskSpec};
use fusionnas::FusionError;

fn small_spec() -> PlantedTaskSpec {
    PlantedTaskSpec {
        features: vec![
            FeatureSpec::sequence("A", 0, 3, Some(2)),
            FeatureSpec::new("A", 1, vec![2, 2, 3], vec![AxisRole::Channel, AxisRole::Temporal, AxisRole::Spatial]),
            FeatureSpec::sequence("B", 0, 4, None),
        ],
        planted_pair: (0, 2),
        n_classes: 3,
        n_train: 12,
        n_val: 5,
        n_test: 4,
        teacher_channels: 3,
        teacher_length: 2,
        ..PlantedTaskSpec::default()
    }
}

#[test]
fn exported_datasets_load_back_identically() {
    for mode in [TaskMode::Multiclass, TaskMode::Multilabel] {
        let data = generate::<f64>(&PlantedTaskSpec { mode, ..small_spec() }).unwrap().datasets;
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_manifest(&data, dir.path()).unwrap();
        assert_eq!(load_external::<f64>(&manifest).unwrap(), data);
    }
}

#[test]
fn missing_file_is_named() {
    let data = generate::<f64>(&small_spec()).unwrap().datasets;
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_manifest(&data, dir.path()).unwrap();
    fs::remove_file(dir.path().join("val/000003/A_2.bin")).unwrap();
    let err = load_external::<f64>(&manifest).unwrap_err().to_string();
    assert!(err.contains("val/000003/A_2.bin"), "{err}");
}

#[test]
fn checksum_mismatch_is_rejected() {
    let data = generate::<f64>(&small_spec()).unwrap().datasets;
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = export_manifest(&data, dir.path()).unwrap();
    let mut manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest.samples[2].files[1].sha256 = "0".repeat(64);
    fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
    match load_external::<f64>(&manifest_path) {
        Err(FusionError::Dataset(m)) => assert!(m.contains("checksum"), "{m}"),
        other => panic!("expected a checksum error, got {other:?}"),
    }
}

#[test]
fn tampered_file_contents_are_rejected() {
    let data = generate::<f64>(&small_spec()).unwrap().datasets;
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_manifest(&data, dir.path()).unwrap();
    let path = dir.path().join("train/000000/B_1.bin");
    let mut bytes = fs::read(&path).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    fs::write(&path, bytes).unwrap();
    assert!(load_external::<f64>(&manifest).is_err());
}

#[test]
fn teacher_accuracy_under_label_noise_is_near_bayes() {
    let spec = PlantedTaskSpec {
        n_classes: 2,
        label_noise: 0.1,
        n_train: 10,
        n_val: 10,
        n_test: 5000,
        seed: 12,
        ..PlantedTaskSpec::default()
    };
    let task = generate::<f64>(&spec).unwrap();
    let d = &task.datasets;
    let Labels::Multiclass(pred) = task.teacher.predict(&d.features, &d.test).unwrap() else { panic!() };
    let Labels::Multiclass(truth) = &d.test.labels else { panic!() };
    let acc = accuracy(&pred, truth);
    assert!((acc - 0.9).abs() <= 0.02, "{acc}");
}
