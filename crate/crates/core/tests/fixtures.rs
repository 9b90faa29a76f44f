use std::path::{Path, PathBuf};

use fusionnas::config::RunConfig;
use fusionnas::genotype::Genotype;
use fusionnas::ops::PrimitiveOpKind;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ntu_genotype() -> Genotype {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ntu_genotype.json")).unwrap();
    Genotype::from_json(&text).unwrap()
}

#[test]
fn ntu_shaped_genotype_validates_against_its_config() {
    let g = ntu_genotype();
    let cfg = RunConfig::load(&repo().join("configs/ntu_top1.toml")).unwrap();
    assert_eq!(g.config, cfg.search_space().genotype_config());
    assert_eq!((g.config.num_cells, g.config.num_steps), (2, 2));
    let labels: Vec<String> = (0..8).map(|i| g.node_label(i)).collect();
    assert_eq!(labels[..4], ["Video_1", "Video_2", "Video_3", "Video_4"]);
    assert_eq!(labels[4..], ["Skeleton_1", "Skeleton_2", "Skeleton_3", "Skeleton_4"]);
    assert_eq!(g.used_features(), vec![2, 3, 7]);
}

#[test]
fn ntu_shaped_genotype_renders_every_step() {
    let dot = ntu_genotype().to_dot();
    for node in ["C1_S1", "C1_S2", "C2_S1", "C2_S2", "Video_4", "Skeleton_4"] {
        assert!(dot.contains(node), "{node} missing");
    }
    assert_eq!(dot, ntu_genotype().to_dot());
}

#[test]
fn ntu_shaped_parameter_count() {
    let g = ntu_genotype();
    let c = 128;
    let raw = [256, 512, 1024, 2048, 32, 64, 128, 256];
    // adapters for Video_3, Video_4, Skeleton_4; ConcatFC, LinearGLU; head over 60 classes
    let adapters = (1024 * c + c) + (2048 * c + c) + (256 * c + c);
    let ops = (2 * c * c + c) + 2 * c * c;
    assert_eq!(g.analytic_param_count(&raw, 60), adapters + ops + c * 60 + 60);
    assert_eq!(g.cells[0].steps[0].op, PrimitiveOpKind::ConcatFc);
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["default", "quick", "ntu_top1"] {
        let cfg = RunConfig::load(&repo().join(format!("configs/{name}.toml"))).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn default_config_file_matches_the_built_in_default() {
    assert_eq!(RunConfig::load(&repo().join("configs/default.toml")).unwrap(), RunConfig::default());
}
