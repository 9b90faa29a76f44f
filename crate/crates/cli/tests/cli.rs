use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusionnas::config::RunConfig;
use fusionnas::genotype::Genotype;
use fusionnas::search::{evaluate_genotype, parse_ablation_csv};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn quick() -> PathBuf {
    repo().join("configs/quick.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionnas"))
        .args(args)
        .env_remove("FUSIONNAS_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn search(dir: &Path, seed: &str) -> String {
    ok(&["search", "--config", quick().to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", seed])
        .trim()
        .to_string()
}

#[test]
fn search_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let digest = search(dir.path(), "3");
    for name in ["genotype.json", "genotype.dot", "search_log.ndjson", "checkpoint.json", "search_curve.csv", "search_curve.svg", "run_config.toml"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let g = Genotype::from_json(&fs::read_to_string(dir.path().join("genotype.json")).unwrap()).unwrap();
    assert_eq!(g.digest(), digest);
    let log = fs::read_to_string(dir.path().join("search_log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let saved = RunConfig::load(&dir.path().join("run_config.toml")).unwrap();
    assert_eq!(saved.seed, 3);
}

#[test]
fn equal_seeds_give_equal_digests() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(search(a.path(), "5"), search(b.path(), "5"));
}

#[test]
fn resuming_a_finished_search_keeps_the_genotype() {
    let dir = tempfile::tempdir().unwrap();
    let digest = search(dir.path(), "1");
    let again = ok(&["search", "--config", quick().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "1", "--resume"]);
    assert_eq!(again.trim(), digest);
}

#[test]
fn eval_matches_a_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    search(dir.path(), "0");
    let genotype = dir.path().join("genotype.json");
    let stdout = ok(&["eval", "--config", quick().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--genotype", genotype.to_str().unwrap()]);
    let printed: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();

    let cfg = RunConfig::load(&quick()).unwrap();
    let data = cfg.load_datasets::<f64>(&repo().join("configs")).unwrap().prepare(cfg.space.length).unwrap();
    let g = Genotype::from_json(&fs::read_to_string(&genotype).unwrap()).unwrap();
    let direct = evaluate_genotype(&g, &data, &cfg.train_config()).unwrap();
    assert_eq!(printed["test_metric"].as_f64().unwrap(), direct.test_metric);
    assert_eq!(printed["genotype_digest"].as_str().unwrap(), g.digest());
    let params = printed["param_count"].as_u64().unwrap() as usize;
    assert_eq!(params, g.analytic_param_count(&[6, 6, 6], 3));
    assert!(dir.path().join("eval.json").is_file());
}

#[test]
fn ablate_writes_a_parsable_table() {
    let dir = tempfile::tempdir().unwrap();
    search(dir.path(), "0");
    let genotype = dir.path().join("genotype.json");
    ok(&[
        "ablate",
        "--config",
        quick().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--genotype",
        genotype.to_str().unwrap(),
        "--kinds",
        "random_selection,late_fusion,fixed_sum",
    ]);
    let rows = parse_ablation_csv(&fs::read_to_string(dir.path().join("ablation.csv")).unwrap()).unwrap();
    let kinds: Vec<&str> = rows.iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds, ["searched", "random_selection", "late_fusion", "fixed_sum"]);
    assert!(rows.iter().all(|r| r.metrics.len() == 5));
}

#[test]
fn viz_is_deterministic() {
    let fixture = repo().join("crates/core/tests/fixtures/ntu_genotype.json");
    let dot = ok(&["viz", "--genotype", fixture.to_str().unwrap()]);
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("C2_S2"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.dot");
    ok(&["viz", "--genotype", fixture.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(path).unwrap(), dot);
}

#[test]
fn config_errors_name_the_field_and_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(quick()).unwrap();
    for (from, to, field) in [
        ("channels = 4", "channels = \"four\"", "space.channels"),
        ("planted_pair = [\"A_2\", \"B_1\"]", "planted_pair = [\"A_9\", \"B_1\"]", "task.planted_pair[0]"),
        ("epochs = 2", "epochs = 2\nbogus = 1", "train.bogus"),
    ] {
        let path = dir.path().join("bad.toml");
        fs::write(&path, text.replacen(from, to, 1)).unwrap();
        let out = run(&["search", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{field}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(field), "{field}: {stderr}");
    }
}

#[test]
fn eval_rejects_a_genotype_from_another_space() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = repo().join("crates/core/tests/fixtures/ntu_genotype.json");
    let out = run(&["eval", "--config", quick().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--genotype", fixture.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Video_1"));
}
