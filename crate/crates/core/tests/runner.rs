//! Config parsing, shipped configs and end-to-end runs.

use std::fs;
use std::path::{Path, PathBuf};

use fkpath_core::config::{builtin_catalog, ExperimentConfig};
use fkpath_core::runner::{run_config, EXIT_NUMERIC, EXIT_SCHEMA};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fkpath-runner-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn every_shipped_config_validates() {
    let mut count = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 10);
}

#[test]
fn catalog_fragments_form_valid_configs() {
    for entry in builtin_catalog() {
        let src = format!("experiment = \"simulate\"\n{}\n[params]\nn = 3\nseed = 1\n", entry.fragment);
        ExperimentConfig::parse(&src).unwrap_or_else(|e| panic!("{}: {e}", entry.name));
        assert!(entry.potential_sup > 0.0);
    }
}

#[test]
fn oracle_config_writes_json() {
    let cfg = ExperimentConfig::load(&configs_dir().join("oracle_m2.toml")).unwrap();
    let dir = scratch("oracle");
    let report = run_config(&cfg, Some(&dir)).unwrap();
    assert!(report.pass());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("oracle.json")).unwrap()).unwrap();
    for key in ["gamma", "eta", "z", "t", "model_hash"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!((json["z"].as_f64().unwrap() - 0.822_263_423_901_809_5).abs() < 1e-9);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], serde_json::json!(true));
    fs::remove_dir_all(dir).unwrap();
}

const SMALL_SIM: &str = r#"
experiment = "simulate"
[model]
kind = "ring4"
initial = "uniform"
[params]
n = 4
t = 0.5
replicas = 300
seed = 99
threads = THREADS
"#;

#[test]
fn identical_seed_gives_identical_csv() {
    let run = |threads: usize, tag: &str| {
        let cfg = ExperimentConfig::parse(&SMALL_SIM.replace("THREADS", &threads.to_string())).unwrap();
        let dir = scratch(tag);
        run_config(&cfg, Some(&dir)).unwrap();
        let csv = fs::read(dir.join("replicas.csv")).unwrap();
        fs::remove_dir_all(dir).unwrap();
        csv
    };
    let a = run(1, "det-a");
    assert!(a.starts_with(b"# fkpath-schema v1\nreplica_id,seed,Z_weight,"));
    assert_eq!(a, run(1, "det-b"));
    assert_eq!(a, run(4, "det-c"));
}

#[test]
fn wrong_model_for_experiment_is_a_schema_error() {
    let src = "experiment = \"jarzynski\"\n[model]\nkind = \"m2\"\n[params]\nn = 3\nseed = 1\n";
    let cfg = ExperimentConfig::parse(src).unwrap();
    let err = run_config(&cfg, Some(&scratch("wrong"))).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_SCHEMA);
}

#[test]
fn unresolvable_horizon_is_a_numeric_failure() {
    let src = "experiment = \"oracle\"\n[model]\nkind = \"m2\"\n[params]\nt = 1e300\nseed = 1\n";
    let cfg = ExperimentConfig::parse(src).unwrap();
    let err = run_config(&cfg, Some(&scratch("numeric"))).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_NUMERIC, "{err}");
}
