use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use symcast_cli::config::CliConfig;
use symcast_cli::{cmd_importance, cmd_synth, cmd_train, GlobalOpts};
use symcast_core::orchestrate::FeatureCount;

const SYNTH: &str = "[paths]\nout = \"data\"\n\n[synth]\nn_states = 3\nn_dates = 40\nn_features = 12\nn_informative = 3\nseed = 4\n";

fn train_config(granularity: &str) -> String {
    format!(
        "[paths]\nsurvey = \"data/survey.csv\"\ncases = \"data/cases.csv\"\nout = \"{granularity}\"\n\n\
         [run]\nfamily = \"gbdt\"\ngranularity = \"{granularity}\"\nfeature_k = 6\n\n\
         [run.params.tree]\nn_rounds = 20\n"
    )
}

fn setup(dir: &Path) {
    fs::write(dir.join("synth.toml"), SYNTH).unwrap();
    fs::write(dir.join("local.toml"), train_config("local")).unwrap();
    fs::write(dir.join("global.toml"), train_config("global")).unwrap();
    cmd_synth(&opts(dir, "synth.toml")).unwrap();
}

fn opts(dir: &Path, name: &str) -> GlobalOpts {
    GlobalOpts {
        config: Some(dir.join(name)),
        ..GlobalOpts::default()
    }
}

fn count(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    setup(a.path());
    setup(b.path());
    for f in ["survey.csv", "cases.csv", "ground_truth.json"] {
        assert_eq!(
            fs::read(a.path().join("data").join(f)).unwrap(),
            fs::read(b.path().join("data").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn local_and_global_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    cmd_train(&opts(dir.path(), "local.toml")).unwrap();
    cmd_train(&opts(dir.path(), "global.toml")).unwrap();

    let local = dir.path().join("local");
    assert_eq!(count(&local.join("models"), "json"), 3);
    assert_eq!(count(&local.join("rankings"), "csv"), 3);
    assert_eq!(count(&local.join("predictions"), "csv"), 1);
    let global = dir.path().join("global");
    assert_eq!(count(&global.join("models"), "json"), 1);
    assert!(global.join("models/global.json").is_file());

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(local.join("manifest_train.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"]["survey"]["sha256"].as_str().unwrap().len(), 64);

    // Global suites have a single ranking, so no frequency table.
    cmd_importance(&global, &[5, 15], None).unwrap();
    assert!(!global.join("frequency.csv").exists());
    assert!(global.join("importance_top5.csv").is_file());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(global.join("manifest_importance.json")).unwrap()).unwrap();
    assert!(manifest["notice"].as_str().unwrap().starts_with("global suite"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let bin = env!("CARGO_BIN_EXE_symcast");
    let run = |args: &[&str]| Command::new(bin).args(args).current_dir(dir.path()).output().unwrap();

    let ok = run(&["--config", "global.toml", "--quiet", "train"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(run(&["evaluate", "missing_suite"]).status.code(), Some(1));

    fs::write(dir.path().join("bad.toml"), "[synth]\nnoise_sd = -1.0\n").unwrap();
    assert_eq!(run(&["--config", "bad.toml", "synth"]).status.code(), Some(2));
    fs::write(dir.path().join("typo.toml"), "[run]\nfamly = \"xgb\"\n").unwrap();
    assert_eq!(run(&["--config", "typo.toml", "train"]).status.code(), Some(2));
}

proptest! {
    #[test]
    fn config_round_trips(
        k in prop::option::of(1usize..40),
        seeds in prop::collection::vec(0u64..1000, 1..5),
        fraction in 0.05f64..0.95,
    ) {
        let mut cfg = CliConfig::default();
        cfg.run.feature_k = k.map_or(FeatureCount::All, FeatureCount::Top);
        cfg.run.seeds = seeds;
        cfg.run.train_fraction = fraction;
        prop_assert_eq!(CliConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
