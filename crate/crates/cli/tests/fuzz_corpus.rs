//! Replays the checked-in config and run-manifest fuzz seeds.

use std::path::Path;

use cotrain_cli::config::ExperimentConfig;
use cotrain_cli::manifest::RunManifest;

fn seeds(target: &str) -> Vec<String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn config_seeds_parse() {
    for s in seeds("config") {
        ExperimentConfig::parse(&s).unwrap();
    }
}

#[test]
fn run_manifest_seeds_parse() {
    for s in seeds("run_manifest") {
        let m = RunManifest::parse(&s).unwrap();
        assert!(!m.stages.is_empty());
    }
}
