//! Shared fixtures for the solver benchmarks.

use std::path::{Path, PathBuf};

use cylscat::scenario::config::ScenarioConfig;
use cylscat::scenario::Scenario;

/// The repository's scenario corpus.
pub fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Load and build a corpus scenario by file name.
pub fn scenario(name: &str) -> (ScenarioConfig, Scenario) {
    let dir = corpus();
    let cfg = ScenarioConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let s = cfg.build(&dir).unwrap_or_else(|e| panic!("{name}: {e}"));
    (cfg, s)
}
