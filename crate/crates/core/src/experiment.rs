//! Runs described by a [`RunConfig`].

use crate::config::RunConfig;
use crate::error::Result;
use crate::hf::TestCase;
use crate::pipeline::{benchmark, run_offline, run_offline_with_snapshots, BenchmarkReport, OfflineArtifacts, TestSet};

/// Offline phase; imported snapshots replace the HF solves.
pub fn offline(cfg: &RunConfig) -> Result<OfflineArtifacts> {
    let test = cfg.test_case()?;
    let offline_cfg = cfg.offline_config(&test);
    match cfg.import_snapshots(&test)? {
        Some((samples, snapshots)) => run_offline_with_snapshots(&test, samples, snapshots, &offline_cfg),
        None => {
            let samples = cfg.layout_samples(&test)?.expect("validated: samples or snapshots");
            run_offline(&test, samples, &offline_cfg)
        }
    }
}

/// `test_size` independent uniform parameters with HF solutions.
pub fn test_set(cfg: &RunConfig, test: &TestCase) -> Result<TestSet> {
    TestSet::random(test, cfg.test_size, cfg.test_seed())
}

/// Test set plus the configured sweep against existing artifacts.
pub fn evaluate(cfg: &RunConfig, art: &OfflineArtifacts) -> Result<BenchmarkReport> {
    let set = test_set(cfg, &art.test)?;
    benchmark(art, &set, &cfg.sweep())
}
