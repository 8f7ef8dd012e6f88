//! Experiment plumbing: configuration, single runs, seed sweeps, aggregation
//! and plots.

pub mod checkpoint;
pub mod config;
pub mod plot;
pub mod run;
pub mod summary;

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mhng::Scenario;
pub use config::{Condition, RunConfig};
pub use run::{run_experiment, simulate, RunOutcome};
pub use summary::{aggregate, RunResult, SweepSummary};

/// Seeds used when a sweep does not name any.
pub const DEFAULT_SEEDS: std::ops::Range<u64> = 0..10;

/// Every (condition, scenario, seed) combination, condition-major.
pub fn sweep_configs(base: &RunConfig, conditions: &[Condition], scenarios: &[Scenario], seeds: &[u64]) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &c in conditions {
        for &s in scenarios {
            for &seed in seeds {
                let mut cfg = base.with_condition(c);
                cfg.scenario = s;
                cfg.seed = seed;
                out.push(cfg);
            }
        }
    }
    out
}

/// Runs configs on up to `workers` threads. With `out` set, each run's
/// artifacts go to its own directory below it. Results keep input order.
pub fn run_sweep(configs: &[RunConfig], workers: usize, out: Option<&Path>) -> Result<Vec<RunResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let outcome = match out {
                    Some(root) => run_experiment(cfg, &run::run_dir(root, cfg))?,
                    None => simulate(cfg)?,
                };
                Ok(RunResult {
                    seed: cfg.seed,
                    condition: cfg.condition.clone(),
                    scenario: cfg.scenario.to_string(),
                    metrics: outcome.final_metrics().clone(),
                })
            })
            .collect()
    })
}
