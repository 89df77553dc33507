//! The final recipe trained at several model sizes.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use tbqn_core::agent::{run_training, MetricsLog, METRICS_HEADER};
use tbqn_core::qnet::QNetworkSpec;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::train::write_metrics;

pub const VARIANTS_FILE: &str = "variants.csv";

/// History horizon, model dimension, feed-forward dimension, layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub horizon: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
}

pub const VARIANTS: [Variant; 5] = [
    Variant { horizon: 5, model_dim: 64, ff_dim: 256, layers: 3 },
    Variant { horizon: 5, model_dim: 64, ff_dim: 256, layers: 6 },
    Variant { horizon: 3, model_dim: 64, ff_dim: 256, layers: 3 },
    Variant { horizon: 7, model_dim: 64, ff_dim: 256, layers: 3 },
    Variant { horizon: 5, model_dim: 128, ff_dim: 512, layers: 3 },
];

impl Variant {
    pub fn tag(&self) -> String {
        format!("h{}-d{}-ff{}-l{}", self.horizon, self.model_dim, self.ff_dim, self.layers)
    }

    pub fn apply(&self, net: &QNetworkSpec) -> QNetworkSpec {
        QNetworkSpec {
            history_horizon: self.horizon,
            model_dim: self.model_dim,
            ff_dim: self.ff_dim,
            num_layers: self.layers,
            ..net.clone()
        }
    }
}

#[derive(Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub result: CliResult<MetricsLog>,
}

/// Trains every variant with every seed on a pool of `workers` threads. Each run writes
/// `<out>/<tag>-seed<seed>/metrics.csv`; failures are kept per run and do not stop the others.
pub fn run_variants(base: &RunConfig, seeds: &[u64], workers: usize) -> CliResult<Vec<VariantRun>> {
    let jobs: Vec<(Variant, u64)> = VARIANTS
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (*v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<VariantRun> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(variant, seed)| VariantRun {
                variant,
                seed,
                result: run_one(base, variant, seed),
            })
            .collect()
    });
    write_combined(&base.out.join(VARIANTS_FILE), &runs)?;
    Ok(runs)
}

pub fn run_dir(base: &RunConfig, variant: Variant, seed: u64) -> PathBuf {
    base.out.join(format!("{}-seed{seed}", variant.tag()))
}

fn run_one(base: &RunConfig, variant: Variant, seed: u64) -> CliResult<MetricsLog> {
    let mut cfg = base.clone();
    cfg.net = variant.apply(&base.net);
    cfg.agent.seed = seed;
    cfg.out = run_dir(base, variant, seed);
    cfg.validate()?;
    cfg.write_snapshot(&cfg.out)?;
    let log = run_training(cfg.env, &cfg.agent, &cfg.net, cfg.total_steps, cfg.eval_every)?;
    write_metrics(&cfg.out, &log)?;
    Ok(log)
}

fn write_combined(path: &std::path::Path, runs: &[VariantRun]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut header = vec!["variant", "seed"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for run in runs {
        let Ok(log) = &run.result else { continue };
        for r in &log.rows {
            w.write_record([
                run.variant.tag(),
                run.seed.to_string(),
                r.step.to_string(),
                r.avg_return.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.epsilon.to_string(),
                r.lr.to_string(),
                r.wall_ms.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
