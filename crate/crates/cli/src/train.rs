use std::fs;
use std::path::{Path, PathBuf};

use tbqn_core::agent::{train, MetricsLog, TrainOptions};

use crate::checkpoint::{self, CheckpointMeta, BEST_DIR, FINAL_DIR};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub log: MetricsLog,
}

impl TrainSummary {
    /// Divergence is reported after all outputs are written.
    pub fn into_result(self) -> CliResult<Self> {
        match &self.log.diverged {
            Some(d) => Err(CliError::Diverged(format!(
                "env step {}, gradient step {}: {}",
                d.env_step, d.grad_step, d.reason
            ))),
            None => Ok(self),
        }
    }
}

pub fn write_metrics(dir: &Path, log: &MetricsLog) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let path = dir.join(METRICS_FILE);
    fs::write(&path, log.to_csv()).map_err(|e| CliError::io(path.display(), e))
}

/// Trains one run into `cfg.out`: resolved config, metrics, best and final checkpoints.
pub fn run_train(cfg: &RunConfig) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let out = cfg.out.clone();
    cfg.write_snapshot(&out)?;
    let meta = |step, avg_return| CheckpointMeta {
        env: cfg.env,
        seed: cfg.agent.seed,
        env_normalize: cfg.agent.env_normalize,
        step,
        avg_return,
    };

    let mut best = f64::NEG_INFINITY;
    let mut save_err = None;
    let result = train(
        cfg.env,
        &cfg.agent,
        &cfg.net,
        TrainOptions::new(cfg.total_steps, cfg.eval_every),
        |row, agent| {
            if row.avg_return > best {
                best = row.avg_return;
                if let Err(e) = checkpoint::save(&out.join(BEST_DIR), agent.online(), &meta(row.step, row.avg_return)) {
                    save_err = Some(e);
                }
            }
            Ok(())
        },
    );
    let (agent, log) = result?;
    if let Some(e) = save_err {
        return Err(e);
    }
    write_metrics(&out, &log)?;
    // NaN when the run stopped between evaluations
    let avg = match log.rows.last() {
        Some(r) if r.step == log.steps_trained => r.avg_return,
        _ => f64::NAN,
    };
    checkpoint::save(&out.join(FINAL_DIR), agent.online(), &meta(log.steps_trained, avg))?;
    Ok(TrainSummary { out, log })
}
