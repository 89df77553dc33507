use std::fmt;
use std::path::Path;

use tbqn_core::agent::evaluate_policy;
use tbqn_core::envs::EnvName;

use crate::checkpoint;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub env: EnvName,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation; 0 for a single episode.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalSummary {
    pub fn from_returns(env: EnvName, returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            env,
            mean,
            std: var.sqrt(),
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            returns,
        }
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "env={} episodes={} mean={} std={} min={} max={}",
            self.env,
            self.returns.len(),
            self.mean,
            self.std,
            self.min,
            self.max
        )
    }
}

/// Greedy evaluation of a saved network. Environment and seed default to the ones stored
/// with the checkpoint, which reproduces the training-time evaluation.
pub fn run_eval(dir: &Path, env: Option<EnvName>, episodes: usize, seed: Option<u64>) -> CliResult<EvalSummary> {
    let (net, meta) = checkpoint::load(dir)?;
    let env = env.unwrap_or(meta.env);
    let returns = evaluate_policy(&net, env, episodes, meta.env_normalize, seed.unwrap_or(meta.seed))?;
    Ok(EvalSummary::from_returns(env, returns))
}
