//! Network checkpoints with the run metadata needed to evaluate them.

use std::collections::BTreeMap;
use std::path::Path;

use tbqn_core::envs::EnvName;
use tbqn_core::qnet::{QNetwork, QNetworkSpec};
use tbqn_core::tensor::{read_checkpoint, write_checkpoint};

use crate::error::{CliError, CliResult};

pub const FINAL_DIR: &str = "checkpoint-final";
pub const BEST_DIR: &str = "checkpoint-best";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub env: EnvName,
    /// Agent seed; evaluation with it replays the training-time start states.
    pub seed: u64,
    pub env_normalize: bool,
    /// Environment step at which the weights were taken.
    pub step: u64,
    /// Greedy evaluation return recorded at `step`.
    pub avg_return: f64,
}

pub fn save(dir: &Path, net: &QNetwork<f32>, meta: &CheckpointMeta) -> CliResult<()> {
    let spec = serde_json::to_string(net.spec()).map_err(|e| CliError::Config(e.to_string()))?;
    let entries = BTreeMap::from([
        ("spec".to_string(), spec),
        ("env".to_string(), meta.env.as_str().to_string()),
        ("seed".to_string(), meta.seed.to_string()),
        ("env_normalize".to_string(), meta.env_normalize.to_string()),
        ("step".to_string(), meta.step.to_string()),
        ("avg_return".to_string(), meta.avg_return.to_string()),
    ]);
    write_checkpoint(dir, net.params(), &entries).map_err(|e| match e {
        tbqn_core::TbqnError::Io(err) => CliError::io(dir.display(), err),
        other => other.into(),
    })
}

pub fn load(dir: &Path) -> CliResult<(QNetwork<f32>, CheckpointMeta)> {
    let ck = read_checkpoint(dir).map_err(|e| match e {
        tbqn_core::TbqnError::Io(err) => CliError::io(dir.display(), err),
        other => CliError::Config(format!("{}: {other}", dir.display())),
    })?;
    let field = |k: &str| {
        ck.meta
            .get(k)
            .ok_or_else(|| CliError::Config(format!("{}: checkpoint metadata lacks `{k}`", dir.display())))
    };
    let bad = |k: &str| CliError::Config(format!("{}: malformed checkpoint metadata `{k}`", dir.display()));
    let spec: QNetworkSpec = serde_json::from_str(field("spec")?).map_err(|_| bad("spec"))?;
    let meta = CheckpointMeta {
        env: field("env")?.parse()?,
        seed: field("seed")?.parse().map_err(|_| bad("seed"))?,
        env_normalize: field("env_normalize")?.parse().map_err(|_| bad("env_normalize"))?,
        step: field("step")?.parse().map_err(|_| bad("step"))?,
        avg_return: field("avg_return")?.parse().map_err(|_| bad("avg_return"))?,
    };
    let net = QNetwork::from_params(spec, ck.params)?;
    Ok((net, meta))
}
