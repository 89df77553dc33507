//! Run configuration: TOML files, presets and layered overrides.
//!
//! Resolution order, later layers winning:
//! preset for the chosen env, config file, `TBQN_*` environment variables,
//! `--set key=value` pairs, dedicated flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbqn_core::agent::AgentConfig;
use tbqn_core::envs::EnvName;
use tbqn_core::qnet::QNetworkSpec;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};
use crate::presets;

pub const ENV_PREFIX: &str = "TBQN_";
pub const SNAPSHOT_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub total_steps: u64,
    pub eval_every: u64,
    pub out: PathBuf,
    pub net: QNetworkSpec,
    pub agent: AgentConfig,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.net.validate()?;
        self.agent.validate()?;
        let es = self.env.spec();
        if self.net.state_dim != es.state_dim {
            return Err(CliError::Config(format!(
                "net.state_dim is {} but {} observations have {} components",
                self.net.state_dim, self.env, es.state_dim
            )));
        }
        if self.net.num_actions != es.num_actions {
            return Err(CliError::Config(format!(
                "net.num_actions is {} but {} has {} actions",
                self.net.num_actions, self.env, es.num_actions
            )));
        }
        if self.total_steps == 0 {
            return Err(CliError::Config("total_steps must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(CliError::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_snapshot(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(path.display(), e))?;
        Ok(path)
    }
}

/// Everything that can contribute to a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub env: Option<EnvName>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Raw `key=value` pairs from `--set`.
    pub sets: Vec<String>,
    /// Environment variables; only `TBQN_`-prefixed names are used.
    pub env_vars: Vec<(String, String)>,
}

/// Parses a command-line value as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets or (for `none`) removes a dotted key.
pub fn apply_dotted(table: &mut Table, key: &str, raw: &str) -> CliResult<()> {
    let value = (raw.trim() != "none").then(|| parse_value(raw));
    set_dotted(table, key, value)
}

/// Inserts `value` at a dotted key, creating intermediate tables; `None` removes the key.
pub fn set_dotted(table: &mut Table, key: &str, value: Option<Value>) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("`{}` is not a table", parts[..=i].join(".")))
        })?;
    }
    match value {
        Some(v) => cur.insert(last.to_string(), v),
        None => cur.remove(*last),
    };
    Ok(())
}

/// Recursively overlays `top` onto `base`.
pub fn deep_merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn split_set(pair: &str) -> CliResult<(&str, &str)> {
    pair.split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{pair}` is not key=value")))
}

pub(crate) fn to_table<T: Serialize>(v: &T) -> CliResult<Table> {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => unreachable!("structs serialise to tables"),
        Err(e) => Err(CliError::Config(e.to_string())),
    }
}

fn read_file(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Overlay from every source except the preset, plus keys cleared with `none`.
/// Clearing must happen after the preset is merged in.
#[derive(Default)]
struct Overlay {
    table: Table,
    cleared: Vec<String>,
}

impl Overlay {
    fn set(&mut self, key: &str, raw: &str) -> CliResult<()> {
        self.cleared.retain(|k| k != key);
        if raw.trim() == "none" {
            self.cleared.push(key.to_string());
        }
        apply_dotted(&mut self.table, key, raw)
    }
}

fn overlay(o: &Overrides) -> CliResult<Overlay> {
    let mut top = Overlay {
        table: match &o.config {
            Some(p) => read_file(p)?,
            None => Table::new(),
        },
        cleared: Vec::new(),
    };
    let mut vars: Vec<_> = o
        .env_vars
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_lowercase().replace("__", "."), v)))
        .collect();
    vars.sort();
    for (k, v) in vars {
        top.set(&k, v)?;
    }
    for pair in &o.sets {
        let (k, v) = split_set(pair)?;
        top.set(k.trim(), v)?;
    }
    if let Some(p) = &o.preset {
        top.table.insert("preset".into(), Value::String(p.clone()));
    }
    if let Some(e) = o.env {
        top.table.insert("env".into(), Value::String(e.as_str().into()));
    }
    if let Some(s) = o.steps {
        top.set("total_steps", &s.to_string())?;
    }
    if let Some(s) = o.seed {
        top.set("agent.seed", &s.to_string())?;
    }
    if let Some(out) = &o.out {
        top.table.insert("out".into(), Value::String(out.display().to_string()));
    }
    Ok(top)
}

/// Deserialises and validates a fully merged table.
pub(crate) fn from_table(mut table: Table, env: EnvName) -> CliResult<RunConfig> {
    // dimensions that follow from the environment may be omitted
    if let Some(Value::Table(net)) = table.get_mut("net") {
        let es = env.spec();
        net.entry("state_dim").or_insert(Value::Integer(es.state_dim as i64));
        net.entry("num_actions").or_insert(Value::Integer(es.num_actions as i64));
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve(o: &Overrides) -> CliResult<RunConfig> {
    let Overlay { table: top, cleared } = overlay(o)?;
    let env: EnvName = match top.get("env") {
        Some(Value::String(s)) => s.parse()?,
        Some(other) => return Err(CliError::Config(format!("env must be a string, got {other}"))),
        None => return Err(CliError::Config("env is required (use --env or set `env`)".into())),
    };
    let mut table = match top.get("preset") {
        Some(Value::String(name)) => to_table(&presets::preset(name, env)?)?,
        Some(other) => return Err(CliError::Config(format!("preset must be a string, got {other}"))),
        None => Table::new(),
    };
    deep_merge(&mut table, top);
    for key in &cleared {
        set_dotted(&mut table, key, None)?;
    }
    from_table(table, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tbqn_core::agent::LossKind;

    fn with_preset(sets: &[&str]) -> Overrides {
        Overrides {
            preset: Some(presets::FINAL.into()),
            env: Some(EnvName::CartPole),
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn values_parse_as_toml_then_string() {
        assert_eq!(parse_value("1e-4"), Value::Float(1e-4));
        assert_eq!(parse_value("32"), Value::Integer(32));
        assert_eq!(parse_value("true"), Value::Boolean(true));
        assert_eq!(parse_value("mse"), Value::String("mse".into()));
        assert_eq!(parse_value("\"warmup:10\""), Value::String("warmup:10".into()));
    }

    #[test]
    fn set_overrides_preset() {
        let cfg = resolve(&with_preset(&["agent.lr=3e-4", "agent.loss_kind=mse", "net.num_layers=2"])).unwrap();
        assert_eq!(cfg.agent.lr, 3e-4);
        assert_eq!(cfg.agent.loss_kind, LossKind::Mse);
        assert_eq!(cfg.net.num_layers, 2);
        assert_eq!(cfg.preset.as_deref(), Some(presets::FINAL));
    }

    #[test]
    fn none_clears_optional_field() {
        let cfg = resolve(&with_preset(&["agent.grad_clip=none"])).unwrap();
        assert_eq!(cfg.agent.grad_clip, None);
    }

    #[test]
    fn precedence_env_vars_then_sets_then_flags() {
        let mut o = with_preset(&["agent.gamma=0.95", "total_steps=10"]);
        o.env_vars = vec![
            ("TBQN_AGENT__GAMMA".into(), "0.9".into()),
            ("TBQN_AGENT__BATCH_SIZE".into(), "16".into()),
            ("HOME".into(), "/root".into()),
        ];
        o.steps = Some(77);
        let cfg = resolve(&o).unwrap();
        assert_eq!(cfg.agent.gamma, 0.95);
        assert_eq!(cfg.agent.batch_size, 16);
        assert_eq!(cfg.total_steps, 77);
    }

    #[test]
    fn errors_name_the_field() {
        let err = resolve(&with_preset(&["agent.gamma=1.5"])).unwrap_err();
        assert!(err.to_string().contains("agent.gamma"), "{err}");
        let err = resolve(&with_preset(&["agent.lrr=1"])).unwrap_err();
        assert!(err.to_string().contains("lrr"), "{err}");
        let err = resolve(&with_preset(&["net.num_heads=3"])).unwrap_err();
        assert!(err.to_string().contains("net.num_heads"), "{err}");
        let err = resolve(&with_preset(&["net.state_dim=6"])).unwrap_err();
        assert!(err.to_string().contains("net.state_dim"), "{err}");
        assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn missing_env_is_config_error() {
        let err = resolve(&Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn env_switch_reshapes_preset_dims() {
        let mut o = with_preset(&[]);
        o.env = Some(EnvName::Acrobot);
        let cfg = resolve(&o).unwrap();
        assert_eq!((cfg.net.state_dim, cfg.net.num_actions), (6, 3));
    }

    #[test]
    fn snapshot_roundtrips_exactly() {
        let cfg = resolve(&with_preset(&["agent.lr=0.00012345678901234", "agent.seed=42"])).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = cfg.write_snapshot(dir.path()).unwrap();
        let reread = resolve(&Overrides {
            config: Some(path),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(reread, cfg);
    }

    #[test]
    fn file_without_preset_fills_env_dims() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = presets::final_recipe(EnvName::MountainCar);
        cfg.preset = None;
        let mut t = to_table(&cfg).unwrap();
        let net = t.get_mut("net").unwrap().as_table_mut().unwrap();
        net.remove("state_dim");
        net.remove("num_actions");
        let path = dir.path().join("run.toml");
        fs::write(&path, toml::to_string(&t).unwrap()).unwrap();
        let got = resolve(&Overrides {
            config: Some(path),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(got, cfg);
    }
}
