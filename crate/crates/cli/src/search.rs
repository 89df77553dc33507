//! Hyperparameter studies: sampling, training, importance and marginal reports.

use std::fs;
use std::path::{Path, PathBuf};

use tbqn_core::agent::run_training;
use tbqn_core::envs::EnvName;
use tbqn_core::hpo::{
    mdi_importance, run_study, study_two_report, ForestConfig, ParamValue, RunOutcome, Sample,
    SearchSpace, StudyConfig, TrialRecord,
};
use tbqn_core::{RngState, TbqnError};
use toml::Value;

use crate::config::{self, apply_dotted, set_dotted, to_table, RunConfig};
use crate::error::{CliError, CliResult};

pub const TRIALS_FILE: &str = "trials.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const MARGINALS_FILE: &str = "marginals.csv";
pub const TOP_FILE: &str = "top.csv";

/// Episodes averaged for a run's score.
pub const SCORE_EPISODES: usize = 10;

#[derive(Debug, Clone)]
pub struct SearchArgs {
    pub space: SearchSpace,
    pub study: StudyConfig,
    pub steps: u64,
    /// Base configuration for each environment; sampled values are applied on top.
    pub base: Vec<RunConfig>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SearchSummary {
    pub records: Vec<TrialRecord>,
    pub importance_written: bool,
}

/// Applies a sample to a base config. Categorical values go through the `--set` parser,
/// so `none` clears an optional field.
pub fn apply_sample(base: &RunConfig, sample: &Sample) -> CliResult<RunConfig> {
    let mut table = to_table(base)?;
    for (key, value) in sample {
        match value {
            ParamValue::Categorical(raw) => apply_dotted(&mut table, key, raw)?,
            ParamValue::Real(v) => set_dotted(&mut table, key, Some(Value::Float(*v)))?,
            ParamValue::Int(v) => set_dotted(&mut table, key, Some(Value::Integer(*v)))?,
        }
    }
    config::from_table(table, base.env)
}

/// One training run of a sample: mean of the last training episodes, or the final
/// evaluation when no episode finished.
pub fn score_run(base: &RunConfig, sample: &Sample, steps: u64, seed: u64) -> CliResult<RunOutcome> {
    let mut cfg = apply_sample(base, sample)?;
    cfg.total_steps = steps;
    cfg.eval_every = steps;
    cfg.agent.seed = seed;
    cfg.validate()?;
    let log = run_training(cfg.env, &cfg.agent, &cfg.net, cfg.total_steps, cfg.eval_every)?;
    let score = log
        .recent_episode_mean(SCORE_EPISODES)
        .or_else(|| log.last_return())
        .ok_or_else(|| CliError::Diverged("run ended before any episode or evaluation".into()))?;
    Ok(RunOutcome {
        score,
        diverged: log.diverged.is_some(),
        steps_trained: log.steps_trained,
    })
}

fn to_core(e: CliError) -> TbqnError {
    TbqnError::Config(e.to_string())
}

pub fn run_search(args: &SearchArgs) -> CliResult<SearchSummary> {
    let base_for = |env: EnvName| {
        args.base
            .iter()
            .find(|c| c.env == env)
            .ok_or_else(|| TbqnError::Config(format!("no base config for {env}")))
    };
    let records = run_study(&args.space, &args.study, |sample, env, seed| {
        score_run(base_for(env)?, sample, args.steps, seed).map_err(to_core)
    })?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(args.out.display(), e))?;
    write_trials(&args.out.join(TRIALS_FILE), &args.space, &args.study.envs, &records)?;
    let importance_written = write_importance(
        &args.out.join(IMPORTANCE_FILE),
        &args.space,
        &args.study.envs,
        &records,
        args.study.seed,
    )?;
    write_report(&args.out, &args.study.envs, &records)?;
    Ok(SearchSummary {
        records,
        importance_written,
    })
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_trials(path: &Path, space: &SearchSpace, envs: &[EnvName], records: &[TrialRecord]) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut header = vec!["trial".to_string(), "seed".to_string()];
    header.extend(space.names().map(str::to_string));
    header.extend(envs.iter().map(|e| format!("score_{e}")));
    header.extend(["objective", "diverged", "steps_trained", "error"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string(), r.seed.to_string()];
        row.extend(space.names().map(|n| r.sample.get(n).map_or_else(String::new, |v| v.to_string())));
        row.extend(envs.iter().map(|e| num(r.scores.get(e).copied())));
        row.extend([
            num(r.objective()),
            r.diverged.to_string(),
            r.steps_trained.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-environment and averaged importances; header only when too few trials scored.
pub fn write_importance(
    path: &Path,
    space: &SearchSpace,
    envs: &[EnvName],
    records: &[TrialRecord],
    seed: u64,
) -> CliResult<bool> {
    let mut w = writer(path)?;
    let mut header = vec!["param".to_string()];
    header.extend(envs.iter().map(|e| e.to_string()));
    header.push("averaged".into());
    w.write_record(&header)?;
    let mut rng = RngState::new(seed).derive("importance");
    let written = match mdi_importance(records, space, &ForestConfig::default(), &mut rng) {
        Ok(report) => {
            for (i, name) in report.params.iter().enumerate() {
                let mut row = vec![name.clone()];
                row.extend(envs.iter().map(|e| num(report.per_env.get(e).map(|v| v[i]))));
                row.push(report.averaged[i].to_string());
                w.write_record(&row)?;
            }
            true
        }
        Err(TbqnError::InsufficientData(msg)) => {
            eprintln!("importance skipped: {msg}");
            false
        }
        Err(e) => return Err(e.into()),
    };
    w.flush()?;
    Ok(written)
}

pub fn write_report(dir: &Path, envs: &[EnvName], records: &[TrialRecord]) -> CliResult<()> {
    let report = study_two_report(records);
    let mut w = writer(&dir.join(MARGINALS_FILE))?;
    let mut header = vec!["param".to_string(), "value".to_string(), "count".to_string()];
    header.extend(envs.iter().map(|e| e.to_string()));
    header.push("mean".into());
    w.write_record(&header)?;
    for m in &report.marginals {
        let mut row = vec![m.param.clone(), m.value.clone(), m.count.to_string()];
        row.extend(envs.iter().map(|e| num(m.per_env.get(e).copied())));
        row.push(m.mean.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join(TOP_FILE))?;
    w.write_record(["env", "rank", "trial", "score"])?;
    for (env, top) in &report.top {
        for (rank, (trial, score)) in top.iter().enumerate() {
            w.write_record([env.to_string(), (rank + 1).to_string(), trial.to_string(), score.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn sample_values_reach_the_config() {
        let base = presets::final_recipe(EnvName::CartPole);
        let sample = Sample::from([
            ("agent.grad_clip".to_string(), ParamValue::Categorical("none".into())),
            ("net.layer_kind".to_string(), ParamValue::Categorical("5".into())),
            ("agent.loss_kind".to_string(), ParamValue::Categorical("mse".into())),
            ("agent.lr".to_string(), ParamValue::Real(3e-4)),
            ("agent.batch_size".to_string(), ParamValue::Int(64)),
            ("agent.gamma".to_string(), ParamValue::Real(1.0)),
        ]);
        let cfg = apply_sample(&base, &sample).unwrap();
        assert_eq!(cfg.agent.grad_clip, None);
        assert_eq!(cfg.net.layer_kind.number(), 5);
        assert_eq!(cfg.agent.lr, 3e-4);
        assert_eq!(cfg.agent.batch_size, 64);
        assert_eq!(cfg.agent.gamma, 1.0);
    }

    #[test]
    fn invalid_sample_is_config_error() {
        let base = presets::final_recipe(EnvName::CartPole);
        let sample = Sample::from([("net.num_heads".to_string(), ParamValue::Int(3))]);
        assert!(matches!(apply_sample(&base, &sample), Err(CliError::Config(_))));
    }
}
