use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;

use super::sampler::{sample_random, sample_tpe, TpeConfig};
use super::space::{Sample, SearchSpace};
use crate::envs::EnvName;
use crate::error::{Result, TbqnError};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Random,
    Tpe,
}

impl FromStr for SamplerKind {
    type Err = TbqnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "tpe" => Ok(SamplerKind::Tpe),
            _ => Err(TbqnError::config(format!("unknown sampler `{s}` (expected random or tpe)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sampler: SamplerKind,
    pub tpe: TpeConfig,
    pub n_trials: usize,
    pub runs_per_sample: usize,
    pub envs: Vec<EnvName>,
    pub seed: u64,
    /// Samples proposed per round; fixed so results do not depend on `workers`.
    pub round_size: usize,
    pub workers: usize,
}

impl StudyConfig {
    pub fn new(sampler: SamplerKind, n_trials: usize, envs: Vec<EnvName>, seed: u64) -> Self {
        Self {
            sampler,
            tpe: TpeConfig::default(),
            n_trials,
            runs_per_sample: 1,
            envs,
            seed,
            round_size: 4,
            workers: 1,
        }
    }
}

/// What one training run reports back to the study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    /// Mean return of the last training episodes (the last value before any abort).
    pub score: f64,
    pub diverged: bool,
    pub steps_trained: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub sample: Sample,
    /// Per-environment score averaged over runs.
    pub scores: BTreeMap<EnvName, f64>,
    pub diverged: bool,
    pub seed: u64,
    pub steps_trained: u64,
    /// Set when a run could not be executed at all (e.g. an invalid combination).
    pub error: Option<String>,
}

impl TrialRecord {
    /// A completed record with the given per-environment scores.
    pub fn scored(index: usize, sample: Sample, scores: BTreeMap<EnvName, f64>) -> Self {
        Self {
            index,
            sample,
            scores,
            diverged: false,
            seed: 0,
            steps_trained: 0,
            error: None,
        }
    }

    /// Mean score over environments; `None` for failed or unscored trials.
    pub fn objective(&self) -> Option<f64> {
        if self.error.is_some() || self.scores.is_empty() {
            return None;
        }
        let mean = self.scores.values().sum::<f64>() / self.scores.len() as f64;
        mean.is_finite().then_some(mean)
    }
}

/// Runs a study: every sample is trained `runs_per_sample` times in each environment.
///
/// `objective(sample, env, seed)` performs one training run. Errors are recorded on the
/// trial and never abort the study. Samples are proposed in fixed-size rounds from the
/// records of earlier rounds, and each round's trials run on a pool of `workers` threads,
/// so records depend only on the space, the config and the objective.
pub fn run_study<F>(space: &SearchSpace, cfg: &StudyConfig, objective: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(&Sample, EnvName, u64) -> Result<RunOutcome> + Sync,
{
    if cfg.n_trials == 0 || cfg.runs_per_sample == 0 || cfg.envs.is_empty() {
        return Err(TbqnError::config("a study needs n_trials, runs_per_sample and envs to be non-empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| TbqnError::config(format!("cannot start worker pool: {e}")))?;
    let root = RngState::new(cfg.seed);
    let mut sampler_rng = root.derive("sampler");
    let mut records: Vec<TrialRecord> = Vec::with_capacity(cfg.n_trials);

    while records.len() < cfg.n_trials {
        let start = records.len();
        let end = (start + cfg.round_size.max(1)).min(cfg.n_trials);
        let proposals: Vec<(usize, Sample, u64)> = (start..end)
            .map(|index| {
                let sample = match cfg.sampler {
                    SamplerKind::Random => sample_random(space, &mut sampler_rng),
                    SamplerKind::Tpe => sample_tpe(space, &records, &cfg.tpe, &mut sampler_rng),
                };
                (index, sample, root.derive_indexed("trial", index as u64).next_u64())
            })
            .collect();
        let round: Vec<TrialRecord> = pool.install(|| {
            proposals
                .into_par_iter()
                .map(|(index, sample, seed)| run_trial(index, sample, seed, cfg, &objective))
                .collect()
        });
        records.extend(round);
    }
    Ok(records)
}

fn run_trial<F>(index: usize, sample: Sample, seed: u64, cfg: &StudyConfig, objective: &F) -> TrialRecord
where
    F: Fn(&Sample, EnvName, u64) -> Result<RunOutcome>,
{
    let mut record = TrialRecord {
        index,
        sample,
        scores: BTreeMap::new(),
        diverged: false,
        seed,
        steps_trained: 0,
        error: None,
    };
    let trial_rng = RngState::new(seed);
    for &env in &cfg.envs {
        let mut total = 0.0;
        for run in 0..cfg.runs_per_sample {
            let run_seed = trial_rng
                .derive_indexed(env.as_str(), run as u64)
                .next_u64();
            match objective(&record.sample, env, run_seed) {
                Ok(out) => {
                    total += out.score;
                    record.diverged |= out.diverged;
                    record.steps_trained += out.steps_trained;
                }
                Err(e) => {
                    record.error = Some(e.to_string());
                    record.scores.clear();
                    return record;
                }
            }
        }
        record.scores.insert(env, total / cfg.runs_per_sample as f64);
    }
    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::ParamValue;

    fn toy_objective(s: &Sample, env: EnvName, seed: u64) -> Result<RunOutcome> {
        let x = s["x"].as_f64().unwrap();
        if x > 0.95 {
            return Err(TbqnError::config("x too large"));
        }
        let noise = (seed % 1000) as f64 / 1e4;
        Ok(RunOutcome {
            score: x + noise + if env == EnvName::Acrobot { 1.0 } else { 0.0 },
            diverged: x < 0.05,
            steps_trained: 10,
        })
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let space = SearchSpace::parse("x uniform 0 1").unwrap();
        let mut cfg = StudyConfig::new(SamplerKind::Tpe, 23, vec![EnvName::CartPole, EnvName::Acrobot], 7);
        cfg.runs_per_sample = 2;
        let a = run_study(&space, &cfg, toy_objective).unwrap();
        cfg.workers = 3;
        let b = run_study(&space, &cfg, toy_objective).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 23);
        assert!(a.iter().enumerate().all(|(i, r)| r.index == i));
        for r in &a {
            if r.error.is_none() {
                assert_eq!(r.scores.len(), 2);
                assert_eq!(r.steps_trained, 40);
            } else {
                assert!(r.objective().is_none());
            }
        }
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let space = SearchSpace::parse("x uniform 0.96 1").unwrap();
        let cfg = StudyConfig::new(SamplerKind::Random, 3, vec![EnvName::CartPole], 1);
        let recs = run_study(&space, &cfg, toy_objective).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("x too large"))));
        assert!(matches!(recs[0].sample["x"], ParamValue::Real(_)));
    }

    #[test]
    fn rejects_empty_study() {
        let space = SearchSpace::parse("x uniform 0 1").unwrap();
        let cfg = StudyConfig::new(SamplerKind::Random, 0, vec![EnvName::CartPole], 1);
        assert!(run_study(&space, &cfg, toy_objective).is_err());
    }
}
