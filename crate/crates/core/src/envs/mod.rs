//! Native classic-control environments and observation history stacking.

mod acrobot;
mod cartpole;
mod history;
mod mountain_car;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TbqnError};
use crate::rng::RngState;

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use history::HistoryBuffer;
pub use mountain_car::MountainCar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    CartPole,
    MountainCar,
    Acrobot,
}

impl EnvName {
    pub const ALL: [EnvName; 3] = [EnvName::CartPole, EnvName::MountainCar, EnvName::Acrobot];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::CartPole => "cartpole",
            EnvName::MountainCar => "mountaincar",
            EnvName::Acrobot => "acrobot",
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvName::CartPole => cartpole::spec(),
            EnvName::MountainCar => mountain_car::spec(),
            EnvName::Acrobot => acrobot::spec(),
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvName::CartPole => Box::new(CartPole::new()),
            EnvName::MountainCar => Box::new(MountainCar::new()),
            EnvName::Acrobot => Box::new(Acrobot::new()),
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = TbqnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" | "cartpole-v1" => Ok(EnvName::CartPole),
            "mountaincar" | "mountaincar-v0" => Ok(EnvName::MountainCar),
            "acrobot" | "acrobot-v1" => Ok(EnvName::Acrobot),
            _ => Err(TbqnError::config(format!(
                "unknown environment `{s}` (expected cartpole, mountaincar or acrobot)"
            ))),
        }
    }
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: EnvName,
    pub state_dim: usize,
    pub num_actions: usize,
    pub max_episode_steps: usize,
    pub reward_structure: &'static str,
    /// Per-dimension `(min, max)` used by [`normalize`]. Unbounded velocities use clipping bounds.
    pub observation_bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode ended through failure or success.
    pub terminal: bool,
    /// The episode hit the time limit.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns the initial observation.
    fn reset(&mut self, rng: &mut RngState) -> Vec<f64>;

    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

pub(crate) fn check_action(spec: &EnvSpec, action: usize) -> Result<()> {
    if action >= spec.num_actions {
        return Err(TbqnError::contract(format!(
            "action {action} out of range for {} ({} actions)",
            spec.name, spec.num_actions
        )));
    }
    Ok(())
}

/// Maps each dimension affinely from its bounds onto `[-1, 1]` (clipped); identity when disabled.
pub fn normalize(obs: &[f64], bounds: &[(f64, f64)], enabled: bool) -> Vec<f64> {
    if !enabled {
        return obs.to_vec();
    }
    obs.iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect()
}

/// Records `(step, action, reward, terminal, obs...)` rows for debugging dumps.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    rows: Vec<(usize, usize, f64, bool, Vec<f64>)>,
}

impl Trajectory {
    pub fn record(&mut self, action: usize, outcome: &StepOutcome) {
        let step = self.rows.len();
        self.rows
            .push((step, action, outcome.reward, outcome.terminal, outcome.observation.clone()));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let width = self.rows.first().map_or(0, |r| r.4.len());
        let mut out = String::from("step,action,reward,terminal");
        for i in 0..width {
            out.push_str(&format!(",obs{i}"));
        }
        out.push('\n');
        for (step, action, reward, terminal, obs) in &self.rows {
            out.push_str(&format!("{step},{action},{reward},{}", *terminal as u8));
            for v in obs {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_table() {
        let c = EnvName::CartPole.spec();
        assert_eq!((c.state_dim, c.num_actions, c.max_episode_steps), (4, 2, 500));
        let m = EnvName::MountainCar.spec();
        assert_eq!((m.state_dim, m.num_actions, m.max_episode_steps), (2, 3, 200));
        let a = EnvName::Acrobot.spec();
        assert_eq!((a.state_dim, a.num_actions, a.max_episode_steps), (6, 3, 500));
        for name in EnvName::ALL {
            assert_eq!(name.spec().observation_bounds.len(), name.spec().state_dim);
            assert_eq!(name.as_str().parse::<EnvName>().unwrap(), name);
        }
        assert!("lunarlander".parse::<EnvName>().is_err());
    }

    #[test]
    fn normalize_endpoints() {
        let bounds = [(-2.0, 2.0), (0.0, 10.0)];
        assert_eq!(normalize(&[1.5, 3.0], &bounds, false), vec![1.5, 3.0]);
        assert_eq!(normalize(&[-2.0, 0.0], &bounds, true), vec![-1.0, -1.0]);
        assert_eq!(normalize(&[2.0, 10.0], &bounds, true), vec![1.0, 1.0]);
        assert_eq!(normalize(&[0.0, 5.0], &bounds, true), vec![0.0, 0.0]);
        assert_eq!(normalize(&[9.0, -3.0], &bounds, true), vec![1.0, -1.0]);
    }

    #[test]
    fn out_of_range_action_is_contract_error() {
        for name in EnvName::ALL {
            let mut env = name.make();
            env.reset(&mut RngState::new(0));
            let n = env.spec().num_actions;
            assert!(matches!(env.step(n), Err(TbqnError::Contract(_))));
        }
    }

    #[test]
    fn episodes_never_exceed_cap() {
        for name in EnvName::ALL {
            let mut env = name.make();
            let mut rng = RngState::new(4);
            env.reset(&mut rng);
            let cap = env.spec().max_episode_steps;
            let mut steps = 0;
            loop {
                let a = rng.below(env.spec().num_actions);
                let out = env.step(a).unwrap();
                steps += 1;
                if out.done() {
                    assert!(out.truncated == (steps == cap && !out.terminal) || out.terminal);
                    break;
                }
            }
            assert!(steps <= cap);
        }
    }

    #[test]
    fn seeded_trajectories_reproduce() {
        for name in EnvName::ALL {
            let run = || {
                let mut env = name.make();
                let mut rng = RngState::new(12);
                let mut traj = Trajectory::default();
                env.reset(&mut rng);
                for t in 0..300 {
                    let out = env.step(t % env.spec().num_actions).unwrap();
                    traj.record(t % env.spec().num_actions, &out);
                    if out.done() {
                        env.reset(&mut rng);
                    }
                }
                traj.to_csv()
            };
            assert_eq!(run(), run());
        }
    }
}
