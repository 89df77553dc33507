use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TbqnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Huber,
    Mse,
}

impl FromStr for LossKind {
    type Err = TbqnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huber" => Ok(LossKind::Huber),
            "mse" | "squared" => Ok(LossKind::Mse),
            _ => Err(TbqnError::config(format!("unknown loss `{s}` (expected huber or mse)"))),
        }
    }
}

/// Learning-rate schedule; written as `"constant"` or `"warmup:<steps>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LrSchedule {
    Constant,
    Warmup(u64),
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::Warmup(w) => write!(f, "warmup:{w}"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = TbqnError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "constant" {
            return Ok(LrSchedule::Constant);
        }
        let steps = s
            .strip_prefix("warmup:")
            .and_then(|w| w.parse::<u64>().ok())
            .filter(|&w| w > 0)
            .ok_or_else(|| {
                TbqnError::config(format!("agent.lr_schedule `{s}` is not `constant` or `warmup:<steps>`"))
            })?;
        Ok(LrSchedule::Warmup(steps))
    }
}

impl TryFrom<String> for LrSchedule {
    type Error = TbqnError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LrSchedule> for String {
    fn from(s: LrSchedule) -> String {
        s.to_string()
    }
}

/// Every tunable of the Q-learning agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub loss_kind: LossKind,
    pub gamma: f64,
    /// Exploration rate; the starting value when a decay is configured.
    pub epsilon: f64,
    /// Exploration rate reached after `epsilon_decay_steps` environment steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_final: Option<f64>,
    #[serde(default)]
    pub epsilon_decay_steps: u64,
    pub double_q: bool,
    /// Gradient steps between target-network updates.
    pub target_update_period: u64,
    /// Polyak coefficient; 1 is a hard copy.
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub initial_collect_steps: usize,
    pub buffer_capacity: usize,
    pub env_normalize: bool,
    pub seed: u64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TbqnError::config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("agent.gamma {} outside (0, 1]", self.gamma));
        }
        for (name, v) in [("agent.epsilon", Some(self.epsilon)), ("agent.epsilon_final", self.epsilon_final)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return fail(format!("{name} {v} outside [0, 1]"));
                }
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("agent.tau {} outside (0, 1]", self.tau));
        }
        if self.target_update_period == 0 {
            return fail("agent.target_update_period must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("agent.lr must be positive, got {}", self.lr));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("agent.grad_clip must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 {
            return fail("agent.batch_size must be >= 1".into());
        }
        if self.buffer_capacity < self.batch_size {
            return fail(format!(
                "agent.buffer_capacity {} is smaller than agent.batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if self.initial_collect_steps > self.buffer_capacity {
            return fail(format!(
                "agent.initial_collect_steps {} exceeds agent.buffer_capacity {}",
                self.initial_collect_steps, self.buffer_capacity
            ));
        }
        Ok(())
    }

    /// Exploration rate after `env_step` environment steps: constant, or linear decay then flat.
    pub fn epsilon_at(&self, env_step: u64) -> f64 {
        match self.epsilon_final {
            Some(end) if self.epsilon_decay_steps > 0 => {
                let frac = (env_step as f64 / self.epsilon_decay_steps as f64).min(1.0);
                self.epsilon + frac * (end - self.epsilon)
            }
            _ => self.epsilon,
        }
    }

    /// Buffer fill level required before gradient steps start.
    pub fn warmup_len(&self) -> usize {
        self.batch_size.max(self.initial_collect_steps)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn test_config() -> AgentConfig {
        AgentConfig {
            loss_kind: LossKind::Huber,
            gamma: 0.99,
            epsilon: 0.1,
            epsilon_final: None,
            epsilon_decay_steps: 0,
            double_q: false,
            target_update_period: 10,
            tau: 1.0,
            grad_clip: Some(1.0),
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 8,
            initial_collect_steps: 16,
            buffer_capacity: 1000,
            env_normalize: true,
            seed: 0,
        }
    }

    #[test]
    fn schedule_strings() {
        assert_eq!("constant".parse::<LrSchedule>().unwrap(), LrSchedule::Constant);
        assert_eq!("warmup:4000".parse::<LrSchedule>().unwrap(), LrSchedule::Warmup(4000));
        assert!("warmup:0".parse::<LrSchedule>().is_err());
        assert!("cosine".parse::<LrSchedule>().is_err());
        assert_eq!(LrSchedule::Warmup(7).to_string(), "warmup:7");
    }

    #[test]
    fn validation_names_fields() {
        let mut c = test_config();
        c.validate().unwrap();
        c.gamma = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("agent.gamma"));
        let mut c = test_config();
        c.tau = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("agent.tau"));
        let mut c = test_config();
        c.buffer_capacity = 4;
        assert!(c.validate().unwrap_err().to_string().contains("agent.buffer_capacity"));
        let mut c = test_config();
        c.epsilon_final = Some(2.0);
        assert!(c.validate().unwrap_err().to_string().contains("agent.epsilon_final"));
    }

    #[test]
    fn epsilon_decay() {
        let mut c = test_config();
        assert_eq!(c.epsilon_at(1_000_000), 0.1);
        c.epsilon = 1.0;
        c.epsilon_final = Some(0.0);
        c.epsilon_decay_steps = 100;
        assert_eq!(c.epsilon_at(0), 1.0);
        assert_eq!(c.epsilon_at(50), 0.5);
        assert_eq!(c.epsilon_at(100), 0.0);
        assert_eq!(c.epsilon_at(1000), 0.0);
    }
}
