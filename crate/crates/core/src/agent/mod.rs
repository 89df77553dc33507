//! Deep Q-learning: replay memory, target network, TD targets and the training loop.

mod config;
mod dqn;
mod metrics;
mod replay;
mod training;

pub use config::{AgentConfig, LossKind, LrSchedule};
pub use dqn::{loss, select_action, td_target, td_targets_from_q, DqnAgent, StepReport};
pub use metrics::{DivergenceEvent, MetricsLog, MetricsRow, METRICS_HEADER};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use training::{evaluate_policy, run_training, train, TrainOptions, EVAL_EPISODES};

/// Learning rate at 1-based gradient step `step`.
///
/// `Warmup(w)` is the inverse-square-root transformer schedule
/// `d^-0.5 * min(step^-0.5, step * w^-1.5)`, which ignores `base_lr`.
pub fn lr_at(step: u64, base_lr: f64, schedule: LrSchedule, model_dim: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Warmup(w) => {
            let s = step.max(1) as f64;
            let w = w.max(1) as f64;
            (model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule() {
        for step in [1, 10, 100_000] {
            assert_eq!(lr_at(step, 3e-4, LrSchedule::Constant, 64), 3e-4);
        }
    }

    #[test]
    fn warmup_peak_and_shape() {
        let (d, w) = (64usize, 400u64);
        let peak = lr_at(w, 1.0, LrSchedule::Warmup(w), d);
        assert!((peak - 1.0 / (8.0 * 20.0)).abs() < 1e-15);
        let lrs: Vec<f64> = (1..=2000).map(|s| lr_at(s, 1.0, LrSchedule::Warmup(w), d)).collect();
        for s in 1..w as usize {
            assert!(lrs[s] >= lrs[s - 1]);
        }
        for s in w as usize..lrs.len() {
            assert!(lrs[s] <= lrs[s - 1]);
        }
    }
}
