//! Named, fully specified run configurations.

use std::path::PathBuf;

use tbqn_core::agent::{AgentConfig, LossKind, LrSchedule};
use tbqn_core::envs::EnvName;
use tbqn_core::qnet::{LayerKind, QNetworkSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const BASELINE: &str = "baseline-fig4";
pub const FINAL: &str = "final-table3";
pub const PRESETS: [&str; 2] = [BASELINE, FINAL];

/// Control-task network dimensions used throughout: horizon 5, d 64, 3 layers, ff 256.
fn control_net(env: EnvName, kind: LayerKind) -> QNetworkSpec {
    let es = env.spec();
    QNetworkSpec {
        history_horizon: 5,
        state_dim: es.state_dim,
        model_dim: 64,
        num_heads: 4,
        num_layers: 3,
        ff_dim: 256,
        num_actions: es.num_actions,
        layer_kind: kind,
        dropout_rate: 0.1,
        outer_dropout: false,
        depth_scaled_init: false,
        depth_scaled_last_layer: false,
    }
}

/// Plain TBQN with replay and a hard-updated target network only.
pub fn baseline(env: EnvName) -> RunConfig {
    RunConfig {
        env,
        preset: Some(BASELINE.into()),
        total_steps: 150_000,
        eval_every: 1000,
        out: PathBuf::from(format!("runs/{BASELINE}-{env}")),
        net: control_net(env, LayerKind::Type1Baseline),
        agent: AgentConfig {
            loss_kind: LossKind::Mse,
            gamma: 0.99,
            epsilon: 0.1,
            epsilon_final: None,
            epsilon_decay_steps: 0,
            double_q: false,
            target_update_period: 100,
            tau: 1.0,
            grad_clip: None,
            lr: 1e-5,
            lr_schedule: LrSchedule::Constant,
            batch_size: 32,
            initial_collect_steps: 1000,
            buffer_capacity: 100_000,
            env_normalize: false,
            seed: 0,
        },
    }
}

/// The selected recipe: IMR layers, clipping, depth-scaled init, lr 1e-4, batch 32, no schedule.
/// Exploration, loss, discount and last-layer scaling are chosen per environment.
pub fn final_recipe(env: EnvName) -> RunConfig {
    let mut net = control_net(env, LayerKind::Type3Imr);
    net.depth_scaled_init = true;
    let mut agent = AgentConfig {
        loss_kind: LossKind::Huber,
        gamma: 0.99,
        epsilon: 1.0,
        epsilon_final: Some(0.02),
        epsilon_decay_steps: 10_000,
        double_q: true,
        target_update_period: 100,
        tau: 1.0,
        grad_clip: Some(1.0),
        lr: 1e-4,
        lr_schedule: LrSchedule::Constant,
        batch_size: 32,
        initial_collect_steps: 1000,
        buffer_capacity: 100_000,
        env_normalize: true,
        seed: 0,
    };
    match env {
        EnvName::CartPole => {}
        EnvName::Acrobot => {
            net.depth_scaled_last_layer = true;
        }
        EnvName::MountainCar => {
            agent.loss_kind = LossKind::Mse;
            agent.epsilon_final = Some(0.05);
            agent.epsilon_decay_steps = 30_000;
            net.depth_scaled_last_layer = true;
        }
    }
    RunConfig {
        env,
        preset: Some(FINAL.into()),
        total_steps: 150_000,
        eval_every: 1000,
        out: PathBuf::from(format!("runs/{FINAL}-{env}")),
        net,
        agent,
    }
}

pub fn preset(name: &str, env: EnvName) -> CliResult<RunConfig> {
    match name {
        BASELINE => Ok(baseline(env)),
        FINAL => Ok(final_recipe(env)),
        other => Err(CliError::Config(format!(
            "unknown preset `{other}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_for_every_env() {
        for env in EnvName::ALL {
            for name in PRESETS {
                preset(name, env).unwrap().validate().unwrap();
            }
        }
        assert!(preset("fig9", EnvName::CartPole).is_err());
    }

    #[test]
    fn baseline_matches_published_settings() {
        let b = baseline(EnvName::CartPole);
        assert_eq!(b.agent.initial_collect_steps, 1000);
        assert_eq!(b.agent.loss_kind, LossKind::Mse);
        assert_eq!(b.net.num_heads, 4);
        assert_eq!(b.agent.epsilon, 0.1);
        assert_eq!(b.agent.buffer_capacity, 100_000);
        assert_eq!(b.agent.batch_size, 32);
        assert_eq!(b.agent.lr, 1e-5);
        assert_eq!(b.agent.grad_clip, None);
    }

    #[test]
    fn final_recipe_fixed_choices() {
        for env in EnvName::ALL {
            let f = final_recipe(env);
            assert_eq!(f.net.layer_kind, LayerKind::Type3Imr);
            assert!(f.net.depth_scaled_init);
            assert!(f.agent.grad_clip.is_some());
            assert_eq!((f.agent.batch_size, f.agent.lr), (32, 1e-4));
            assert_eq!(f.agent.lr_schedule, LrSchedule::Constant);
            assert!(f.agent.target_update_period >= 10);
        }
    }
}
