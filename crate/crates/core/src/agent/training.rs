use std::time::Instant;

use super::config::AgentConfig;
use super::dqn::{argmax, DqnAgent};
use super::metrics::{DivergenceEvent, MetricsLog, MetricsRow};
use super::replay::Transition;
use crate::envs::{normalize, EnvName, HistoryBuffer};
use crate::error::{Result, TbqnError};
use crate::qnet::{QNetwork, QNetworkSpec};
use crate::rng::RngState;

pub const EVAL_EPISODES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Stop as soon as an evaluation reaches this average return.
    pub stop_at_return: Option<f64>,
}

impl TrainOptions {
    pub fn new(total_steps: u64, eval_every: u64) -> Self {
        Self {
            total_steps,
            eval_every,
            eval_episodes: EVAL_EPISODES,
            stop_at_return: None,
        }
    }
}

fn check_dims(net: &QNetworkSpec, env: EnvName) -> Result<()> {
    let es = env.spec();
    if net.state_dim != es.state_dim || net.num_actions != es.num_actions {
        return Err(TbqnError::config(format!(
            "network expects state_dim {} / {} actions but {env} has {} / {}",
            net.state_dim, net.num_actions, es.state_dim, es.num_actions
        )));
    }
    Ok(())
}

fn to_f32(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&v| v as f32).collect()
}

/// Greedy returns of `episodes` fresh episodes. Start states come from a stream derived from `seed`,
/// so equal seeds give equal starts.
pub fn evaluate_policy(
    net: &QNetwork<f32>,
    env: EnvName,
    episodes: usize,
    env_normalize: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dims(net.spec(), env)?;
    let mut rng = RngState::new(seed).derive("eval");
    let mut e = env.make();
    let bounds = e.spec().observation_bounds.clone();
    let mut hist = HistoryBuffer::new(net.spec().history_horizon, net.spec().state_dim);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        hist.reset(&normalize(&e.reset(&mut rng), &bounds, env_normalize))?;
        let mut total = 0.0;
        loop {
            let q = net.q_values(&to_f32(hist.as_slice()), 1)?;
            let out = e.step(argmax(&q))?;
            total += out.reward;
            hist.push(&normalize(&out.observation, &bounds, env_normalize))?;
            if out.done() {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Interact-store-train loop with periodic greedy evaluation.
///
/// `on_eval` sees every logged row together with the agent at that moment. A divergence
/// ends the run early and is recorded in the log rather than returned as an error.
pub fn train(
    env: EnvName,
    agent_config: &AgentConfig,
    net: &QNetworkSpec,
    opts: TrainOptions,
    mut on_eval: impl FnMut(&MetricsRow, &DqnAgent) -> Result<()>,
) -> Result<(DqnAgent, MetricsLog)> {
    check_dims(net, env)?;
    if opts.eval_every == 0 {
        return Err(TbqnError::config("eval_every must be >= 1"));
    }
    let mut agent = DqnAgent::new(agent_config.clone(), net.clone())?;
    let mut log = MetricsLog::default();
    let started = Instant::now();
    let norm = agent_config.env_normalize;
    let mut env_rng = RngState::new(agent_config.seed).derive("env");
    let mut e = env.make();
    let bounds = e.spec().observation_bounds.clone();
    let mut hist = HistoryBuffer::new(net.history_horizon, net.state_dim);
    hist.reset(&normalize(&e.reset(&mut env_rng), &bounds, norm))?;
    let mut episode_return = 0.0;
    let (mut loss_sum, mut norm_sum, mut updates) = (0.0, 0.0, 0u64);

    for step in 1..=opts.total_steps {
        let state = to_f32(hist.as_slice());
        let action = agent.act(&state)?;
        let out = e.step(action)?;
        episode_return += out.reward;
        hist.push(&normalize(&out.observation, &bounds, norm))?;
        agent.observe(Transition {
            state,
            action,
            reward: out.reward as f32,
            next_state: to_f32(hist.as_slice()),
            terminal: out.terminal,
        })?;
        log.steps_trained = step;
        match agent.train_step() {
            Ok(r) if !r.collecting => {
                loss_sum += r.loss;
                norm_sum += r.grad_norm;
                updates += 1;
            }
            Ok(_) => {}
            Err(TbqnError::Divergence { step: grad_step, reason }) => {
                log.diverged = Some(DivergenceEvent {
                    env_step: step,
                    grad_step,
                    reason,
                });
                break;
            }
            Err(err) => return Err(err),
        }
        if out.done() {
            log.episode_returns.push(episode_return);
            episode_return = 0.0;
            hist.reset(&normalize(&e.reset(&mut env_rng), &bounds, norm))?;
        }
        if step % opts.eval_every == 0 {
            let returns = evaluate_policy(agent.online(), env, opts.eval_episodes, norm, agent_config.seed)?;
            let mean = |s: f64| if updates == 0 { f64::NAN } else { s / updates as f64 };
            let row = MetricsRow {
                step,
                avg_return: returns.iter().sum::<f64>() / returns.len().max(1) as f64,
                loss: mean(loss_sum),
                grad_norm: mean(norm_sum),
                epsilon: agent.epsilon(),
                lr: agent.lr(),
                wall_ms: started.elapsed().as_millis() as u64,
            };
            (loss_sum, norm_sum, updates) = (0.0, 0.0, 0);
            log.rows.push(row);
            on_eval(&row, &agent)?;
            if opts.stop_at_return.is_some_and(|t| row.avg_return >= t) {
                break;
            }
        }
    }
    Ok((agent, log))
}

/// [`train`] without an evaluation hook; returns only the log.
pub fn run_training(
    env: EnvName,
    agent_config: &AgentConfig,
    net: &QNetworkSpec,
    total_steps: u64,
    eval_every: u64,
) -> Result<MetricsLog> {
    train(env, agent_config, net, TrainOptions::new(total_steps, eval_every), |_, _| Ok(())).map(|(_, log)| log)
}
