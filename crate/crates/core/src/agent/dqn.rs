use super::config::{AgentConfig, LossKind};
use super::lr_at;
use super::replay::{Batch, ReplayBuffer, Transition};
use crate::error::{Result, TbqnError};
use crate::qnet::{Mode, QNetwork, QNetworkSpec};
use crate::rng::RngState;
use crate::tensor::{clip_global_norm, global_grad_norm, Adam, Graph, Scalar, Tensor, Var};

/// Q-values beyond this magnitude trip the divergence guard.
pub const Q_LIMIT: f64 = 1e6;
pub const HUBER_DELTA: f64 = 1.0;

/// Epsilon-greedy choice; greedy ties go to the lowest index.
pub fn select_action<T: Copy + PartialOrd>(q: &[T], epsilon: f64, rng: &mut RngState) -> usize {
    assert!(!q.is_empty(), "select_action needs at least one Q-value");
    if rng.uniform() < epsilon {
        return rng.below(q.len());
    }
    argmax(q)
}

pub(crate) fn argmax<T: Copy + PartialOrd>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// TD targets from precomputed next-state Q rows (`[B * A]`).
///
/// With `q_next_online` the action is chosen by the online rows and valued by the target rows.
pub fn td_targets_from_q(
    rewards: &[f32],
    terminals: &[bool],
    q_next_target: &[f32],
    q_next_online: Option<&[f32]>,
    num_actions: usize,
    gamma: f64,
) -> Vec<f32> {
    rewards
        .iter()
        .zip(terminals)
        .enumerate()
        .map(|(i, (&r, &terminal))| {
            if terminal {
                return r;
            }
            let row = &q_next_target[i * num_actions..(i + 1) * num_actions];
            let next = match q_next_online {
                Some(online) => row[argmax(&online[i * num_actions..(i + 1) * num_actions])],
                None => row[argmax(row)],
            };
            (r as f64 + gamma * next as f64) as f32
        })
        .collect()
}

/// Bootstrapped targets for a sampled batch; computed without gradient tracking.
pub fn td_target(
    batch: &Batch,
    online: &QNetwork<f32>,
    target: &QNetwork<f32>,
    gamma: f64,
    double_q: bool,
) -> Result<Vec<f32>> {
    let q_target = target.q_values(&batch.next_states, batch.size)?;
    let q_online = if double_q {
        Some(online.q_values(&batch.next_states, batch.size)?)
    } else {
        None
    };
    Ok(td_targets_from_q(
        &batch.rewards,
        &batch.terminals,
        &q_target,
        q_online.as_deref(),
        target.spec().num_actions,
        gamma,
    ))
}

/// Mean loss between `pred` and constant targets.
pub fn loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &[T], kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::Mse => g.mse_loss(pred, target),
        LossKind::Huber => g.huber_loss(pred, target, T::of(HUBER_DELTA)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// The buffer is still filling; no update happened.
    pub collecting: bool,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub epsilon: f64,
    pub lr: f64,
}

/// Online and target networks, replay memory and optimizer for one run.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: AgentConfig,
    online: QNetwork<f32>,
    target: QNetwork<f32>,
    buffer: ReplayBuffer,
    adam: Adam,
    explore_rng: RngState,
    replay_rng: RngState,
    dropout_rng: RngState,
    env_steps: u64,
    grad_steps: u64,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, spec: QNetworkSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let root = RngState::new(config.seed);
        let online = QNetwork::new(spec.clone(), &mut root.derive("init"))?;
        let target = online.clone();
        let width = spec.history_horizon * spec.state_dim;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, width),
            adam: Adam::default(),
            explore_rng: root.derive("explore"),
            replay_rng: root.derive("replay"),
            dropout_rng: root.derive("dropout"),
            config,
            online,
            target,
            env_steps: 0,
            grad_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork<f32> {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut QNetwork<f32> {
        &mut self.online
    }

    pub fn target(&self) -> &QNetwork<f32> {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.env_steps)
    }

    pub fn lr(&self) -> f64 {
        lr_at(
            self.grad_steps + 1,
            self.config.lr,
            self.config.lr_schedule,
            self.online.spec().model_dim,
        )
    }

    /// Epsilon-greedy action for a flat history at the current exploration rate.
    pub fn act(&mut self, history: &[f32]) -> Result<usize> {
        let q = self.online.q_values(history, 1)?;
        Ok(select_action(&q, self.epsilon(), &mut self.explore_rng))
    }

    /// Stores a transition and counts one environment step.
    pub fn observe(&mut self, t: Transition) -> Result<()> {
        self.buffer.push(t)?;
        self.env_steps += 1;
        Ok(())
    }

    /// One gradient update on a uniformly sampled batch, or a no-op while collecting.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let mut report = StepReport {
            collecting: true,
            loss: 0.0,
            grad_norm: 0.0,
            epsilon: self.epsilon(),
            lr: self.lr(),
        };
        if self.buffer.len() < self.config.warmup_len() {
            return Ok(report);
        }
        let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng)?;
        self.update_on(&batch, &mut report)?;
        Ok(report)
    }

    /// Gradient update on an explicit batch.
    pub fn train_on(&mut self, batch: &Batch) -> Result<StepReport> {
        let mut report = StepReport {
            collecting: false,
            loss: 0.0,
            grad_norm: 0.0,
            epsilon: self.epsilon(),
            lr: self.lr(),
        };
        self.update_on(batch, &mut report)?;
        Ok(report)
    }

    fn update_on(&mut self, batch: &Batch, report: &mut StepReport) -> Result<()> {
        let step = self.grad_steps + 1;
        let spec = self.online.spec().clone();
        let targets = td_target(batch, &self.online, &self.target, self.config.gamma, self.config.double_q)?;

        let mut g = Graph::new();
        let vars = self.online.params().bind(&mut g);
        let x = g.constant(Tensor::new(
            &[batch.size, spec.history_horizon, spec.state_dim],
            batch.states.clone(),
        )?);
        let q = self.online.forward(&mut g, &vars, x, &mut Mode::Train(&mut self.dropout_rng))?;
        let max_q = g.value(q).data().iter().fold(0.0f64, |m, v| m.max((*v as f64).abs()));
        let q_sa = g.gather(q, &batch.actions)?;
        let l = loss(&mut g, q_sa, &targets, self.config.loss_kind)?;
        let loss_value = g.value(l).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(TbqnError::Divergence {
                step,
                reason: format!("non-finite loss {loss_value}"),
            });
        }
        if !(max_q <= Q_LIMIT) {
            return Err(TbqnError::Divergence {
                step,
                reason: format!("|Q| reached {max_q:e}"),
            });
        }
        g.backward(l)?;
        let params = self.online.params_mut();
        params.zero_grad();
        params.collect_grads(&mut g);
        let grad_norm = match self.config.grad_clip {
            Some(c) => clip_global_norm(params, c),
            None => global_grad_norm(params),
        };
        self.adam.step(params, report.lr)?;
        params.zero_grad();
        self.grad_steps = step;
        if step % self.config.target_update_period == 0 {
            self.target.params_mut().soft_update_from(self.online.params(), self.config.tau)?;
        }
        report.collecting = false;
        report.loss = loss_value;
        report.grad_norm = grad_norm;
        Ok(())
    }
}
