use crate::error::{Result, TbqnError};
use crate::rng::RngState;

/// One stored interaction; histories are flat `[H * state_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_state: Vec<f32>,
    /// Environment failure or success; time-limit truncation is not terminal.
    pub terminal: bool,
}

/// A sampled minibatch in flat, row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub terminals: Vec<bool>,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    width: usize,
    states: Vec<f32>,
    next_states: Vec<f32>,
    actions: Vec<usize>,
    rewards: Vec<f32>,
    terminals: Vec<bool>,
    /// Slot the next insertion overwrites.
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, width: usize) -> Self {
        Self {
            capacity,
            width,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            head: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.width || t.next_state.len() != self.width {
            return Err(TbqnError::contract(format!(
                "transition width {}/{} does not match buffer width {}",
                t.state.len(),
                t.next_state.len(),
                self.width
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.next_states.extend_from_slice(&t.next_state);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
            self.len += 1;
        } else {
            let w = self.width;
            let slot = self.head;
            self.states[slot * w..(slot + 1) * w].copy_from_slice(&t.state);
            self.next_states[slot * w..(slot + 1) * w].copy_from_slice(&t.next_state);
            self.actions[slot] = t.action;
            self.rewards[slot] = t.reward;
            self.terminals[slot] = t.terminal;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    fn slot_of(&self, i: usize) -> usize {
        if self.len < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        }
    }

    /// The `i`-th oldest stored transition.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let s = self.slot_of(i);
        let w = self.width;
        Some(Transition {
            state: self.states[s * w..(s + 1) * w].to_vec(),
            action: self.actions[s],
            reward: self.rewards[s],
            next_state: self.next_states[s * w..(s + 1) * w].to_vec(),
            terminal: self.terminals[s],
        })
    }

    /// Uniform sampling with replacement.
    pub fn sample(&self, batch: usize, rng: &mut RngState) -> Result<Batch> {
        if self.len == 0 {
            return Err(TbqnError::contract("cannot sample from an empty replay buffer"));
        }
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.len)).collect();
        Ok(self.gather(&idx))
    }

    /// Assembles a batch from storage slots.
    pub fn gather(&self, slots: &[usize]) -> Batch {
        let w = self.width;
        let mut b = Batch {
            size: slots.len(),
            states: Vec::with_capacity(slots.len() * w),
            actions: Vec::with_capacity(slots.len()),
            rewards: Vec::with_capacity(slots.len()),
            next_states: Vec::with_capacity(slots.len() * w),
            terminals: Vec::with_capacity(slots.len()),
        };
        for &s in slots {
            b.states.extend_from_slice(&self.states[s * w..(s + 1) * w]);
            b.next_states.extend_from_slice(&self.next_states[s * w..(s + 1) * w]);
            b.actions.push(self.actions[s]);
            b.rewards.push(self.rewards[s]);
            b.terminals.push(self.terminals[s]);
        }
        b
    }
}
