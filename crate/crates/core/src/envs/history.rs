use crate::error::{Result, TbqnError};

/// The last `horizon` observations, oldest first, zero-padded at the front.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    horizon: usize,
    state_dim: usize,
    data: Vec<f64>,
}

impl HistoryBuffer {
    pub fn new(horizon: usize, state_dim: usize) -> Self {
        Self {
            horizon,
            state_dim,
            data: vec![0.0; horizon * state_dim],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Clears to zeros and places `obs` in the last slot.
    pub fn reset(&mut self, obs: &[f64]) -> Result<()> {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.push(obs)
    }

    /// Drops the oldest observation and appends `obs`.
    pub fn push(&mut self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.state_dim {
            return Err(TbqnError::contract(format!(
                "observation width {} does not match state_dim {}",
                obs.len(),
                self.state_dim
            )));
        }
        self.data.copy_within(self.state_dim.., 0);
        let start = self.data.len() - self.state_dim;
        self.data[start..].copy_from_slice(obs);
        Ok(())
    }

    /// Flat `[horizon * state_dim]` view, oldest observation first.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        &self.data[i * self.state_dim..(i + 1) * self.state_dim]
    }
}
