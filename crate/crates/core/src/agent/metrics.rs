use std::fmt::Write as _;

pub const METRICS_HEADER: [&str; 7] = ["step", "avg_return", "loss", "grad_norm", "epsilon", "lr", "wall_ms"];

/// One evaluation checkpoint of a training run.
///
/// `loss` and `grad_norm` are means over the gradient steps since the previous row
/// (NaN while the buffer is still collecting).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub avg_return: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    fn same_numbers(&self, other: &MetricsRow) -> bool {
        self.step == other.step
            && [
                (self.avg_return, other.avg_return),
                (self.loss, other.loss),
                (self.grad_norm, other.grad_norm),
                (self.epsilon, other.epsilon),
                (self.lr, other.lr),
            ]
            .iter()
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivergenceEvent {
    pub env_step: u64,
    pub grad_step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Undiscounted return of every completed training episode, in order.
    pub episode_returns: Vec<f64>,
    pub diverged: Option<DivergenceEvent>,
    pub steps_trained: u64,
}

impl MetricsLog {
    pub fn best_return(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.avg_return).reduce(f64::max)
    }

    pub fn last_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.avg_return)
    }

    /// Mean of the last `n` completed training episodes.
    pub fn recent_episode_mean(&self, n: usize) -> Option<f64> {
        if self.episode_returns.is_empty() || n == 0 {
            return None;
        }
        let tail = &self.episode_returns[self.episode_returns.len().saturating_sub(n)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Bitwise equality of everything except wall-clock timings.
    pub fn same_results(&self, other: &MetricsLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_numbers(b))
            && self.episode_returns == other.episode_returns
            && self.diverged == other.diverged
            && self.steps_trained == other.steps_trained
    }

    pub fn to_csv(&self) -> String {
        let mut out = METRICS_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.avg_return, r.loss, r.grad_norm, r.epsilon, r.lr, r.wall_ms
            );
        }
        out
    }
}
