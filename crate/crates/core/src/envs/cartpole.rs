use super::{check_action, EnvName, EnvSpec, Environment, StepOutcome};
use crate::error::Result;
use crate::rng::RngState;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
/// Half the pole length.
pub const HALF_LENGTH: f64 = 0.5;
pub const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const X_THRESHOLD: f64 = 2.4;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: EnvName::CartPole,
        state_dim: 4,
        num_actions: 2,
        max_episode_steps: 500,
        reward_structure: "+1 per step, including the failing step",
        observation_bounds: vec![
            (-X_THRESHOLD, X_THRESHOLD),
            (-3.0, 3.0),
            (-THETA_THRESHOLD, THETA_THRESHOLD),
            (-3.5, 3.5),
        ],
    }
}

/// Cart-pole balancing with explicit Euler integration.
#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4],
    elapsed: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            spec: spec(),
            state: [0.0; 4],
            elapsed: 0,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        self.state = std::array::from_fn(|_| rng.uniform_range(-0.05, 0.05));
        self.elapsed = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.elapsed += 1;
        let [x, _, theta, _] = self.state;
        let terminal = !(-X_THRESHOLD..=X_THRESHOLD).contains(&x)
            || !(-THETA_THRESHOLD..=THETA_THRESHOLD).contains(&theta);
        Ok(StepOutcome {
            observation: self.state.to_vec(),
            reward: 1.0,
            terminal,
            truncated: !terminal && self.elapsed >= self.spec.max_episode_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert_eq!((GRAVITY, CART_MASS, POLE_MASS, HALF_LENGTH, FORCE_MAG, TAU), (9.8, 1.0, 0.1, 0.5, 10.0, 0.02));
        assert!((THETA_THRESHOLD - 0.20943951).abs() < 1e-8);
    }

    #[test]
    fn reset_distribution() {
        let mut env = CartPole::new();
        let mut rng = RngState::new(0);
        for _ in 0..100 {
            let obs = env.reset(&mut rng);
            assert!(obs.iter().all(|v| v.abs() <= 0.05));
        }
        let a = CartPole::new().reset(&mut RngState::new(9));
        let b = CartPole::new().reset(&mut RngState::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn terminal_thresholds() {
        let mut env = CartPole::new();
        env.set_state([0.0, 0.0, 0.2094, 0.1]);
        assert!(env.step(1).unwrap().terminal);
        let mut env = CartPole::new();
        env.set_state([2.399, 0.1, 0.0, 0.0]);
        assert!(env.step(1).unwrap().terminal);
        let mut env = CartPole::new();
        env.set_state([2.3, 0.0, 0.0, 0.0]);
        assert!(!env.step(1).unwrap().terminal);
    }
}
