use super::{check_action, EnvName, EnvSpec, Environment, StepOutcome};
use crate::error::Result;
use crate::rng::RngState;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
pub const GOAL_VELOCITY: f64 = 0.0;
pub const FORCE: f64 = 0.001;
pub const GRAVITY: f64 = 0.0025;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: EnvName::MountainCar,
        state_dim: 2,
        num_actions: 3,
        max_episode_steps: 200,
        reward_structure: "-1 per step until the goal is reached",
        observation_bounds: vec![(MIN_POSITION, MAX_POSITION), (-MAX_SPEED, MAX_SPEED)],
    }
}

/// Under-powered car in a valley; actions push left, coast, push right.
#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: EnvSpec,
    position: f64,
    velocity: f64,
    elapsed: usize,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCar {
    pub fn new() -> Self {
        Self {
            spec: spec(),
            position: -0.5,
            velocity: 0.0,
            elapsed: 0,
        }
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        self.position = rng.uniform_range(-0.6, -0.4);
        self.velocity = 0.0;
        self.elapsed = 0;
        vec![self.position, self.velocity]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        self.velocity += (action as f64 - 1.0) * FORCE + (3.0 * self.position).cos() * (-GRAVITY);
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position += self.velocity;
        self.position = self.position.clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.elapsed += 1;
        let terminal = self.position >= GOAL_POSITION && self.velocity >= GOAL_VELOCITY;
        Ok(StepOutcome {
            observation: vec![self.position, self.velocity],
            reward: -1.0,
            terminal,
            truncated: !terminal && self.elapsed >= self.spec.max_episode_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_distribution() {
        let mut env = MountainCar::new();
        let mut rng = RngState::new(1);
        for _ in 0..100 {
            let obs = env.reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&obs[0]));
            assert_eq!(obs[1], 0.0);
        }
    }

    #[test]
    fn goal_is_terminal() {
        let mut env = MountainCar::new();
        env.set_state(0.49, 0.02);
        let out = env.step(2).unwrap();
        assert!(out.observation[0] >= 0.5);
        assert!(out.terminal);
        let mut env = MountainCar::new();
        env.set_state(0.3, 0.0);
        assert!(!env.step(1).unwrap().terminal);
    }

    #[test]
    fn left_wall_stops_car() {
        let mut env = MountainCar::new();
        env.set_state(-1.19, -0.07);
        let out = env.step(0).unwrap();
        assert_eq!(out.observation, vec![MIN_POSITION, 0.0]);
    }

    #[test]
    fn truncates_at_cap() {
        let mut env = MountainCar::new();
        env.reset(&mut RngState::new(0));
        let mut last = None;
        for _ in 0..200 {
            last = Some(env.step(1).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminal);
    }
}
