use std::f64::consts::PI;

use super::{check_action, EnvName, EnvSpec, Environment, StepOutcome};
use crate::error::Result;
use crate::rng::RngState;

pub const DT: f64 = 0.2;
pub const LINK_LENGTH_1: f64 = 1.0;
pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
pub const LINK_COM_1: f64 = 0.5;
pub const LINK_COM_2: f64 = 0.5;
pub const LINK_MOI: f64 = 1.0;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
const G: f64 = 9.8;

pub(super) fn spec() -> EnvSpec {
    EnvSpec {
        name: EnvName::Acrobot,
        state_dim: 6,
        num_actions: 3,
        max_episode_steps: 500,
        reward_structure: "-1 per step, 0 on the step that reaches the target height",
        observation_bounds: vec![
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-MAX_VEL_1, MAX_VEL_1),
            (-MAX_VEL_2, MAX_VEL_2),
        ],
    }
}

/// Two-link underactuated pendulum, torque applied at the middle joint.
#[derive(Debug, Clone)]
pub struct Acrobot {
    spec: EnvSpec,
    /// `[theta1, theta2, dtheta1, dtheta2]`
    state: [f64; 4],
    elapsed: usize,
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    while x > hi {
        x -= span;
    }
    while x < lo {
        x += span;
    }
    x
}

fn dsdt(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let [t1, t2, dt1, dt2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + i2;
    let phi2 = m2 * lc2 * G * (t1 + t2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dt2 * dt2 * t2.sin()
        - 2.0 * m2 * l1 * lc2 * dt2 * dt1 * t2.sin()
        + (m1 * lc1 + m2 * l1) * G * (t1 - PI / 2.0).cos()
        + phi2;
    let ddt2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1 * dt1 * t2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddt1 = -(d2 * ddt2 + phi1) / d1;
    [dt1, dt2, ddt1, ddt2]
}

fn rk4(s: [f64; 4], torque: f64, h: f64) -> [f64; 4] {
    let add = |a: [f64; 4], k: [f64; 4], c: f64| -> [f64; 4] { std::array::from_fn(|i| a[i] + c * k[i]) };
    let k1 = dsdt(s, torque);
    let k2 = dsdt(add(s, k1, h / 2.0), torque);
    let k3 = dsdt(add(s, k2, h / 2.0), torque);
    let k4 = dsdt(add(s, k3, h), torque);
    std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

impl Acrobot {
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

    fn observation(&self) -> Vec<f64> {
        let [t1, t2, dt1, dt2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), dt1, dt2]
    }

    fn reached_target(&self) -> bool {
        let [t1, t2, ..] = self.state;
        -t1.cos() - (t1 + t2).cos() > 1.0
    }
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        self.state = std::array::from_fn(|_| rng.uniform_range(-0.1, 0.1));
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_action(&self.spec, action)?;
        let ns = rk4(self.state, TORQUES[action], DT);
        self.state = [
            wrap(ns[0], -PI, PI),
            wrap(ns[1], -PI, PI),
            ns[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            ns[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        self.elapsed += 1;
        let terminal = self.reached_target();
        Ok(StepOutcome {
            observation: self.observation(),
            reward: if terminal { 0.0 } else { -1.0 },
            terminal,
            truncated: !terminal && self.elapsed >= self.spec.max_episode_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanging_rest_is_equilibrium() {
        let mut env = Acrobot::new();
        let out = env.step(1).unwrap();
        // cos(pi/2) is not exactly zero, so rest drifts only at rounding level
        for (a, b) in out.observation.iter().zip([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn wrap_and_clip() {
        assert!((wrap(3.5, -PI, PI) - (3.5 - 2.0 * PI)).abs() < 1e-12);
        assert!((wrap(-3.5, -PI, PI) - (-3.5 + 2.0 * PI)).abs() < 1e-12);
        let mut env = Acrobot::new();
        env.set_state([0.0, 0.0, 100.0, -100.0]);
        env.step(1).unwrap();
        let s = env.state();
        assert!(s[2].abs() <= MAX_VEL_1 && s[3].abs() <= MAX_VEL_2);
        assert!(s[0].abs() <= PI && s[1].abs() <= PI);
    }

    #[test]
    fn upright_is_terminal() {
        let mut env = Acrobot::new();
        env.set_state([PI - 0.01, 0.0, 0.0, 0.0]);
        let out = env.step(1).unwrap();
        assert!(out.terminal);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn energy_is_roughly_conserved_without_torque() {
        // Potential plus kinetic energy of the free double pendulum.
        let energy = |s: [f64; 4]| {
            let [t1, t2, d1, d2] = s;
            let pot = -LINK_MASS_1 * G * LINK_COM_1 * t1.cos()
                - LINK_MASS_2 * G * (LINK_LENGTH_1 * t1.cos() + LINK_COM_2 * (t1 + t2).cos());
            let v1 = 0.5 * (LINK_MASS_1 * LINK_COM_1.powi(2) + LINK_MOI) * d1 * d1;
            let v2 = 0.5 * LINK_MASS_2
                * (LINK_LENGTH_1.powi(2) * d1 * d1
                    + LINK_COM_2.powi(2) * (d1 + d2).powi(2)
                    + 2.0 * LINK_LENGTH_1 * LINK_COM_2 * d1 * (d1 + d2) * t2.cos())
                + 0.5 * LINK_MOI * (d1 + d2).powi(2);
            pot + v1 + v2
        };
        let s0 = [0.5, -0.3, 0.0, 0.0];
        let mut s = s0;
        for _ in 0..20 {
            s = rk4(s, 0.0, DT);
        }
        assert!((energy(s) - energy(s0)).abs() < 0.05 * energy(s0).abs(), "{} vs {}", energy(s), energy(s0));
    }
}
