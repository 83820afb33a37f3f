//! Torque-limited pendulum swing-up with the classic-control dynamics.
//!
//! `theta = 0` is upright. Each step integrates
//! `theta_ddot = 3g/(2l) sin(theta) + 3/(m l^2) u` with semi-implicit Euler.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, StepResult};
use crate::error::Result;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const HORIZON: usize = 200;

/// Wraps an angle into `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    /// Angular acceleration under torque `u`.
    pub fn acceleration(&self, u: f64) -> f64 {
        3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u
    }

    /// Conserved quantity of the undamped, unforced dynamics, zero when hanging at rest.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot
            + 3.0 * GRAVITY / (2.0 * LENGTH) * (1.0 + self.theta.cos())
    }

    /// One semi-implicit Euler step, without velocity clipping.
    pub fn integrate(&self, u: f64) -> PendulumState {
        let theta_dot = self.theta_dot + self.acceleration(u) * DT;
        PendulumState {
            theta: self.theta + theta_dot * DT,
            theta_dot,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    state: PendulumState,
    t: usize,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 3,
                action_dim: 1,
                action_low: vec![-MAX_TORQUE as f32],
                action_high: vec![MAX_TORQUE as f32],
                max_episode_steps: HORIZON,
                goal_dim: 0,
                success_threshold: None,
            },
            state: PendulumState {
                theta: PI,
                theta_dot: 0.0,
            },
            t: 0,
        }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    /// Places the pendulum in an explicit state and restarts the episode clock.
    pub fn set_state(&mut self, state: PendulumState) -> Vec<f32> {
        self.state = PendulumState {
            theta: angle_normalize(state.theta),
            theta_dot: state.theta_dot.clamp(-MAX_SPEED, MAX_SPEED),
        };
        self.t = 0;
        self.observe()
    }

    fn observe(&self) -> Vec<f32> {
        vec![
            self.state.theta.cos() as f32,
            self.state.theta.sin() as f32,
            self.state.theta_dot as f32,
        ]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = PendulumState {
            theta: rng.gen_range(-PI..PI),
            theta_dot: rng.gen_range(-1.0..1.0),
        };
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let u = self.spec.clip_action(action)?[0] as f64;
        let s = self.state;
        let th = angle_normalize(s.theta);
        let cost = th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u;

        let next = s.integrate(u);
        let theta_dot = next.theta_dot.clamp(-MAX_SPEED, MAX_SPEED);
        self.state = PendulumState {
            theta: angle_normalize(s.theta + theta_dot * DT),
            theta_dot,
        };
        self.t += 1;
        Ok(StepResult {
            observation: self.observe(),
            reward: -cost,
            done: self.t >= HORIZON,
            terminal: false,
            success: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_observation() {
        let mut a = Pendulum::new();
        let mut b = Pendulum::new();
        assert_eq!(a.reset(42), b.reset(42));
        assert_ne!(a.reset(1), b.reset(2));
        assert_eq!(a.reset(3).len(), 3);
    }

    #[test]
    fn upright_at_rest_costs_nothing() {
        let mut env = Pendulum::new();
        env.set_state(PendulumState {
            theta: 0.0,
            theta_dot: 0.0,
        });
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn reward_formula_uses_normalized_angle() {
        let mut env = Pendulum::new();
        env.set_state(PendulumState {
            theta: 3.0,
            theta_dot: -2.0,
        });
        let r = env.step(&[1.5]).unwrap();
        let expected = -(9.0 + 0.1 * 4.0 + 0.001 * 2.25);
        assert!((r.reward - expected).abs() < 1e-12);
    }

    #[test]
    fn episode_ends_at_horizon() {
        let mut env = Pendulum::new();
        env.reset(0);
        for t in 1..=HORIZON {
            let r = env.step(&[0.3]).unwrap();
            assert_eq!(r.done, t == HORIZON);
            assert!(!r.terminal);
        }
    }

    #[test]
    fn state_stays_in_bounds() {
        let mut env = Pendulum::new();
        env.reset(9);
        for i in 0..1000 {
            env.step(&[if i % 50 < 25 { 2.0 } else { -2.0 }]).unwrap();
            let s = env.state();
            assert!((-PI..=PI).contains(&s.theta));
            assert!(s.theta_dot.abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn single_step_energy_drift_is_small() {
        // Unforced semi-implicit Euler, moderate speeds, upper quadrants around upright.
        // Near the hanging rest point total energy goes to zero and the relative bound is meaningless.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let s = PendulumState {
                theta: rng.gen_range(-PI / 4.0..PI / 4.0),
                theta_dot: rng.gen_range(-2.0..2.0),
            };
            let e0 = s.energy();
            let e1 = s.integrate(0.0).energy();
            assert!((e1 - e0).abs() < 0.01 * e0, "drift {} of {e0}", e1 - e0);
        }
    }
}
