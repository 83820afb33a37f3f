//! Linear system with a configurable state size for scaling studies.
//!
//! `x' = A x + B u + noise` where `A` is 0.99 times the cyclic shift, so state mass
//! travels around a ring of `n` coordinates while decaying slowly, and `B`
//! actuates `m` evenly spaced coordinates. Reward is `-|x|^2 - 0.1 |u|^2`.
//!
//! Each coordinate passes an actuator every `n / m` steps, so a constant input `u`
//! settles at roughly `u / (1 - 0.99^(n/m))` per coordinate. Actions are limited to
//! `ACTION_LIMIT` to keep that worst case near the scale of the initial state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

pub const DECAY: f64 = 0.99;
pub const NOISE_STD: f64 = 0.01;
pub const CONTROL_COST: f64 = 0.1;
pub const HORIZON: usize = 200;
pub const ACTION_LIMIT: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearChainState {
    pub x: Vec<f64>,
    /// Row-major `n x n`.
    pub a: Vec<f64>,
    /// Row-major `n x m`.
    pub b: Vec<f64>,
}

impl LinearChainState {
    fn new(n: usize, m: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + (i + n - 1) % n] = DECAY;
        }
        let mut b = vec![0.0; n * m];
        for (j, idx) in actuated_indices(n, m).into_iter().enumerate() {
            b[idx * m + j] = 1.0;
        }
        Self {
            x: vec![0.0; n],
            a,
            b,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Upper bound on the spectral radius via the max row-sum norm.
    pub fn spectral_radius_bound(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| self.a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Coordinates driven by the action, evenly spaced around the ring.
pub fn actuated_indices(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|j| j * n / m).collect()
}

#[derive(Debug, Clone)]
pub struct LinearChain {
    spec: EnvSpec,
    state: LinearChainState,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    t: usize,
}

impl LinearChain {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::Config(format!(
                "linear chain needs 1 <= m <= n, got n={n}, m={m}"
            )));
        }
        Ok(Self {
            spec: EnvSpec {
                obs_dim: n,
                action_dim: m,
                action_low: vec![-ACTION_LIMIT; m],
                action_high: vec![ACTION_LIMIT; m],
                max_episode_steps: HORIZON,
                goal_dim: 0,
                success_threshold: None,
            },
            state: LinearChainState::new(n, m),
            rng: ChaCha8Rng::seed_from_u64(0),
            noise: Normal::new(0.0, NOISE_STD).expect("valid std"),
            t: 0,
        })
    }

    pub fn state(&self) -> &LinearChainState {
        &self.state
    }

    fn observe(&self) -> Vec<f32> {
        self.state.x.iter().map(|&v| v as f32).collect()
    }
}

impl Environment for LinearChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.state.x {
            *v = self.rng.gen_range(-1.0..1.0);
        }
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let u: Vec<f64> = self.spec.clip_action(action)?.iter().map(|&v| v as f64).collect();
        let n = self.state.n();
        let m = u.len();
        let x = &self.state.x;
        let reward = -x.iter().map(|v| v * v).sum::<f64>()
            - CONTROL_COST * u.iter().map(|v| v * v).sum::<f64>();
        let mut next = vec![0.0; n];
        for (i, out) in next.iter_mut().enumerate() {
            let ax: f64 = self.state.a[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, v)| a * v)
                .sum();
            let bu: f64 = self.state.b[i * m..(i + 1) * m]
                .iter()
                .zip(&u)
                .map(|(b, v)| b * v)
                .sum();
            *out = ax + bu + self.noise.sample(&mut self.rng);
        }
        self.state.x = next;
        self.t += 1;
        Ok(StepResult {
            observation: self.observe(),
            reward,
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
    fn spectral_radius_is_bounded() {
        let env = LinearChain::new(32, 8).unwrap();
        assert!(env.state().spectral_radius_bound() < 1.05);
        // A^n = 0.99^n I for the cyclic shift.
        let s = env.state();
        let n = s.n();
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let v0 = v.clone();
        for _ in 0..n {
            v = (0..n)
                .map(|i| (0..n).map(|j| s.a[i * n + j] * v[j]).sum())
                .collect();
        }
        for (a, b) in v.iter().zip(&v0) {
            assert!((a - DECAY.powi(n as i32) * b).abs() < 1e-9);
        }
    }

    #[test]
    fn actuators_are_spread_out() {
        assert_eq!(actuated_indices(32, 8), vec![0, 4, 8, 12, 16, 20, 24, 28]);
        assert_eq!(actuated_indices(3, 3), vec![0, 1, 2]);
    }

    #[test]
    fn actuated_coordinates_receive_the_action() {
        let mut env = LinearChain::new(8, 2).unwrap();
        let x0 = env.reset(4);
        let u = [0.1f32, -0.1];
        let r = env.step(&u).unwrap();
        for (j, &i) in actuated_indices(8, 2).iter().enumerate() {
            let expected = DECAY as f32 * x0[(i + 7) % 8] + u[j];
            assert!((r.observation[i] - expected).abs() < 0.05);
        }
        // Out-of-range actions are clipped to the limit.
        let mut a = LinearChain::new(8, 2).unwrap();
        let mut b = LinearChain::new(8, 2).unwrap();
        a.reset(1);
        b.reset(1);
        assert_eq!(a.step(&[5.0, -5.0]).unwrap(), b.step(&[ACTION_LIMIT, -ACTION_LIMIT]).unwrap());
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(LinearChain::new(4, 5).is_err());
        assert!(LinearChain::new(0, 0).is_err());
    }

    #[test]
    fn deterministic_with_noise() {
        let mut a = LinearChain::new(6, 2).unwrap();
        let mut b = LinearChain::new(6, 2).unwrap();
        a.reset(11);
        b.reset(11);
        for _ in 0..50 {
            assert_eq!(a.step(&[0.3, -0.1]).unwrap(), b.step(&[0.3, -0.1]).unwrap());
        }
    }
}
