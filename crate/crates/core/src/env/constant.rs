//! Stub environment with a constant reward: the dynamics are a bounded random
//! walk nudged by the action, so state prediction is learnable while reward
//! prediction is not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, StepResult};
use crate::error::Result;

const HORIZON: usize = 50;

#[derive(Debug, Clone)]
pub struct ConstantRewardEnv {
    spec: EnvSpec,
    reward: f64,
    x: Vec<f64>,
    rng: ChaCha8Rng,
    t: usize,
}

impl ConstantRewardEnv {
    pub fn new(obs_dim: usize, action_dim: usize, reward: f64) -> Self {
        Self {
            spec: EnvSpec {
                obs_dim,
                action_dim,
                action_low: vec![-1.0; action_dim],
                action_high: vec![1.0; action_dim],
                max_episode_steps: HORIZON,
                goal_dim: 0,
                success_threshold: None,
            },
            reward,
            x: vec![0.0; obs_dim],
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
        }
    }

    fn observe(&self) -> Vec<f32> {
        self.x.iter().map(|&v| v as f32).collect()
    }
}

impl Environment for ConstantRewardEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.x {
            *v = self.rng.gen_range(-1.0..1.0);
        }
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let a = self.spec.clip_action(action)?;
        let k = a.len();
        for (i, v) in self.x.iter_mut().enumerate() {
            let push = a[i % k] as f64 * 0.1;
            *v = (0.9 * *v + push + self.rng.gen_range(-0.05..0.05)).clamp(-2.0, 2.0);
        }
        self.t += 1;
        Ok(StepResult {
            observation: self.observe(),
            reward: self.reward,
            done: self.t >= HORIZON,
            terminal: false,
            success: None,
        })
    }
}
