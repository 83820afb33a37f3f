//! Seedable, non-visual environments behind one stepping contract.

mod constant;
mod linear_chain;
mod pendulum;
mod puck_slide;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use constant::ConstantRewardEnv;
pub use linear_chain::{LinearChain, LinearChainState};
pub use pendulum::{angle_normalize, Pendulum, PendulumState};
pub use puck_slide::{PuckSlide, PuckSlideState};
pub use trajectory::{read_trajectory_jsonl, write_trajectory_jsonl, TrajectoryLine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f32>,
    pub action_high: Vec<f32>,
    pub max_episode_steps: usize,
    /// Zero for environments without goals. Goal-conditioned observations end with
    /// `[achieved_goal | desired_goal]`, each `goal_dim` wide.
    pub goal_dim: usize,
    pub success_threshold: Option<f64>,
}

impl EnvSpec {
    pub fn is_goal_conditioned(&self) -> bool {
        self.goal_dim > 0
    }

    pub fn achieved_goal_range(&self) -> std::ops::Range<usize> {
        let end = self.obs_dim - self.goal_dim;
        end - self.goal_dim..end
    }

    pub fn desired_goal_range(&self) -> std::ops::Range<usize> {
        self.obs_dim - self.goal_dim..self.obs_dim
    }

    /// Clips `action` into bounds; non-finite entries are an input error.
    pub fn clip_action(&self, action: &[f32]) -> Result<Vec<f32>> {
        if action.len() != self.action_dim {
            return Err(Error::Shape(format!(
                "action has {} entries, environment expects {}",
                action.len(),
                self.action_dim
            )));
        }
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| {
                if a.is_finite() {
                    Ok(a.clamp(lo, hi))
                } else {
                    Err(Error::Input(format!("non-finite action component {a}")))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f32>,
    pub reward: f64,
    /// The episode is over (time limit reached or terminal state).
    pub done: bool,
    /// The episode ended in a true terminal state; bootstrapping stops here.
    /// Time-limit endings are not terminal.
    pub terminal: bool,
    /// Goal-conditioned environments only.
    pub success: Option<bool>,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic initial state for `seed`; returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<f32>;

    fn step(&mut self, action: &[f32]) -> Result<StepResult>;

    /// Reward for reaching `achieved` when `desired` was asked for.
    fn compute_reward(&self, _achieved: &[f32], _desired: &[f32]) -> Result<f64> {
        Err(Error::Unsupported(
            "compute_reward on an environment without goals".into(),
        ))
    }

    fn success(&self, _achieved: &[f32], _desired: &[f32]) -> Result<bool> {
        Err(Error::Unsupported("success on an environment without goals".into()))
    }
}

/// Environment selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    // Braced so that unknown keys are rejected.
    Pendulum {},
    PuckSlide {},
    LinearChain {
        n: usize,
        m: usize,
    },
    ConstantReward {
        obs_dim: usize,
        action_dim: usize,
        reward: f64,
    },
}

impl EnvConfig {
    pub fn name(&self) -> String {
        match self {
            EnvConfig::Pendulum {} => "pendulum".into(),
            EnvConfig::PuckSlide {} => "puck_slide".into(),
            EnvConfig::LinearChain { n, m } => format!("linear_chain_{n}x{m}"),
            EnvConfig::ConstantReward { .. } => "constant_reward".into(),
        }
    }

    pub fn validate(&self, field: &str, errors: &mut Vec<String>) {
        match *self {
            EnvConfig::LinearChain { n, m } => {
                if n == 0 {
                    errors.push(format!("{field}.n: must be at least 1"));
                }
                if m == 0 || m > n {
                    errors.push(format!("{field}.m: must be in 1..=n ({n}), got {m}"));
                }
            }
            EnvConfig::ConstantReward {
                obs_dim,
                action_dim,
                reward,
            } => {
                if obs_dim == 0 {
                    errors.push(format!("{field}.obs_dim: must be at least 1"));
                }
                if action_dim == 0 {
                    errors.push(format!("{field}.action_dim: must be at least 1"));
                }
                if !reward.is_finite() {
                    errors.push(format!("{field}.reward: must be finite"));
                }
            }
            EnvConfig::Pendulum {} | EnvConfig::PuckSlide {} => {}
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        let mut errors = Vec::new();
        self.validate("env", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(match *self {
            EnvConfig::Pendulum {} => Box::new(Pendulum::new()),
            EnvConfig::PuckSlide {} => Box::new(PuckSlide::new()),
            EnvConfig::LinearChain { n, m } => Box::new(LinearChain::new(n, m)?),
            EnvConfig::ConstantReward {
                obs_dim,
                action_dim,
                reward,
            } => Box::new(ConstantRewardEnv::new(obs_dim, action_dim, reward)),
        })
    }

    pub fn is_goal_conditioned(&self) -> bool {
        matches!(self, EnvConfig::PuckSlide {})
    }

    /// Replay capacity used when the agent configuration leaves it unset.
    pub fn default_buffer_capacity(&self) -> usize {
        match self {
            EnvConfig::Pendulum {} => 100_000,
            _ => 1_000_000,
        }
    }

    /// Representation size `(layers per part, width)` when the configuration leaves it unset.
    pub fn default_representation_size(&self) -> (usize, usize) {
        match self {
            EnvConfig::Pendulum {} => (2, 10),
            _ => (4, 20),
        }
    }

    /// Default evaluation cadence: `(interval, episodes)`.
    pub fn default_evaluation(&self) -> (usize, usize) {
        match self {
            EnvConfig::Pendulum {} => (1000, 10),
            EnvConfig::PuckSlide {} => (5000, 100),
            _ => (5000, 10),
        }
    }
}

pub(crate) fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
