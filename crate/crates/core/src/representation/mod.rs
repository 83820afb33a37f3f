//! Decoupled state representations.
//!
//! [`OfeNet`] expands an observation into `z_o` with a stack of MLP-DenseNet blocks,
//! then expands `(z_o, a)` into `z_oa` with a second stack. A linear head on `z_oa`
//! is trained by MSE on one auxiliary task while the RL agent consumes `z_o` (actor)
//! and `z_oa` (critics). [`IdentityRepresentation`] is the raw-input baseline on
//! the same interface.

mod ofenet;
mod task;

use crate::error::{Error, Result};
use crate::nn::{Matrix, Tape};

pub use ofenet::{pretrain, pretrain_on_env, OfeNet, RepresentationConfig, TargetNormalizer};
pub use task::{aux_target, aux_targets, AuxTaskKind};

/// Degenerate-reward guard for reward prediction during pretraining.
pub const MIN_REWARD_STD: f64 = 1e-6;

/// `(dim z_o, dim z_oa)` for `layers` blocks of width `width` per part.
pub fn representation_dims(obs_dim: usize, action_dim: usize, layers: usize, width: usize) -> (usize, usize) {
    let z_o = obs_dim + layers * width;
    (z_o, z_o + action_dim + layers * width)
}

/// Read-only view of a representation, as consumed by agents.
///
/// Agents only ever hold `&dyn Representation`, so they cannot modify its parameters.
pub trait Representation: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn z_obs_dim(&self) -> usize;
    fn z_obs_action_dim(&self) -> usize;

    fn encode_obs(&self, obs: &Matrix<f32>) -> Result<Matrix<f32>>;

    fn encode_obs_action(&self, z_obs: &Matrix<f32>, actions: &Matrix<f32>) -> Result<Matrix<f32>>;

    /// As [`Representation::encode_obs_action`], recording what
    /// [`Representation::action_gradient`] needs.
    fn encode_obs_action_taped(
        &self,
        z_obs: &Matrix<f32>,
        actions: &Matrix<f32>,
        tape: &mut Tape<f32>,
    ) -> Result<Matrix<f32>>;

    /// Gradient w.r.t. the actions given a gradient w.r.t. `z_oa`.
    fn action_gradient(&self, tape: &Tape<f32>, grad_z_oa: &Matrix<f32>) -> Result<Matrix<f32>>;

    fn checksum(&self) -> u64;
}

/// Baseline: `z_o = o`, `z_oa = (o, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityRepresentation {
    obs_dim: usize,
    action_dim: usize,
}

impl IdentityRepresentation {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self { obs_dim, action_dim }
    }
}

fn check_cols(m: &Matrix<f32>, expected: usize, what: &str) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::Shape(format!(
            "{what} has {} columns, expected {expected}",
            m.cols()
        )));
    }
    Ok(())
}

impl Representation for IdentityRepresentation {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn z_obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn z_obs_action_dim(&self) -> usize {
        self.obs_dim + self.action_dim
    }

    fn encode_obs(&self, obs: &Matrix<f32>) -> Result<Matrix<f32>> {
        check_cols(obs, self.obs_dim, "observation")?;
        Ok(obs.clone())
    }

    fn encode_obs_action(&self, z_obs: &Matrix<f32>, actions: &Matrix<f32>) -> Result<Matrix<f32>> {
        check_cols(z_obs, self.obs_dim, "z_o")?;
        check_cols(actions, self.action_dim, "action")?;
        z_obs.hcat(actions)
    }

    fn encode_obs_action_taped(
        &self,
        z_obs: &Matrix<f32>,
        actions: &Matrix<f32>,
        _tape: &mut Tape<f32>,
    ) -> Result<Matrix<f32>> {
        self.encode_obs_action(z_obs, actions)
    }

    fn action_gradient(&self, _tape: &Tape<f32>, grad_z_oa: &Matrix<f32>) -> Result<Matrix<f32>> {
        check_cols(grad_z_oa, self.z_obs_action_dim(), "z_oa gradient")?;
        Ok(grad_z_oa.columns(self.obs_dim, self.obs_dim + self.action_dim))
    }

    fn checksum(&self) -> u64 {
        0
    }
}
