use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, StepResult};
use crate::error::{Error, Result};

/// One environment step; the unit of replay storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    /// True terminal state: no bootstrapping past this transition.
    pub done: bool,
    /// Goal reached after the step (goal-conditioned environments).
    pub achieved_goal: Option<Vec<f32>>,
    pub desired_goal: Option<Vec<f32>>,
}

impl Transition {
    /// Assembles a transition from the pre-step observation, the executed action and the
    /// step outcome, splitting goal fields out of goal-conditioned observations.
    pub fn from_step(spec: &EnvSpec, obs: &[f32], action: &[f32], step: &StepResult) -> Self {
        let (achieved_goal, desired_goal) = if spec.is_goal_conditioned() {
            (
                Some(step.observation[spec.achieved_goal_range()].to_vec()),
                Some(step.observation[spec.desired_goal_range()].to_vec()),
            )
        } else {
            (None, None)
        };
        Self {
            obs: obs.to_vec(),
            action: action.to_vec(),
            reward: step.reward as f32,
            next_obs: step.observation.clone(),
            done: step.terminal,
            achieved_goal,
            desired_goal,
        }
    }

    pub fn check_shape(&self, spec: &EnvSpec) -> Result<()> {
        let goal_ok = |g: &Option<Vec<f32>>| match g {
            Some(v) => v.len() == spec.goal_dim,
            None => spec.goal_dim == 0,
        };
        if self.obs.len() != spec.obs_dim
            || self.next_obs.len() != spec.obs_dim
            || self.action.len() != spec.action_dim
            || !goal_ok(&self.achieved_goal)
            || !goal_ok(&self.desired_goal)
        {
            return Err(Error::Shape(format!(
                "transition (obs {}, action {}, next_obs {}) does not match environment (obs {}, action {})",
                self.obs.len(),
                self.action.len(),
                self.next_obs.len(),
                spec.obs_dim,
                spec.action_dim
            )));
        }
        Ok(())
    }
}
