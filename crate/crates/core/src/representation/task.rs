use serde::{Deserialize, Serialize};

use crate::agent::{Batch, Transition};
use crate::error::Result;
use crate::nn::Matrix;

/// Auxiliary prediction target, always predicted from `(o_t, a_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTaskKind {
    /// Reward prediction: `r_{t+1}`.
    Rwp,
    /// Forward state prediction: `o_{t+1}`.
    Fsp,
    /// Forward state-difference prediction: `o_{t+1} - o_t`.
    Fsdp,
}

impl AuxTaskKind {
    pub const ALL: [AuxTaskKind; 3] = [AuxTaskKind::Rwp, AuxTaskKind::Fsp, AuxTaskKind::Fsdp];

    pub fn target_dim(self, obs_dim: usize) -> usize {
        match self {
            AuxTaskKind::Rwp => 1,
            AuxTaskKind::Fsp | AuxTaskKind::Fsdp => obs_dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AuxTaskKind::Rwp => "rwp",
            AuxTaskKind::Fsp => "fsp",
            AuxTaskKind::Fsdp => "fsdp",
        }
    }
}

impl std::fmt::Display for AuxTaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AuxTaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rwp" => Ok(AuxTaskKind::Rwp),
            "fsp" => Ok(AuxTaskKind::Fsp),
            "fsdp" => Ok(AuxTaskKind::Fsdp),
            other => Err(format!("unknown auxiliary task `{other}` (expected rwp, fsp or fsdp)")),
        }
    }
}

pub fn aux_target(task: AuxTaskKind, t: &Transition) -> Vec<f32> {
    match task {
        AuxTaskKind::Rwp => vec![t.reward],
        AuxTaskKind::Fsp => t.next_obs.clone(),
        AuxTaskKind::Fsdp => t.next_obs.iter().zip(&t.obs).map(|(n, o)| n - o).collect(),
    }
}

/// Targets for a whole batch, one row per transition.
pub fn aux_targets(task: AuxTaskKind, batch: &Batch) -> Result<Matrix<f32>> {
    match task {
        AuxTaskKind::Rwp => Matrix::from_vec(batch.len(), 1, batch.rewards.clone()),
        AuxTaskKind::Fsp => Ok(batch.next_obs.clone()),
        AuxTaskKind::Fsdp => Matrix::from_vec(
            batch.len(),
            batch.obs.cols(),
            batch
                .next_obs
                .as_slice()
                .iter()
                .zip(batch.obs.as_slice())
                .map(|(n, o)| n - o)
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(obs: Vec<f32>, next: Vec<f32>) -> Transition {
        Transition {
            obs,
            action: vec![0.1],
            reward: -0.5,
            next_obs: next,
            done: false,
            achieved_goal: None,
            desired_goal: None,
        }
    }

    #[test]
    fn fsdp_of_unchanged_state_is_zero() {
        let t = tr(vec![0.3, -0.2], vec![0.3, -0.2]);
        assert_eq!(aux_target(AuxTaskKind::Fsdp, &t), vec![0.0, 0.0]);
    }

    #[test]
    fn fsp_is_next_observation() {
        let t = tr(vec![0.3, -0.2], vec![1.5, 2.5]);
        assert_eq!(aux_target(AuxTaskKind::Fsp, &t), t.next_obs);
        assert_eq!(aux_target(AuxTaskKind::Rwp, &t), vec![-0.5]);
    }

    #[test]
    fn target_dims() {
        assert_eq!(AuxTaskKind::Rwp.target_dim(12), 1);
        assert_eq!(AuxTaskKind::Fsp.target_dim(12), 12);
        assert_eq!(AuxTaskKind::Fsdp.target_dim(12), 12);
    }

    #[test]
    fn parses_names() {
        for t in AuxTaskKind::ALL {
            assert_eq!(t.name().parse::<AuxTaskKind>().unwrap(), t);
        }
        assert!("sr".parse::<AuxTaskKind>().is_err());
    }
}
