//! Hindsight relabeling of goal-conditioned episodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::env::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HerStrategy {
    /// Goals are achieved goals of the same or a later step in the episode.
    #[default]
    Future,
}

fn default_k() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HerConfig {
    #[serde(default)]
    pub strategy: HerStrategy,
    /// Relabeled copies per real transition.
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for HerConfig {
    fn default() -> Self {
        Self {
            strategy: HerStrategy::Future,
            k: default_k(),
        }
    }
}

/// Returns every real transition followed by its `k` relabeled copies.
///
/// For transition `t` a step `j` is drawn uniformly from `t..T`; the copy's desired
/// goal (also inside `obs` and `next_obs`) becomes the achieved goal after step `j`,
/// and its reward is recomputed by the environment.
pub fn her_relabel<R: Rng + ?Sized>(
    episode: &[Transition],
    config: &HerConfig,
    env: &dyn Environment,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let spec = env.spec();
    if !spec.is_goal_conditioned() {
        return Err(Error::Unsupported(
            "hindsight relabeling needs a goal-conditioned environment".into(),
        ));
    }
    let mut out = Vec::with_capacity(episode.len() * (1 + config.k));
    let goals = spec.desired_goal_range();
    for (t, tr) in episode.iter().enumerate() {
        let achieved = tr.achieved_goal.as_ref().ok_or_else(|| {
            Error::Unsupported("hindsight relabeling on a transition without goals".into())
        })?;
        out.push(tr.clone());
        for _ in 0..config.k {
            let j = rng.gen_range(t..episode.len());
            let goal = episode[j]
                .achieved_goal
                .clone()
                .ok_or_else(|| Error::Unsupported("transition without achieved goal".into()))?;
            let mut copy = tr.clone();
            copy.obs[goals.clone()].copy_from_slice(&goal);
            copy.next_obs[goals.clone()].copy_from_slice(&goal);
            copy.reward = env.compute_reward(achieved, &goal)? as f32;
            copy.desired_goal = Some(goal);
            out.push(copy);
        }
    }
    Ok(out)
}
