//! Off-policy actor-critic agents that consume a frozen representation.
//!
//! The actor reads `z_o`; critics read `z_oa`. Agents receive the representation as
//! `&dyn Representation` on every call and never own or mutate it.

mod her;
mod replay;
mod sac;
mod td3;
mod transition;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{Init, Matrix};
use crate::representation::Representation;

pub use her::{her_relabel, HerConfig, HerStrategy};
pub use replay::{Batch, ReplayBuffer};
pub use sac::Sac;
pub use td3::Td3;
pub use transition::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Sac,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Td3 => "td3",
            Algorithm::Sac => "sac",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "td3" => Ok(Algorithm::Td3),
            "sac" => Ok(Algorithm::Sac),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected td3 or sac)"))),
        }
    }
}

/// Hyperparameters shared by both algorithms plus the algorithm-specific ones.
/// Fields that do not apply to the selected algorithm are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Rewards are multiplied by this in critic targets.
    pub reward_scale: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    /// Defaults to the environment's recommendation when absent.
    pub buffer_capacity: Option<usize>,
    /// TD3 exploration noise, as a fraction of the action half-range.
    pub exploration_noise: f64,
    /// TD3 target-policy smoothing noise and its clip, as fractions of the half-range.
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub policy_delay: usize,
    /// SAC initial entropy coefficient.
    pub init_alpha: f64,
    pub auto_alpha: bool,
    pub alpha_lr: f64,
    /// SAC entropy target; `-dim(a)` when absent.
    pub target_entropy: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            reward_scale: 1.0,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: vec![256, 256],
            buffer_capacity: None,
            exploration_noise: 0.1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            init_alpha: 0.1,
            auto_alpha: true,
            alpha_lr: 3e-4,
            target_entropy: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, field: &str, errors: &mut Vec<String>) {
        let mut bad = |name: &str, msg: &str| errors.push(format!("{field}.{name}: {msg}"));
        if !(0.0..=1.0).contains(&self.gamma) {
            bad("gamma", "must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bad("tau", "must lie in (0, 1]");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            bad("reward_scale", "must be positive");
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be at least 1");
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                bad(name, "must be positive");
            }
        }
        if self.hidden.contains(&0) {
            bad("hidden", "layer widths must be positive");
        }
        if self.buffer_capacity == Some(0) {
            bad("buffer_capacity", "must be at least 1");
        }
        for (name, v) in [
            ("exploration_noise", self.exploration_noise),
            ("target_noise", self.target_noise),
            ("target_noise_clip", self.target_noise_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(name, "must be non-negative");
            }
        }
        if self.policy_delay == 0 {
            bad("policy_delay", "must be at least 1");
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            bad("init_alpha", "must be positive");
        }
    }
}

/// Loss values from one agent update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateInfo {
    pub critic_loss: f32,
    /// Present only when the actor was updated.
    pub actor_loss: Option<f32>,
    pub alpha: Option<f32>,
}

/// Actor output layers start near zero so untrained policies act close to the
/// centre of the action range.
pub(crate) const ACTOR_OUTPUT_INIT: Init = Init::Uniform(3e-3);

/// Affine map between the actor's `[-1, 1]` output and environment action bounds.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ActionScale {
    pub low: Vec<f32>,
    pub high: Vec<f32>,
    pub scale: Vec<f32>,
    pub offset: Vec<f32>,
}

impl ActionScale {
    pub fn new(spec: &EnvSpec) -> Self {
        let scale = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        let offset = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect();
        Self {
            low: spec.action_low.clone(),
            high: spec.action_high.clone(),
            scale,
            offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Maps unit-range values in place.
    pub fn to_env(&self, m: &mut Matrix<f32>) {
        let d = self.dim();
        for r in 0..m.rows() {
            for (j, v) in m.row_mut(r).iter_mut().enumerate().take(d) {
                *v = (*v * self.scale[j] + self.offset[j]).clamp(self.low[j], self.high[j]);
            }
        }
    }
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    rng.sample(rand_distr::StandardNormal)
}

pub(crate) fn check_input(rep: &dyn Representation, spec_obs: usize, spec_act: usize) -> Result<()> {
    if rep.obs_dim() != spec_obs || rep.action_dim() != spec_act {
        return Err(Error::Shape(format!(
            "representation is for ({}, {}), agent for ({spec_obs}, {spec_act})",
            rep.obs_dim(),
            rep.action_dim()
        )));
    }
    Ok(())
}

/// A TD3 or SAC agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Td3(Td3),
    Sac(Sac),
}

impl Agent {
    /// Builds an agent whose networks fit the representation's output widths.
    pub fn new(
        algorithm: Algorithm,
        config: &AgentConfig,
        spec: &EnvSpec,
        z_obs_dim: usize,
        z_obs_action_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut errors = Vec::new();
        config.validate("agent", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(match algorithm {
            Algorithm::Td3 => Agent::Td3(Td3::new(config, spec, z_obs_dim, z_obs_action_dim, seed)?),
            Algorithm::Sac => Agent::Sac(Sac::new(config, spec, z_obs_dim, z_obs_action_dim, seed)?),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Agent::Td3(_) => Algorithm::Td3,
            Agent::Sac(_) => Algorithm::Sac,
        }
    }

    /// Actions in environment units for a batch of `z_o` rows.
    pub fn act(&mut self, z_obs: &Matrix<f32>, explore: bool) -> Result<Matrix<f32>> {
        match self {
            Agent::Td3(a) => a.act(z_obs, explore),
            Agent::Sac(a) => a.act(z_obs, explore),
        }
    }

    pub fn select_action(&mut self, z_obs: &[f32], explore: bool) -> Result<Vec<f32>> {
        Ok(self.act(&Matrix::row_vector(z_obs), explore)?.into_vec())
    }

    /// One gradient step on `batch`. `rep` is only read.
    pub fn update(&mut self, rep: &dyn Representation, batch: &Batch) -> Result<UpdateInfo> {
        match self {
            Agent::Td3(a) => a.update(rep, batch),
            Agent::Sac(a) => a.update(rep, batch),
        }
    }

    pub fn update_count(&self) -> u64 {
        match self {
            Agent::Td3(a) => a.update_count(),
            Agent::Sac(a) => a.update_count(),
        }
    }

    /// Hash over all parameters, including targets.
    pub fn checksum(&self) -> u64 {
        match self {
            Agent::Td3(a) => a.checksum(),
            Agent::Sac(a) => a.checksum(),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Agent::Td3(a) => a.to_checkpoint(),
            Agent::Sac(a) => a.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind.as_str() {
            "td3" => Ok(Agent::Td3(Td3::from_checkpoint(ck)?)),
            "sac" => Ok(Agent::Sac(Sac::from_checkpoint(ck)?)),
            other => Err(Error::Checkpoint(format!("`{other}` is not an agent checkpoint"))),
        }
    }
}

/// `mean((q - y)^2)` and its gradient w.r.t. `q`.
pub(crate) fn td_loss(q: &Matrix<f32>, y: &[f32]) -> (f32, Matrix<f32>) {
    let n = y.len() as f32;
    let mut grad = Matrix::zeros(q.rows(), 1);
    let mut loss = 0.0f64;
    for i in 0..y.len() {
        let d = q.get(i, 0) - y[i];
        loss += (d as f64) * (d as f64);
        grad.set(i, 0, 2.0 * d / n);
    }
    ((loss / n as f64) as f32, grad)
}

pub(crate) fn agent_header(ck: &Checkpoint) -> Result<(AgentConfig, EnvSpec)> {
    let get = |k: &str| {
        ck.config
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("config missing `{k}`")))
    };
    Ok((serde_json::from_value(get("agent")?)?, serde_json::from_value(get("spec")?)?))
}

pub(crate) fn scalar<T: serde::de::DeserializeOwned>(ck: &Checkpoint, name: &str) -> Result<T> {
    let v = ck
        .scalars
        .get(name)
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("missing scalar `{name}`")))?;
    Ok(serde_json::from_value(v)?)
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{Environment, Pendulum};

    pub fn small_config() -> AgentConfig {
        AgentConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            ..AgentConfig::default()
        }
    }

    pub fn pendulum_spec() -> EnvSpec {
        Pendulum::new().spec().clone()
    }

    pub fn random_batch(spec: &EnvSpec, n: usize, seed: u64, terminal: bool) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Transition> = (0..n)
            .map(|_| Transition {
                obs: (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: spec
                    .action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(&l, &h)| rng.gen_range(l..h))
                    .collect(),
                reward: rng.gen_range(-5.0..0.0),
                next_obs: (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                done: terminal,
                achieved_goal: None,
                desired_goal: None,
            })
            .collect();
        Batch::from_transitions(&ts).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::testutil::*;
    use super::*;
    use crate::representation::{IdentityRepresentation, OfeNet, RepresentationConfig, AuxTaskKind};

    fn agents(tau: f64, delay: usize) -> Vec<(Agent, Box<dyn Representation>)> {
        let spec = pendulum_spec();
        let cfg = AgentConfig {
            tau,
            policy_delay: delay,
            ..small_config()
        };
        let ofe = OfeNet::new(RepresentationConfig::new(AuxTaskKind::Fsp, 1, 4), 3, 1, 1).unwrap();
        let id = IdentityRepresentation::new(3, 1);
        let mut out: Vec<(Agent, Box<dyn Representation>)> = Vec::new();
        for alg in [Algorithm::Td3, Algorithm::Sac] {
            out.push((Agent::new(alg, &cfg, &spec, 3, 4, 2).unwrap(), Box::new(id)));
            let (zo, zoa) = (ofe.z_obs_dim(), ofe.z_obs_action_dim());
            out.push((Agent::new(alg, &cfg, &spec, zo, zoa, 2).unwrap(), Box::new(ofe.clone())));
        }
        out
    }

    #[test]
    fn greedy_actions_are_deterministic() {
        for (mut agent, rep) in agents(0.005, 2) {
            let z = rep.encode_obs(&Matrix::row_vector(&[0.3, -0.2, 1.0])).unwrap();
            let a = agent.act(&z, false).unwrap();
            assert_eq!(a, agent.act(&z, false).unwrap());
        }
    }

    #[test]
    fn unit_tau_copies_online_into_target() {
        let spec = pendulum_spec();
        for (mut agent, rep) in agents(1.0, 1) {
            agent.update(rep.as_ref(), &random_batch(&spec, 8, 3, false)).unwrap();
            match &agent {
                Agent::Td3(a) => {
                    assert_eq!(a.actor(), a.actor_target());
                    assert_eq!(a.critics(), a.critic_targets());
                }
                Agent::Sac(a) => assert_eq!(a.critics(), a.critic_targets()),
            }
        }
    }

    #[test]
    fn td3_actor_waits_for_policy_delay() {
        let spec = pendulum_spec();
        for (mut agent, rep) in agents(0.005, 2) {
            let Agent::Td3(_) = agent else { continue };
            for call in 1..=6u32 {
                let before = match &agent {
                    Agent::Td3(a) => a.actor().clone(),
                    _ => unreachable!(),
                };
                let info = agent.update(rep.as_ref(), &random_batch(&spec, 8, call as u64, false)).unwrap();
                let Agent::Td3(a) = &agent else { unreachable!() };
                if call % 2 == 1 {
                    assert_eq!(a.actor(), &before, "call {call}");
                    assert!(info.actor_loss.is_none());
                } else {
                    assert_ne!(a.actor(), &before, "call {call}");
                }
            }
        }
    }

    #[test]
    fn terminal_targets_do_not_bootstrap() {
        let spec = pendulum_spec();
        let batch = random_batch(&spec, 8, 4, true);
        for (agent, rep) in agents(0.005, 2) {
            let y = match agent {
                Agent::Td3(mut a) => a.td_targets(rep.as_ref(), &batch).unwrap(),
                Agent::Sac(mut a) => a.td_targets(rep.as_ref(), &batch).unwrap(),
            };
            assert_eq!(y, batch.rewards);
        }
    }

    #[test]
    fn updates_leave_representation_untouched() {
        let spec = pendulum_spec();
        for (mut agent, rep) in agents(0.005, 2) {
            let before = rep.checksum();
            for i in 0..4 {
                agent.update(rep.as_ref(), &random_batch(&spec, 8, i, false)).unwrap();
            }
            assert_eq!(rep.checksum(), before);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = pendulum_spec();
        for (mut agent, rep) in agents(0.005, 2) {
            for i in 0..3 {
                agent.update(rep.as_ref(), &random_batch(&spec, 8, i, false)).unwrap();
            }
            let bytes = agent.to_checkpoint().unwrap().to_bytes().unwrap();
            let back = Agent::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, agent);
            // Same future, including exploration noise.
            let mut a2 = back.clone();
            let z = rep.encode_obs(&Matrix::row_vector(&[0.1, 0.2, 0.3])).unwrap();
            assert_eq!(a2.act(&z, true).unwrap(), agent.act(&z, true).unwrap());
        }
    }

    #[test]
    fn actions_stay_in_bounds_over_10k_inputs() {
        use rand::{Rng, SeedableRng};
        let spec = pendulum_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for (mut agent, _) in agents(0.005, 2) {
            let zdim = match &agent {
                Agent::Td3(a) => a.actor().in_dim(),
                Agent::Sac(a) => a.actor().in_dim(),
            };
            let data: Vec<f32> = (0..10_000 * zdim).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let z = Matrix::from_vec(10_000, zdim, data).unwrap();
            for explore in [false, true] {
                let a = agent.act(&z, explore).unwrap();
                assert!(a.as_slice().iter().all(|&v| v >= spec.action_low[0] && v <= spec.action_high[0]));
            }
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in [Algorithm::Td3, Algorithm::Sac] {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("ppo".parse::<Algorithm>().is_err());
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let cfg = AgentConfig {
            gamma: 2.0,
            tau: 0.0,
            policy_delay: 0,
            ..AgentConfig::default()
        };
        let err = Agent::new(Algorithm::Td3, &cfg, &pendulum_spec(), 3, 4, 0).unwrap_err();
        let Error::Validation(fields) = err else { panic!() };
        assert_eq!(fields.len(), 3, "{fields:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn td3_smoothing_noise_is_clipped(seed in 0u64..1000, noise in 0.0f64..3.0, clip in 0.0f64..1.0) {
            let cfg = AgentConfig { target_noise: noise, target_noise_clip: clip, ..small_config() };
            let spec = pendulum_spec();
            let mut td3 = Td3::new(&cfg, &spec, 3, 4, seed).unwrap();
            let n = td3.smoothing_noise(64);
            prop_assert!(n.as_slice().iter().all(|v| v.abs() <= clip as f32));
            let z = Matrix::from_vec(64, 3, (0..192).map(|i| (i as f32 - 96.0) * 0.3).collect()).unwrap();
            let a = td3.target_actions(&z).unwrap();
            prop_assert!(a.as_slice().iter().all(|&v| (-2.0..=2.0).contains(&v)));
        }

        #[test]
        fn sac_alpha_stays_positive(seed in 0u64..50) {
            let spec = pendulum_spec();
            let rep = IdentityRepresentation::new(3, 1);
            let cfg = AgentConfig { alpha_lr: 0.5, ..small_config() };
            let mut agent = Agent::new(Algorithm::Sac, &cfg, &spec, 3, 4, seed).unwrap();
            for i in 0..10 {
                let info = agent.update(&rep, &random_batch(&spec, 8, seed * 100 + i, false)).unwrap();
                prop_assert!(info.alpha.unwrap() > 0.0);
            }
        }
    }
}
