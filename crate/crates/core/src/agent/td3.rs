use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ACTOR_OUTPUT_INIT, check_input, normal, td_loss, ActionScale, AgentConfig, Batch, UpdateInfo};
use crate::checkpoint::Checkpoint;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Matrix, Network, Tape};
use crate::representation::Representation;

/// Twin delayed deep deterministic policy gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Td3 {
    config: AgentConfig,
    spec: EnvSpec,
    scale: ActionScale,
    actor: Network<f32>,
    actor_target: Network<f32>,
    critic1: Network<f32>,
    critic2: Network<f32>,
    critic1_target: Network<f32>,
    critic2_target: Network<f32>,
    actor_opt: Adam<f32>,
    critic1_opt: Adam<f32>,
    critic2_opt: Adam<f32>,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Td3 {
    pub fn new(
        config: &AgentConfig,
        spec: &EnvSpec,
        z_obs_dim: usize,
        z_obs_action_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = spec.action_dim;
        let h = &config.hidden;
        let actor = Network::mlp_with_output_init(z_obs_dim, h, a, Activation::Relu, Activation::Tanh, ACTOR_OUTPUT_INIT, &mut rng)?;
        let critic1 = Network::mlp(z_obs_action_dim, h, 1, Activation::Relu, Activation::Identity, &mut rng)?;
        let critic2 = Network::mlp(z_obs_action_dim, h, 1, Activation::Relu, Activation::Identity, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::for_params(AdamConfig::with_lr(config.actor_lr), &actor.params()),
            critic1_opt: Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic1.params()),
            critic2_opt: Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic2.params()),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config: config.clone(),
            scale: ActionScale::new(spec),
            spec: spec.clone(),
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actor(&self) -> &Network<f32> {
        &self.actor
    }

    pub fn actor_target(&self) -> &Network<f32> {
        &self.actor_target
    }

    pub fn critics(&self) -> [&Network<f32>; 2] {
        [&self.critic1, &self.critic2]
    }

    pub fn critic_targets(&self) -> [&Network<f32>; 2] {
        [&self.critic1_target, &self.critic2_target]
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn act(&mut self, z_obs: &Matrix<f32>, explore: bool) -> Result<Matrix<f32>> {
        let mut a = self.actor.forward(z_obs)?;
        if explore {
            let sigma = self.config.exploration_noise as f32;
            for v in a.as_mut_slice() {
                *v += sigma * normal(&mut self.rng);
            }
        }
        self.scale.to_env(&mut a);
        Ok(a)
    }

    /// Clipped Gaussian smoothing noise in unit-action space.
    pub fn smoothing_noise(&mut self, rows: usize) -> Matrix<f32> {
        let sigma = self.config.target_noise as f32;
        let c = self.config.target_noise_clip as f32;
        let d = self.scale.dim();
        let data = (0..rows * d)
            .map(|_| (sigma * normal(&mut self.rng)).clamp(-c, c))
            .collect();
        Matrix::from_vec(rows, d, data).expect("sized")
    }

    /// Smoothed target-policy actions (environment units) used in critic targets.
    pub fn target_actions(&mut self, z_obs_next: &Matrix<f32>) -> Result<Matrix<f32>> {
        let mut a = self.actor_target.forward(z_obs_next)?;
        let noise = self.smoothing_noise(a.rows());
        for (v, n) in a.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *v = (*v + n).clamp(-1.0, 1.0);
        }
        self.scale.to_env(&mut a);
        Ok(a)
    }

    /// `scale * r + gamma * (1 - done) * min(Q1', Q2')(s', smoothed target action)`.
    pub fn td_targets(&mut self, rep: &dyn Representation, batch: &Batch) -> Result<Vec<f32>> {
        let gamma = self.config.gamma as f32;
        let scale = self.config.reward_scale as f32;
        let z_o_next = rep.encode_obs(&batch.next_obs)?;
        let next_a = self.target_actions(&z_o_next)?;
        let z_oa_next = rep.encode_obs_action(&z_o_next, &next_a)?;
        let q1t = self.critic1_target.forward(&z_oa_next)?;
        let q2t = self.critic2_target.forward(&z_oa_next)?;
        Ok((0..batch.len())
            .map(|i| {
                let q = q1t.get(i, 0).min(q2t.get(i, 0));
                scale * batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * q
            })
            .collect())
    }

    /// Deterministic policy gradient of `-mean Q1(z_oa(s, pi(s)))` w.r.t. actor parameters.
    pub fn actor_gradients(&self, rep: &dyn Representation, z_o: &Matrix<f32>) -> Result<(f32, Gradients<f32>)> {
        let mut actor_tape = Tape::new();
        let mut unit = self.actor.forward_taped(z_o, &mut actor_tape)?;
        self.scale.to_env(&mut unit);
        let mut rep_tape = Tape::new();
        let z_oa_pi = rep.encode_obs_action_taped(z_o, &unit, &mut rep_tape)?;
        let mut q_tape = Tape::new();
        let q = self.critic1.forward_taped(&z_oa_pi, &mut q_tape)?;
        let n = z_o.rows() as f32;
        let loss = -q.as_slice().iter().sum::<f32>() / n;
        let dq = Matrix::from_vec(q.rows(), 1, vec![-1.0 / n; q.rows()])?;
        let dz = self
            .critic1
            .backprop_loss(&q_tape, loss, &dq)
            .map_err(|e| Error::Numeric(format!("TD3 actor loss: {e}")))?
            .1;
        let mut da = rep.action_gradient(&rep_tape, &dz)?;
        // Through the affine scaling; clamping is inactive for tanh outputs.
        for r in 0..da.rows() {
            for (j, v) in da.row_mut(r).iter_mut().enumerate() {
                *v *= self.scale.scale[j];
            }
        }
        Ok((loss, self.actor.backward(&actor_tape, &da)?.0))
    }

    pub fn update(&mut self, rep: &dyn Representation, batch: &Batch) -> Result<UpdateInfo> {
        check_input(rep, self.spec.obs_dim, self.spec.action_dim)?;
        if batch.is_empty() {
            return Err(Error::Input("agent update on an empty batch".into()));
        }
        self.updates += 1;
        let y = self.td_targets(rep, batch)?;
        let z_o = rep.encode_obs(&batch.obs)?;
        let z_oa = rep.encode_obs_action(&z_o, &batch.actions)?;
        let mut critic_loss = 0.0;
        for (critic, opt) in [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ] {
            let mut tape = Tape::new();
            let q = critic.forward_taped(&z_oa, &mut tape)?;
            let (loss, grad) = td_loss(&q, &y);
            let (g, _) = critic
                .backprop_loss(&tape, loss, &grad)
                .map_err(|e| Error::Numeric(format!("TD3 critic loss: {e}")))?;
            critic.apply_gradients(opt, &g)?;
            critic_loss += loss;
        }

        let mut actor_loss = None;
        if self.updates.is_multiple_of(self.config.policy_delay as u64) {
            let (loss, g) = self.actor_gradients(rep, &z_o)?;
            self.actor.apply_gradients(&mut self.actor_opt, &g)?;
            actor_loss = Some(loss);

            let tau = self.config.tau as f32;
            self.actor_target.soft_update_from(&self.actor, tau)?;
            self.critic1_target.soft_update_from(&self.critic1, tau)?;
            self.critic2_target.soft_update_from(&self.critic2, tau)?;
        }
        Ok(UpdateInfo {
            critic_loss,
            actor_loss,
            alpha: None,
        })
    }

    pub fn checksum(&self) -> u64 {
        [
            &self.actor,
            &self.actor_target,
            &self.critic1,
            &self.critic2,
            &self.critic1_target,
            &self.critic2_target,
        ]
        .iter()
        .enumerate()
        .fold(0u64, |h, (i, n)| h ^ n.checksum().rotate_left(i as u32 * 7))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(
            "td3",
            serde_json::json!({
                "agent": serde_json::to_value(&self.config)?,
                "spec": serde_json::to_value(&self.spec)?,
            }),
        );
        ck.put_network("actor", &self.actor);
        ck.put_network("actor_target", &self.actor_target);
        ck.put_network("critic1", &self.critic1);
        ck.put_network("critic2", &self.critic2);
        ck.put_network("critic1_target", &self.critic1_target);
        ck.put_network("critic2_target", &self.critic2_target);
        ck.put_optimizer("actor_opt", &self.actor_opt);
        ck.put_optimizer("critic1_opt", &self.critic1_opt);
        ck.put_optimizer("critic2_opt", &self.critic2_opt);
        ck.scalars.insert("updates".into(), serde_json::json!(self.updates));
        ck.scalars.insert("rng".into(), serde_json::to_value(&self.rng)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("td3")?;
        let (config, spec) = super::agent_header(ck)?;
        let actor = ck.network("actor")?;
        let critic1 = ck.network("critic1")?;
        let critic2 = ck.network("critic2")?;
        let mut actor_opt = Adam::for_params(AdamConfig::with_lr(config.actor_lr), &actor.params());
        let mut critic1_opt = Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic1.params());
        let mut critic2_opt = Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic2.params());
        ck.restore_optimizer("actor_opt", &mut actor_opt)?;
        ck.restore_optimizer("critic1_opt", &mut critic1_opt)?;
        ck.restore_optimizer("critic2_opt", &mut critic2_opt)?;
        Ok(Self {
            scale: ActionScale::new(&spec),
            actor_target: ck.network("actor_target")?,
            critic1_target: ck.network("critic1_target")?,
            critic2_target: ck.network("critic2_target")?,
            actor,
            critic1,
            critic2,
            actor_opt,
            critic1_opt,
            critic2_opt,
            rng: super::scalar(ck, "rng")?,
            updates: super::scalar(ck, "updates")?,
            config,
            spec,
        })
    }
}
