use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ACTOR_OUTPUT_INIT, agent_header, check_input, normal, scalar, td_loss, ActionScale, AgentConfig, Batch, UpdateInfo};
use crate::checkpoint::Checkpoint;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Matrix, Network, Tape};
use crate::representation::Representation;

pub const LOG_STD_MIN: f32 = -5.0;
pub const LOG_STD_MAX: f32 = 2.0;
const HALF_LOG_2PI: f32 = 0.918_938_5;

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Reparameterized draw from the tanh-squashed Gaussian, kept for backprop.
struct PolicySample {
    /// Environment-unit actions.
    actions: Matrix<f32>,
    log_prob: Vec<f32>,
    /// tanh(u)
    squashed: Matrix<f32>,
    std: Matrix<f32>,
    eps: Matrix<f32>,
    /// d(log_std)/d(raw output)
    dls_draw: Matrix<f32>,
}

/// Soft actor-critic with automatic entropy tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Sac {
    config: AgentConfig,
    spec: EnvSpec,
    scale: ActionScale,
    actor: Network<f32>,
    critic1: Network<f32>,
    critic2: Network<f32>,
    critic1_target: Network<f32>,
    critic2_target: Network<f32>,
    actor_opt: Adam<f32>,
    critic1_opt: Adam<f32>,
    critic2_opt: Adam<f32>,
    log_alpha: f32,
    alpha_opt: Adam<f32>,
    target_entropy: f32,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Sac {
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
        let actor = Network::mlp_with_output_init(
            z_obs_dim,
            h,
            2 * a,
            Activation::Relu,
            Activation::Identity,
            ACTOR_OUTPUT_INIT,
            &mut rng,
        )?;
        let critic1 = Network::mlp(z_obs_action_dim, h, 1, Activation::Relu, Activation::Identity, &mut rng)?;
        let critic2 = Network::mlp(z_obs_action_dim, h, 1, Activation::Relu, Activation::Identity, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::for_params(AdamConfig::with_lr(config.actor_lr), &actor.params()),
            critic1_opt: Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic1.params()),
            critic2_opt: Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic2.params()),
            alpha_opt: Adam::new(AdamConfig::with_lr(config.alpha_lr), &[1]),
            log_alpha: (config.init_alpha as f32).ln(),
            target_entropy: config.target_entropy.map_or(-(a as f32), |t| t as f32),
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

    pub fn critics(&self) -> [&Network<f32>; 2] {
        [&self.critic1, &self.critic2]
    }

    pub fn critic_targets(&self) -> [&Network<f32>; 2] {
        [&self.critic1_target, &self.critic2_target]
    }

    pub fn alpha(&self) -> f32 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f32 {
        self.target_entropy
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    fn sample(&mut self, out: &Matrix<f32>) -> PolicySample {
        let d = self.scale.dim();
        let n = out.rows();
        let mut actions = Matrix::zeros(n, d);
        let mut squashed = Matrix::zeros(n, d);
        let mut std = Matrix::zeros(n, d);
        let mut eps = Matrix::zeros(n, d);
        let mut dls_draw = Matrix::zeros(n, d);
        let mut log_prob = vec![0.0f32; n];
        let half_range = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        for i in 0..n {
            let row = out.row(i);
            for j in 0..d {
                let th = row[d + j].tanh();
                let ls = LOG_STD_MIN + half_range * (th + 1.0);
                let s = ls.exp();
                let e = normal(&mut self.rng);
                let u = row[j] + s * e;
                let t = u.tanh();
                // log(1 - tanh(u)^2), stable for large |u|
                let log_jac = 2.0 * (std::f32::consts::LN_2 - u - softplus(-2.0 * u));
                log_prob[i] += -0.5 * e * e - ls - HALF_LOG_2PI - log_jac - self.scale.scale[j].ln();
                squashed.set(i, j, t);
                actions.set(i, j, t);
                std.set(i, j, s);
                eps.set(i, j, e);
                dls_draw.set(i, j, half_range * (1.0 - th * th));
            }
        }
        self.scale.to_env(&mut actions);
        PolicySample {
            actions,
            log_prob,
            squashed,
            std,
            eps,
            dls_draw,
        }
    }

    /// `explore` samples from the policy; otherwise the mode `tanh(mean)`.
    pub fn act(&mut self, z_obs: &Matrix<f32>, explore: bool) -> Result<Matrix<f32>> {
        let out = self.actor.forward(z_obs)?;
        if explore {
            return Ok(self.sample(&out).actions);
        }
        let mut a = out.columns(0, self.scale.dim()).map(|v| v.tanh());
        self.scale.to_env(&mut a);
        Ok(a)
    }

    /// Log-densities of fresh policy samples, as used in the entropy terms.
    pub fn sample_log_prob(&mut self, z_obs: &Matrix<f32>) -> Result<(Matrix<f32>, Vec<f32>)> {
        let out = self.actor.forward(z_obs)?;
        let s = self.sample(&out);
        Ok((s.actions, s.log_prob))
    }

    /// Targets `r + gamma * (1 - done) * (min(Q1', Q2') - alpha * log pi)` at fresh
    /// policy samples for `s'`.
    pub fn td_targets(&mut self, rep: &dyn Representation, batch: &Batch) -> Result<Vec<f32>> {
        let gamma = self.config.gamma as f32;
        let scale = self.config.reward_scale as f32;
        let alpha = self.alpha();
        let z_o_next = rep.encode_obs(&batch.next_obs)?;
        let (next_a, next_logp) = self.sample_log_prob(&z_o_next)?;
        let z_oa_next = rep.encode_obs_action(&z_o_next, &next_a)?;
        let q1t = self.critic1_target.forward(&z_oa_next)?;
        let q2t = self.critic2_target.forward(&z_oa_next)?;
        Ok((0..batch.len())
            .map(|i| {
                let v = q1t.get(i, 0).min(q2t.get(i, 0)) - alpha * next_logp[i];
                scale * batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * v
            })
            .collect())
    }

    /// Reparameterized gradient of `mean(alpha * log pi - min(Q1, Q2))` w.r.t. the
    /// actor parameters. Returns the loss, the gradients and the sample log-densities.
    pub fn actor_gradients(
        &mut self,
        rep: &dyn Representation,
        z_o: &Matrix<f32>,
    ) -> Result<(f32, Gradients<f32>, Vec<f32>)> {
        let alpha = self.alpha();
        let n = z_o.rows();
        let inv_n = 1.0 / n as f32;
        let mut actor_tape = Tape::new();
        let out = self.actor.forward_taped(z_o, &mut actor_tape)?;
        let s = self.sample(&out);
        let mut rep_tape = Tape::new();
        let z_oa_pi = rep.encode_obs_action_taped(z_o, &s.actions, &mut rep_tape)?;
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let q1 = self.critic1.forward_taped(&z_oa_pi, &mut t1)?;
        let q2 = self.critic2.forward_taped(&z_oa_pi, &mut t2)?;
        let mut dq1 = Matrix::zeros(n, 1);
        let mut dq2 = Matrix::zeros(n, 1);
        let mut actor_loss = 0.0f64;
        for i in 0..n {
            let (a, b) = (q1.get(i, 0), q2.get(i, 0));
            if a <= b {
                dq1.set(i, 0, -inv_n);
            } else {
                dq2.set(i, 0, -inv_n);
            }
            actor_loss += (alpha * s.log_prob[i] - a.min(b)) as f64;
        }
        let actor_loss = (actor_loss / n as f64) as f32;
        if !actor_loss.is_finite() {
            return Err(Error::Numeric(format!("SAC actor loss is {actor_loss}")));
        }
        let mut dz = self.critic1.backward_input(&t1, &dq1)?;
        let dz2 = self.critic2.backward_input(&t2, &dq2)?;
        for (x, y) in dz.as_mut_slice().iter_mut().zip(dz2.as_slice()) {
            *x += y;
        }
        let da = rep.action_gradient(&rep_tape, &dz)?;
        let d = self.scale.dim();
        let mut dout = Matrix::zeros(n, 2 * d);
        for i in 0..n {
            for j in 0..d {
                let t = s.squashed.get(i, j);
                let du = alpha * inv_n * 2.0 * t + da.get(i, j) * self.scale.scale[j] * (1.0 - t * t);
                let dls = -alpha * inv_n + du * s.std.get(i, j) * s.eps.get(i, j);
                dout.set(i, j, du);
                dout.set(i, d + j, dls * s.dls_draw.get(i, j));
            }
        }
        let (g, _) = self.actor.backward(&actor_tape, &dout)?;
        Ok((actor_loss, g, s.log_prob))
    }

    pub fn update(&mut self, rep: &dyn Representation, batch: &Batch) -> Result<UpdateInfo> {
        check_input(rep, self.spec.obs_dim, self.spec.action_dim)?;
        if batch.is_empty() {
            return Err(Error::Input("agent update on an empty batch".into()));
        }
        self.updates += 1;
        let n = batch.len();
        let inv_n = 1.0 / n as f32;
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
                .map_err(|e| Error::Numeric(format!("SAC critic loss: {e}")))?;
            critic.apply_gradients(opt, &g)?;
            critic_loss += loss;
        }

        let (actor_loss, g, log_prob) = self.actor_gradients(rep, &z_o)?;
        self.actor.apply_gradients(&mut self.actor_opt, &g)?;

        if self.config.auto_alpha {
            let mean: f32 = log_prob.iter().map(|lp| lp + self.target_entropy).sum::<f32>() * inv_n;
            let grad = [-mean];
            if !grad[0].is_finite() {
                return Err(Error::Numeric("SAC entropy-coefficient gradient is non-finite".into()));
            }
            let mut la = [self.log_alpha];
            self.alpha_opt.step(vec![&mut la[..]], vec![&grad[..]])?;
            self.log_alpha = la[0];
        }

        let tau = self.config.tau as f32;
        self.critic1_target.soft_update_from(&self.critic1, tau)?;
        self.critic2_target.soft_update_from(&self.critic2, tau)?;
        Ok(UpdateInfo {
            critic_loss,
            actor_loss: Some(actor_loss),
            alpha: Some(self.alpha()),
        })
    }

    pub fn checksum(&self) -> u64 {
        [
            &self.actor,
            &self.critic1,
            &self.critic2,
            &self.critic1_target,
            &self.critic2_target,
        ]
        .iter()
        .enumerate()
        .fold(self.log_alpha.to_bits() as u64, |h, (i, n)| {
            h ^ n.checksum().rotate_left(i as u32 * 7 + 3)
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(
            "sac",
            serde_json::json!({
                "agent": serde_json::to_value(&self.config)?,
                "spec": serde_json::to_value(&self.spec)?,
            }),
        );
        ck.put_network("actor", &self.actor);
        ck.put_network("critic1", &self.critic1);
        ck.put_network("critic2", &self.critic2);
        ck.put_network("critic1_target", &self.critic1_target);
        ck.put_network("critic2_target", &self.critic2_target);
        ck.put_optimizer("actor_opt", &self.actor_opt);
        ck.put_optimizer("critic1_opt", &self.critic1_opt);
        ck.put_optimizer("critic2_opt", &self.critic2_opt);
        ck.put_optimizer("alpha_opt", &self.alpha_opt);
        ck.put_tensor("log_alpha", vec![1], &[self.log_alpha]);
        ck.put_tensor("target_entropy", vec![1], &[self.target_entropy]);
        ck.scalars.insert("updates".into(), serde_json::json!(self.updates));
        ck.scalars.insert("rng".into(), serde_json::to_value(&self.rng)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("sac")?;
        let (config, spec) = agent_header(ck)?;
        let actor = ck.network("actor")?;
        let critic1 = ck.network("critic1")?;
        let critic2 = ck.network("critic2")?;
        let mut actor_opt = Adam::for_params(AdamConfig::with_lr(config.actor_lr), &actor.params());
        let mut critic1_opt = Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic1.params());
        let mut critic2_opt = Adam::for_params(AdamConfig::with_lr(config.critic_lr), &critic2.params());
        let mut alpha_opt = Adam::new(AdamConfig::with_lr(config.alpha_lr), &[1]);
        ck.restore_optimizer("actor_opt", &mut actor_opt)?;
        ck.restore_optimizer("critic1_opt", &mut critic1_opt)?;
        ck.restore_optimizer("critic2_opt", &mut critic2_opt)?;
        ck.restore_optimizer("alpha_opt", &mut alpha_opt)?;
        let one = |name: &str| -> Result<f32> {
            ck.tensor(name)?
                .first()
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("empty tensor `{name}`")))
        };
        Ok(Self {
            scale: ActionScale::new(&spec),
            critic1_target: ck.network("critic1_target")?,
            critic2_target: ck.network("critic2_target")?,
            actor,
            critic1,
            critic2,
            actor_opt,
            critic1_opt,
            critic2_opt,
            alpha_opt,
            log_alpha: one("log_alpha")?,
            target_entropy: one("target_entropy")?,
            rng: scalar(ck, "rng")?,
            updates: scalar(ck, "updates")?,
            config,
            spec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::testutil::*;
    use crate::representation::{AuxTaskKind, OfeNet, RepresentationConfig};

    #[test]
    fn log_prob_matches_density_of_squashed_gaussian() {
        // One-dimensional oracle: change of variables from N(mu, sigma) through
        // a = scale * tanh(u), computed directly in f64.
        let spec = pendulum_spec();
        let mut sac = Sac::new(&small_config(), &spec, 3, 4, 3).unwrap();
        let out = Matrix::from_vec(1, 2, vec![0.4f32, -0.3]).unwrap();
        let mut probe = sac.clone();
        let s = probe.sample(&out);
        let eps = s.eps.get(0, 0) as f64;
        let ls = -5.0 + 3.5 * ((-0.3f64).tanh() + 1.0);
        let sigma = ls.exp();
        let u = 0.4 + sigma * eps;
        let density_u = (-0.5 * eps * eps).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let da_du = 2.0 * (1.0 - u.tanh().powi(2));
        let expected = (density_u / da_du).ln();
        assert!((s.log_prob[0] as f64 - expected).abs() < 1e-4, "{} vs {expected}", s.log_prob[0]);
        assert!((s.actions.get(0, 0) as f64 - 2.0 * u.tanh()).abs() < 1e-5);
        let _ = sac.sample(&out);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let spec = pendulum_spec();
        let rep = OfeNet::new(RepresentationConfig::new(AuxTaskKind::Fsdp, 1, 4), 3, 1, 4).unwrap();
        let cfg = AgentConfig {
            init_alpha: 0.5,
            ..small_config()
        };
        let sac = Sac::new(&cfg, &spec, rep.z_obs_dim(), rep.z_obs_action_dim(), 5).unwrap();
        let batch = random_batch(&spec, 6, 7, false);
        let z_o = rep.encode_obs(&batch.obs).unwrap();
        let (_, grads, _) = sac.clone().actor_gradients(&rep, &z_o).unwrap();
        let analytic = grads.tensors();
        let loss_at = |t: usize, k: usize, delta: f32| -> f64 {
            let mut probe = sac.clone();
            probe.actor.params_mut()[t][k] += delta;
            probe.actor_gradients(&rep, &z_o).unwrap().0 as f64
        };
        let mut checked = 0;
        let mut worst = 0.0f64;
        for (t, g) in analytic.iter().enumerate() {
            for k in (0..g.len()).step_by(7) {
                let h = 1e-3f32;
                let fd = (loss_at(t, k, h) - loss_at(t, k, -h)) / (2.0 * h as f64);
                let err = (fd - g[k] as f64).abs() / fd.abs().max(g[k].abs() as f64).max(1e-2);
                worst = worst.max(err);
                checked += 1;
            }
        }
        assert!(checked > 20);
        assert!(worst < 5e-2, "worst relative error {worst}");
    }
}
