use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::task::{aux_targets, AuxTaskKind};
use super::{representation_dims, Representation, MIN_REWARD_STD};
use crate::agent::{Batch, ReplayBuffer, Transition};
use crate::checkpoint::Checkpoint;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{mse, Activation, Adam, AdamConfig, Matrix, Network, Tape};

fn default_lr() -> f64 {
    3e-4
}

fn default_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    pub task: AuxTaskKind,
    /// DenseNet blocks per part.
    pub layers: usize,
    /// Width of every block.
    pub width: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl RepresentationConfig {
    pub fn new(task: AuxTaskKind, layers: usize, width: usize) -> Self {
        Self {
            task,
            layers,
            width,
            learning_rate: default_lr(),
            batch_size: default_batch(),
        }
    }

    pub fn validate(&self, field: &str, errors: &mut Vec<String>) {
        if self.layers == 0 {
            errors.push(format!("{field}.layers: must be at least 1"));
        }
        if self.width == 0 {
            errors.push(format!("{field}.width: must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!("{field}.learning_rate: must be positive"));
        }
        if self.batch_size == 0 {
            errors.push(format!("{field}.batch_size: must be at least 1"));
        }
    }
}

/// Per-dimension standardization of auxiliary targets, fitted on pretraining data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNormalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl TargetNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Dimensions with (near) zero spread keep unit scale.
    pub fn fit(targets: &Matrix<f32>) -> Self {
        let n = targets.rows().max(1) as f64;
        let dim = targets.cols();
        let mut mean = vec![0.0f64; dim];
        for r in 0..targets.rows() {
            for (m, &v) in mean.iter_mut().zip(targets.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for r in 0..targets.rows() {
            for ((s, &v), m) in var.iter_mut().zip(targets.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn normalize(&self, targets: &Matrix<f32>) -> Matrix<f32> {
        let mut out = targets.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Two-part DenseNet representation network with one linear prediction head.
#[derive(Debug, Clone)]
pub struct OfeNet {
    config: RepresentationConfig,
    obs_dim: usize,
    action_dim: usize,
    part1: Network<f32>,
    part2: Network<f32>,
    head: Network<f32>,
    optimizer: Adam<f32>,
    normalizer: TargetNormalizer,
}

impl OfeNet {
    pub fn new(config: RepresentationConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        config.validate("representation", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z_o, z_oa) = representation_dims(obs_dim, action_dim, config.layers, config.width);
        let part1 = Network::densenet(obs_dim, config.layers, config.width, Activation::Swish, &mut rng)?;
        let part2 = Network::densenet(
            z_o + action_dim,
            config.layers,
            config.width,
            Activation::Swish,
            &mut rng,
        )?;
        let target_dim = config.task.target_dim(obs_dim);
        let head = Network::mlp(z_oa, &[], target_dim, Activation::Identity, Activation::Identity, &mut rng)?;
        let optimizer = Self::make_optimizer(&config, &part1, &part2, &head);
        Ok(Self {
            normalizer: TargetNormalizer::identity(target_dim),
            config,
            obs_dim,
            action_dim,
            part1,
            part2,
            head,
            optimizer,
        })
    }

    fn make_optimizer(
        config: &RepresentationConfig,
        part1: &Network<f32>,
        part2: &Network<f32>,
        head: &Network<f32>,
    ) -> Adam<f32> {
        let mut params = part1.params();
        params.extend(part2.params());
        params.extend(head.params());
        Adam::for_params(AdamConfig::with_lr(config.learning_rate), &params)
    }

    pub fn config(&self) -> &RepresentationConfig {
        &self.config
    }

    pub fn task(&self) -> AuxTaskKind {
        self.config.task
    }

    pub fn part1(&self) -> &Network<f32> {
        &self.part1
    }

    pub fn part2(&self) -> &Network<f32> {
        &self.part2
    }

    pub fn head(&self) -> &Network<f32> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Network<f32> {
        &mut self.head
    }

    pub fn normalizer(&self) -> &TargetNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: TargetNormalizer) -> Result<()> {
        let dim = self.head.out_dim();
        if normalizer.mean.len() != dim || normalizer.std.len() != dim {
            return Err(Error::Shape(format!("normalizer must have dimension {dim}")));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer.step_count()
    }

    /// Head prediction in normalized target units.
    pub fn predict(&self, obs: &Matrix<f32>, actions: &Matrix<f32>) -> Result<Matrix<f32>> {
        let z_o = self.encode_obs(obs)?;
        let z_oa = self.encode_obs_action(&z_o, actions)?;
        self.head.forward(&z_oa)
    }

    /// MSE loss of the head on `batch`, without updating anything.
    pub fn aux_loss(&self, batch: &Batch) -> Result<f32> {
        let pred = self.predict(&batch.obs, &batch.actions)?;
        let target = self.normalizer.normalize(&aux_targets(self.config.task, batch)?);
        Ok(mse(&pred, &target)?.0)
    }

    /// One Adam step on all representation parameters; returns the pre-update loss.
    pub fn aux_train_step(&mut self, batch: &Batch) -> Result<f32> {
        if batch.is_empty() {
            return Err(Error::Input("auxiliary update on an empty batch".into()));
        }
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let mut th = Tape::new();
        let z_o = self.part1.forward_taped(&batch.obs, &mut t1)?;
        let z_oa = self.part2.forward_taped(&z_o.hcat(&batch.actions)?, &mut t2)?;
        let pred = self.head.forward_taped(&z_oa, &mut th)?;
        let target = self.normalizer.normalize(&aux_targets(self.config.task, batch)?);
        let (loss, dpred) = mse(&pred, &target).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("auxiliary {} loss: {m}", self.config.task)),
            other => other,
        })?;

        let (g_head, d_zoa) = self.head.backprop_loss(&th, loss, &dpred)?;
        let (g2, d_in2) = self.part2.backward(&t2, &d_zoa)?;
        let d_zo = d_in2.columns(0, self.part1.out_dim());
        let (g1, _) = self.part1.backward(&t1, &d_zo)?;

        let mut grads = g1.tensors();
        grads.extend(g2.tensors());
        grads.extend(g_head.tensors());
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric("auxiliary gradient is non-finite".into()));
        }
        let mut params = self.part1.params_mut();
        params.extend(self.part2.params_mut());
        params.extend(self.head.params_mut());
        self.optimizer.step(params, grads)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(
            "ofenet",
            serde_json::json!({
                "representation": serde_json::to_value(&self.config)?,
                "obs_dim": self.obs_dim,
                "action_dim": self.action_dim,
            }),
        );
        ck.put_network("part1", &self.part1);
        ck.put_network("part2", &self.part2);
        ck.put_network("head", &self.head);
        ck.put_optimizer("optimizer", &self.optimizer);
        let d = self.normalizer.mean.len();
        ck.put_tensor("normalizer.mean", vec![d], &self.normalizer.mean);
        ck.put_tensor("normalizer.std", vec![d], &self.normalizer.std);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("ofenet")?;
        let field = |k: &str| {
            ck.config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("config missing `{k}`")))
        };
        let config: RepresentationConfig = serde_json::from_value(field("representation")?)?;
        let obs_dim: usize = serde_json::from_value(field("obs_dim")?)?;
        let action_dim: usize = serde_json::from_value(field("action_dim")?)?;
        let part1 = ck.network("part1")?;
        let part2 = ck.network("part2")?;
        let head = ck.network("head")?;
        let (z_o, z_oa) = representation_dims(obs_dim, action_dim, config.layers, config.width);
        if part1.out_dim() != z_o || part2.out_dim() != z_oa || head.in_dim() != z_oa {
            return Err(Error::Checkpoint("network shapes disagree with config".into()));
        }
        let mut optimizer = Self::make_optimizer(&config, &part1, &part2, &head);
        ck.restore_optimizer("optimizer", &mut optimizer)?;
        let normalizer = TargetNormalizer {
            mean: ck.tensor("normalizer.mean")?,
            std: ck.tensor("normalizer.std")?,
        };
        let mut net = Self {
            normalizer: TargetNormalizer::identity(head.out_dim()),
            config,
            obs_dim,
            action_dim,
            part1,
            part2,
            head,
            optimizer,
        };
        net.set_normalizer(normalizer)?;
        Ok(net)
    }
}

impl PartialEq for OfeNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.obs_dim == other.obs_dim
            && self.action_dim == other.action_dim
            && self.part1 == other.part1
            && self.part2 == other.part2
            && self.head == other.head
            && self.optimizer == other.optimizer
            && self.normalizer == other.normalizer
    }
}

impl Representation for OfeNet {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn z_obs_dim(&self) -> usize {
        self.part1.out_dim()
    }

    fn z_obs_action_dim(&self) -> usize {
        self.part2.out_dim()
    }

    fn encode_obs(&self, obs: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.part1.forward(obs)
    }

    fn encode_obs_action(&self, z_obs: &Matrix<f32>, actions: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.check_pair(z_obs, actions)?;
        self.part2.forward(&z_obs.hcat(actions)?)
    }

    fn encode_obs_action_taped(
        &self,
        z_obs: &Matrix<f32>,
        actions: &Matrix<f32>,
        tape: &mut Tape<f32>,
    ) -> Result<Matrix<f32>> {
        self.check_pair(z_obs, actions)?;
        self.part2.forward_taped(&z_obs.hcat(actions)?, tape)
    }

    fn action_gradient(&self, tape: &Tape<f32>, grad_z_oa: &Matrix<f32>) -> Result<Matrix<f32>> {
        let d_in = self.part2.backward_input(tape, grad_z_oa)?;
        let z_o = self.part1.out_dim();
        Ok(d_in.columns(z_o, z_o + self.action_dim))
    }

    fn checksum(&self) -> u64 {
        self.part1
            .checksum()
            .rotate_left(1)
            ^ self.part2.checksum().rotate_left(2)
            ^ self.head.checksum().rotate_left(3)
    }
}

impl OfeNet {
    fn check_pair(&self, z_obs: &Matrix<f32>, actions: &Matrix<f32>) -> Result<()> {
        if z_obs.cols() != self.part1.out_dim() || actions.cols() != self.action_dim {
            return Err(Error::Shape(format!(
                "z_o/action widths {}/{} do not match {}/{}",
                z_obs.cols(),
                actions.cols(),
                self.part1.out_dim(),
                self.action_dim
            )));
        }
        Ok(())
    }
}

/// Fits target statistics on `buffer` and runs `updates` auxiliary steps on uniform
/// minibatches drawn from it.
///
/// Reward prediction refuses data whose reward spread is below [`MIN_REWARD_STD`].
pub fn pretrain<R: Rng + ?Sized>(
    net: &mut OfeNet,
    buffer: &ReplayBuffer,
    updates: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    if buffer.is_empty() || updates == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<usize> = (0..buffer.len()).collect();
    let full = buffer.batch(&all)?;
    if net.task() == AuxTaskKind::Rwp {
        let n = full.rewards.len() as f64;
        let mean = full.rewards.iter().map(|&r| r as f64).sum::<f64>() / n;
        let var = full
            .rewards
            .iter()
            .map(|&r| (r as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        if var.sqrt() < MIN_REWARD_STD {
            return Err(Error::DegenerateReward {
                std: var.sqrt(),
                samples: full.rewards.len(),
                threshold: MIN_REWARD_STD,
            });
        }
    }
    net.set_normalizer(TargetNormalizer::fit(&aux_targets(net.task(), &full)?))?;
    let batch_size = net.config.batch_size.min(buffer.len());
    let mut losses = Vec::with_capacity(updates);
    for _ in 0..updates {
        let batch = buffer.sample(batch_size, rng)?;
        losses.push(net.aux_train_step(&batch)?);
    }
    Ok(losses)
}

/// Collects `steps` uniformly random transitions from `env` and pretrains `net` on
/// them with as many auxiliary updates. Returns the filled buffer.
pub fn pretrain_on_env(
    net: &mut OfeNet,
    env: &mut dyn Environment,
    steps: usize,
    capacity: usize,
    seed: u64,
) -> Result<ReplayBuffer> {
    let spec = env.spec().clone();
    let mut buffer = ReplayBuffer::new(capacity.max(steps).max(1), &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if steps == 0 {
        return Ok(buffer);
    }
    let mut obs = env.reset(rng.gen());
    for _ in 0..steps {
        let action: Vec<f32> = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
            .collect();
        let step = env.step(&action)?;
        buffer.push(&Transition::from_step(&spec, &obs, &action, &step))?;
        obs = if step.done {
            env.reset(rng.gen())
        } else {
            step.observation
        };
    }
    pretrain(net, &buffer, steps, &mut rng)?;
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ConstantRewardEnv, Pendulum};

    fn transitions(n: usize, obs_dim: usize, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Transition {
                obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: vec![rng.gen_range(-1.0..1.0)],
                reward: rng.gen_range(-2.0..0.0),
                next_obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                done: false,
                achieved_goal: None,
                desired_goal: None,
            })
            .collect()
    }

    fn pendulum_net(task: AuxTaskKind) -> OfeNet {
        OfeNet::new(RepresentationConfig::new(task, 2, 10), 3, 1, 5).unwrap()
    }

    #[test]
    fn dims_and_prefixes() {
        let net = pendulum_net(AuxTaskKind::Fsdp);
        let batch = Batch::from_transitions(&transitions(4, 3, 1)).unwrap();
        let z_o = net.encode_obs(&batch.obs).unwrap();
        assert_eq!((z_o.cols(), net.z_obs_action_dim()), (23, 44));
        let z_oa = net.encode_obs_action(&z_o, &batch.actions).unwrap();
        assert_eq!(z_oa.cols(), 44);
        assert_eq!(net.head().in_dim(), 44);
        assert_eq!(net.head().out_dim(), 3);
        for r in 0..4 {
            assert_eq!(&z_o.row(r)[..3], batch.obs.row(r));
            assert_eq!(&z_oa.row(r)[..23], z_o.row(r));
            assert_eq!(z_oa.row(r)[23], batch.actions.get(r, 0));
        }
    }

    #[test]
    fn zero_layers_is_rejected() {
        let cfg = RepresentationConfig::new(AuxTaskKind::Rwp, 0, 10);
        assert!(matches!(OfeNet::new(cfg, 3, 1, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = pendulum_net(AuxTaskKind::Rwp);
        assert!(matches!(net.encode_obs(&Matrix::zeros(2, 4)), Err(Error::Shape(_))));
        let z_o = Matrix::zeros(2, 23);
        assert!(matches!(
            net.encode_obs_action(&z_o, &Matrix::zeros(2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn exact_prediction_gives_zero_loss_and_no_change() {
        let mut net = pendulum_net(AuxTaskKind::Rwp);
        let mut ts = transitions(8, 3, 2);
        ts.iter_mut().for_each(|t| t.reward = 0.5);
        let head = net.head_mut();
        head.layers_mut()[0].weights_mut().fill(0.0);
        head.layers_mut()[0].bias_mut()[0] = 0.5;
        let before = net.clone();
        let loss = net.aux_train_step(&Batch::from_transitions(&ts).unwrap()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.part1(), before.part1());
        assert_eq!(net.part2(), before.part2());
        assert_eq!(net.head(), before.head());
    }

    #[test]
    fn single_transition_loss_is_squared_error() {
        let mut net = pendulum_net(AuxTaskKind::Rwp);
        let ts = transitions(1, 3, 3);
        let batch = Batch::from_transitions(&ts).unwrap();
        let p = net.predict(&batch.obs, &batch.actions).unwrap().get(0, 0);
        let r = ts[0].reward;
        let loss = net.aux_train_step(&batch).unwrap();
        assert!((loss - (p - r).powi(2)).abs() <= 1e-6 * (p - r).powi(2).max(1.0));
    }

    #[test]
    fn overfits_one_batch() {
        for task in AuxTaskKind::ALL {
            let mut net = pendulum_net(task);
            let batch = Batch::from_transitions(&transitions(32, 3, 4)).unwrap();
            let first = net.aux_loss(&batch).unwrap();
            let mut last = first;
            for _ in 0..100 {
                last = net.aux_train_step(&batch).unwrap();
            }
            let after = net.aux_loss(&batch).unwrap();
            assert!(after < first && last < first, "{task}: {first} -> {after}");
        }
    }

    #[test]
    fn normalizer_floors_constant_dimensions() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 4.0, 1.0, 6.0, 1.0, 8.0]).unwrap();
        let n = TargetNormalizer::fit(&m);
        assert_eq!(n.mean, vec![1.0, 6.0]);
        assert_eq!(n.std[0], 1.0);
        assert!((n.std[1] - (8.0f32 / 3.0).sqrt()).abs() < 1e-6);
        let z = n.normalize(&m);
        assert_eq!(z.get(1, 1), 0.0);
    }

    #[test]
    fn pretrain_on_pendulum_fills_buffer() {
        let mut net = pendulum_net(AuxTaskKind::Fsp);
        let mut env = Pendulum::new();
        let buffer = pretrain_on_env(&mut net, &mut env, 1000, 100_000, 9).unwrap();
        assert_eq!(buffer.len(), 1000);
        assert_eq!(net.optimizer_steps(), 1000);
    }

    #[test]
    fn zero_pretraining_leaves_net_untouched() {
        let mut net = pendulum_net(AuxTaskKind::Rwp);
        let before = net.clone();
        let buffer = pretrain_on_env(&mut net, &mut Pendulum::new(), 0, 10, 1).unwrap();
        assert!(buffer.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn constant_reward_guard() {
        let cfg = |task| RepresentationConfig::new(task, 1, 8);
        let mut env = ConstantRewardEnv::new(4, 2, -1.0);
        let mut rwp = OfeNet::new(cfg(AuxTaskKind::Rwp), 4, 2, 0).unwrap();
        let err = pretrain_on_env(&mut rwp, &mut env, 300, 300, 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateReward { samples: 300, .. }), "{err}");
        for task in [AuxTaskKind::Fsp, AuxTaskKind::Fsdp] {
            let mut net = OfeNet::new(cfg(task), 4, 2, 0).unwrap();
            pretrain_on_env(&mut net, &mut env, 300, 300, 0).unwrap();
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut net = pendulum_net(AuxTaskKind::Fsdp);
        let _ = pretrain_on_env(&mut net, &mut Pendulum::new(), 300, 300, 2).unwrap();
        let bytes = net.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = OfeNet::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.checksum(), net.checksum());
    }

    #[test]
    fn action_gradient_matches_finite_difference() {
        let net = pendulum_net(AuxTaskKind::Rwp);
        let batch = Batch::from_transitions(&transitions(3, 3, 6)).unwrap();
        let z_o = net.encode_obs(&batch.obs).unwrap();
        let mut tape = Tape::new();
        let z = net.encode_obs_action_taped(&z_o, &batch.actions, &mut tape).unwrap();
        // d(sum z_oa)/da
        let ones = z.map(|_| 1.0);
        let g = net.action_gradient(&tape, &ones).unwrap();
        let sum = |a: &Matrix<f32>| -> f64 {
            let z = net.encode_obs_action(&z_o, a).unwrap();
            z.as_slice().iter().map(|&v| v as f64).sum()
        };
        for r in 0..3 {
            let h = 1e-2;
            let mut up = batch.actions.clone();
            up.set(r, 0, up.get(r, 0) + h);
            let mut dn = batch.actions.clone();
            dn.set(r, 0, dn.get(r, 0) - h);
            let fd = (sum(&up) - sum(&dn)) / (2.0 * h as f64);
            assert!((fd - g.get(r, 0) as f64).abs() < 1e-2 * fd.abs().max(1.0), "{fd} vs {}", g.get(r, 0));
        }
    }
}
