//! Training protocol: random-policy warm-up, representation pretraining, then one
//! auxiliary update and one agent update per environment step on a shared minibatch,
//! with periodic greedy evaluation.

mod output;
mod suite;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{her_relabel, Agent, Batch, ReplayBuffer, Transition};
use crate::config::RunConfig;
use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::metrics::{LearningCurve, ScoreKind};
use crate::nn::Matrix;
use crate::representation::{pretrain, IdentityRepresentation, OfeNet, Representation};

pub use output::{load_curve_csv, EpisodeLine, RunRecord, RunSummary, RunWriter, CURVE_HEADER};
pub use suite::{run_suite, Manifest, ManifestEntry, RunStatus, SuiteOptions, MANIFEST_FILE};

/// Independent random streams derived from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Representation = 1,
    Agent = 2,
    EnvReset = 3,
    Sampling = 4,
    RandomPolicy = 5,
    Trajectory = 6,
    Evaluation = 1000,
}

fn stream(seed: u64, s: Stream, offset: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64 + offset);
    rng
}

/// Scores of one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub scores: Vec<f64>,
}

impl EvalRecord {
    pub fn from_scores(step: u64, scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Input("evaluation needs at least one episode".into()));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            step,
            mean: mean.clamp(min, max),
            min,
            max,
            scores,
        })
    }
}

/// Return of the episode, or 1/0 success at its final step for goal environments.
pub fn score_kind(spec: &EnvSpec) -> ScoreKind {
    if spec.is_goal_conditioned() {
        ScoreKind::SuccessRate
    } else {
        ScoreKind::Return
    }
}

/// Runs one episode from `seed` with `policy`; returns (score, transitions).
pub fn rollout(
    policy: &mut dyn FnMut(&[f32]) -> Result<Vec<f32>>,
    env: &mut dyn Environment,
    seed: u64,
) -> Result<(f64, Vec<Transition>)> {
    let spec = env.spec().clone();
    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    let mut success;
    let mut episode = Vec::with_capacity(spec.max_episode_steps);
    loop {
        let action = spec.clip_action(&policy(&obs)?)?;
        let step = env.step(&action)?;
        ret += step.reward;
        success = step.success.unwrap_or(false);
        episode.push(Transition::from_step(&spec, &obs, &action, &step));
        if step.done {
            break;
        }
        obs = step.observation;
    }
    let score = match score_kind(&spec) {
        ScoreKind::Return => ret,
        ScoreKind::SuccessRate => f64::from(u8::from(success)),
    };
    Ok((score, episode))
}

/// `episodes` deterministic-policy episodes. Episode seeds depend only on
/// `(seed, eval_index)`, so every variant is evaluated on the same start states.
pub fn evaluate(
    policy: &mut dyn FnMut(&[f32]) -> Result<Vec<f32>>,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    eval_index: u64,
    step: u64,
) -> Result<EvalRecord> {
    let mut rng = stream(seed, Stream::Evaluation, eval_index);
    let scores = (0..episodes)
        .map(|_| rollout(policy, env, rng.gen()).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    EvalRecord::from_scores(step, scores)
}

/// The representation in use: raw inputs for the baseline, OFENet otherwise.
#[derive(Debug, Clone)]
pub enum RepresentationState {
    Identity(IdentityRepresentation),
    OfeNet(Box<OfeNet>),
}

impl RepresentationState {
    pub fn as_dyn(&self) -> &dyn Representation {
        match self {
            RepresentationState::Identity(r) => r,
            RepresentationState::OfeNet(r) => r.as_ref(),
        }
    }
}

/// Checksums and batch indices around one system step, recorded when auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepAudit {
    pub step: u64,
    pub aux_indices: Option<Vec<usize>>,
    pub agent_indices: Vec<usize>,
    pub agent_before_aux: u64,
    pub agent_after_aux: u64,
    pub representation_before_agent: u64,
    pub representation_after_agent: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record a [`StepAudit`] for every system step.
    pub audit: bool,
    /// Print evaluation results to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub evals: Vec<EvalRecord>,
    pub audit: Vec<StepAudit>,
    pub agent: Agent,
    pub representation: RepresentationState,
    pub wall_seconds: f64,
    /// Total transitions stored, including hindsight copies.
    pub stored_transitions: usize,
}

impl RunOutcome {
    pub fn curve(&self) -> LearningCurve {
        LearningCurve {
            steps: self.evals.iter().map(|e| e.step).collect(),
            scores: self.evals.iter().map(|e| e.mean).collect(),
        }
    }
}

/// Collects finished episodes into the replay buffer, relabeling when configured.
struct Storage<'a> {
    buffer: ReplayBuffer,
    episode: Vec<Transition>,
    her: Option<&'a crate::agent::HerConfig>,
}

impl Storage<'_> {
    fn push(&mut self, t: Transition) -> Result<()> {
        if self.her.is_some() {
            self.episode.push(t);
            Ok(())
        } else {
            self.buffer.push(&t)
        }
    }

    fn end_episode<R: Rng>(&mut self, env: &dyn Environment, rng: &mut R) -> Result<()> {
        if let Some(cfg) = self.her {
            for t in her_relabel(&self.episode, cfg, env, rng)? {
                self.buffer.push(&t)?;
            }
            self.episode.clear();
        }
        Ok(())
    }
}

struct EpisodeTracker {
    ret: f64,
    length: usize,
}

/// Runs one configuration end to end. With `dir`, results are written there as the
/// run progresses.
pub fn run(cfg: &RunConfig, dir: Option<&Path>, options: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut writer = dir.map(|d| RunWriter::create(d, cfg)).transpose()?;
    let mut env = cfg.env.build()?;
    let mut eval_env = cfg.env.build()?;
    let spec = env.spec().clone();

    let mut representation = match &cfg.representation {
        None => RepresentationState::Identity(IdentityRepresentation::new(spec.obs_dim, spec.action_dim)),
        Some(rc) => {
            let seed = stream(cfg.seed, Stream::Representation, 0).gen();
            RepresentationState::OfeNet(Box::new(OfeNet::new(rc.clone(), spec.obs_dim, spec.action_dim, seed)?))
        }
    };
    let agent_seed = stream(cfg.seed, Stream::Agent, 0).gen();
    let mut agent = {
        let rep = representation.as_dyn();
        Agent::new(
            cfg.algorithm,
            &cfg.agent,
            &spec,
            rep.z_obs_dim(),
            rep.z_obs_action_dim(),
            agent_seed,
        )?
    };

    let her_factor = 1 + cfg.her.as_ref().map_or(0, |h| h.k);
    let capacity = cfg
        .agent
        .buffer_capacity
        .unwrap_or_else(|| cfg.env.default_buffer_capacity())
        .min(cfg.total_steps.max(1) * her_factor);
    let mut storage = Storage {
        buffer: ReplayBuffer::new(capacity.max(1), &spec)?,
        episode: Vec::new(),
        her: cfg.her.as_ref(),
    };
    let mut reset_rng = stream(cfg.seed, Stream::EnvReset, 0);
    let mut sample_rng = stream(cfg.seed, Stream::Sampling, 0);
    let mut random_rng = stream(cfg.seed, Stream::RandomPolicy, 0);

    // Warm-up with a uniform random policy; every variant collects the same data.
    let mut obs = env.reset(reset_rng.gen());
    let mut tracker = EpisodeTracker { ret: 0.0, length: 0 };
    for _ in 0..cfg.pretrain_steps {
        let action: Vec<f32> = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(&lo, &hi)| random_rng.gen_range(lo..=hi))
            .collect();
        obs = env_step(
            env.as_mut(),
            &spec,
            obs,
            action,
            &mut storage,
            &mut tracker,
            &mut reset_rng,
            &mut sample_rng,
            writer.as_mut().map(|w| (w, "random", 0)),
        )?;
    }
    if let RepresentationState::OfeNet(net) = &mut representation {
        pretrain(net, &storage.buffer, cfg.pretrain_steps, &mut sample_rng)
            .map_err(|e| run_error(cfg, e))?;
    }

    let mut evals = Vec::new();
    let mut eval_index = 0u64;
    let mut do_eval = |step: u64,
                       agent: &mut Agent,
                       rep: &dyn Representation,
                       writer: &mut Option<RunWriter>,
                       evals: &mut Vec<EvalRecord>|
     -> Result<()> {
        let mut policy = greedy_policy(agent, rep);
        let rec = evaluate(&mut policy, eval_env.as_mut(), cfg.eval_episodes, cfg.seed, eval_index, step)?;
        eval_index += 1;
        if options.progress {
            eprintln!(
                "[{}] step {:>7}  mean {:>10.3}  min {:>10.3}  max {:>10.3}",
                cfg.run_id(),
                rec.step,
                rec.mean,
                rec.min,
                rec.max
            );
        }
        if let Some(w) = writer {
            w.append_eval(&rec)?;
        }
        evals.push(rec);
        Ok(())
    };
    do_eval(0, &mut agent, representation.as_dyn(), &mut writer, &mut evals)?;

    let mut audit = Vec::new();
    let batch_size = cfg.agent.batch_size;
    for step in 1..=cfg.rl_steps() as u64 {
        let action = {
            let rep = representation.as_dyn();
            let z = rep.encode_obs(&Matrix::row_vector(&obs))?;
            agent.act(&z, true)?.into_vec()
        };
        obs = env_step(
            env.as_mut(),
            &spec,
            obs,
            action,
            &mut storage,
            &mut tracker,
            &mut reset_rng,
            &mut sample_rng,
            writer.as_mut().map(|w| (w, "train", step)),
        )?;

        if storage.buffer.len() >= batch_size {
            let indices = storage.buffer.sample_indices(batch_size, &mut sample_rng)?;
            let batch = storage.buffer.batch(&indices)?;
            system_step(
                step,
                &batch,
                &mut representation,
                &mut agent,
                options.audit.then_some(&mut audit),
            )
            .map_err(|e| run_error(cfg, e))?;
        }

        if step % cfg.eval_interval as u64 == 0 {
            do_eval(step, &mut agent, representation.as_dyn(), &mut writer, &mut evals)?;
        }
        if let (Some(w), Some(every)) = (writer.as_mut(), cfg.checkpoint_interval) {
            if step % every as u64 == 0 {
                w.write_checkpoints(Some(step), &agent, &representation)?;
            }
        }
    }

    if let Some(w) = writer.as_mut() {
        w.write_checkpoints(None, &agent, &representation)?;
        if cfg.save_trajectory {
            let mut rng = stream(cfg.seed, Stream::Trajectory, 0);
            let mut policy = greedy_policy(&mut agent, representation.as_dyn());
            let (_, episode) = rollout(&mut policy, eval_env.as_mut(), rng.gen())?;
            w.write_trajectory(&episode)?;
        }
        w.finish()?;
    }
    Ok(RunOutcome {
        config: cfg.clone(),
        evals,
        audit,
        agent,
        representation,
        wall_seconds: started.elapsed().as_secs_f64(),
        stored_transitions: storage.buffer.len(),
    })
}

fn run_error(cfg: &RunConfig, e: Error) -> Error {
    Error::Run {
        run: cfg.run_id(),
        source: Box::new(e),
    }
}

fn greedy_policy<'a>(
    agent: &'a mut Agent,
    rep: &'a dyn Representation,
) -> impl FnMut(&[f32]) -> Result<Vec<f32>> + 'a {
    move |o: &[f32]| {
        let z = rep.encode_obs(&Matrix::row_vector(o))?;
        Ok(agent.act(&z, false)?.into_vec())
    }
}

#[allow(clippy::too_many_arguments)]
fn env_step(
    env: &mut dyn Environment,
    spec: &EnvSpec,
    obs: Vec<f32>,
    action: Vec<f32>,
    storage: &mut Storage<'_>,
    tracker: &mut EpisodeTracker,
    reset_rng: &mut ChaCha8Rng,
    her_rng: &mut ChaCha8Rng,
    log: Option<(&mut RunWriter, &str, u64)>,
) -> Result<Vec<f32>> {
    let action = spec.clip_action(&action)?;
    let step = env.step(&action)?;
    tracker.ret += step.reward;
    tracker.length += 1;
    storage.push(Transition::from_step(spec, &obs, &action, &step))?;
    if !step.done {
        return Ok(step.observation);
    }
    storage.end_episode(env, her_rng)?;
    if let Some((w, phase, at)) = log {
        w.append_episode(&EpisodeLine {
            phase: phase.to_string(),
            step: at,
            episode_return: tracker.ret,
            length: tracker.length,
            success: step.success,
        })?;
    }
    *tracker = EpisodeTracker { ret: 0.0, length: 0 };
    Ok(env.reset(reset_rng.gen()))
}

/// Auxiliary update with the agent untouched, then the agent update with the
/// representation only borrowed immutably; both consume `batch`.
fn system_step(
    step: u64,
    batch: &Batch,
    representation: &mut RepresentationState,
    agent: &mut Agent,
    audit: Option<&mut Vec<StepAudit>>,
) -> Result<()> {
    let agent_before_aux = audit.as_ref().map(|_| agent.checksum());
    let mut aux_indices = None;
    if let RepresentationState::OfeNet(net) = representation {
        net.aux_train_step(batch)?;
        aux_indices = Some(batch.indices.clone());
    }
    let agent_after_aux = audit.as_ref().map(|_| agent.checksum());

    let rep = representation.as_dyn();
    let rep_before = audit.as_ref().map(|_| rep.checksum());
    agent.update(rep, batch)?;
    let rep_after = audit.as_ref().map(|_| rep.checksum());

    if let Some(log) = audit {
        log.push(StepAudit {
            step,
            aux_indices,
            agent_indices: batch.indices.clone(),
            agent_before_aux: agent_before_aux.unwrap_or_default(),
            agent_after_aux: agent_after_aux.unwrap_or_default(),
            representation_before_agent: rep_before.unwrap_or_default(),
            representation_after_agent: rep_after.unwrap_or_default(),
        });
    }
    Ok(())
}
