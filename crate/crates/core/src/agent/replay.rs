//! Ring-buffer experience replay with uniform sampling.

use rand::Rng;

use super::transition::Transition;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// A minibatch in matrix form, plus the buffer slots it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub obs: Matrix<f32>,
    pub actions: Matrix<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Matrix<f32>,
    /// 1.0 where the transition was terminal.
    pub dones: Vec<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Builds a batch directly from transitions (slot indices are positional).
    pub fn from_transitions(transitions: &[Transition]) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let obs: Vec<&[f32]> = transitions.iter().map(|t| t.obs.as_slice()).collect();
        let act: Vec<&[f32]> = transitions.iter().map(|t| t.action.as_slice()).collect();
        let next: Vec<&[f32]> = transitions.iter().map(|t| t.next_obs.as_slice()).collect();
        Ok(Self {
            indices: (0..transitions.len()).collect(),
            obs: Matrix::from_rows(&obs)?,
            actions: Matrix::from_rows(&act)?,
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_obs: Matrix::from_rows(&next)?,
            dones: transitions.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    goal_dim: usize,
    obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_obs: Vec<f32>,
    dones: Vec<bool>,
    achieved: Vec<f32>,
    desired: Vec<f32>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, spec: &EnvSpec) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim: spec.obs_dim,
            action_dim: spec.action_dim,
            goal_dim: spec.goal_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            achieved: Vec::new(),
            desired: Vec::new(),
            len: 0,
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn write(dst: &mut Vec<f32>, slot: usize, width: usize, src: &[f32]) {
        let start = slot * width;
        if dst.len() < start + width {
            dst.extend_from_slice(src);
        } else {
            dst[start..start + width].copy_from_slice(src);
        }
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let goal_ok = |g: &Option<Vec<f32>>| match g {
            Some(v) => v.len() == self.goal_dim,
            None => self.goal_dim == 0,
        };
        if t.obs.len() != self.obs_dim
            || t.next_obs.len() != self.obs_dim
            || t.action.len() != self.action_dim
            || !goal_ok(&t.achieved_goal)
            || !goal_ok(&t.desired_goal)
        {
            return Err(Error::Shape("transition does not match replay layout".into()));
        }
        let slot = self.head;
        Self::write(&mut self.obs, slot, self.obs_dim, &t.obs);
        Self::write(&mut self.actions, slot, self.action_dim, &t.action);
        Self::write(&mut self.next_obs, slot, self.obs_dim, &t.next_obs);
        if let (Some(a), Some(d)) = (&t.achieved_goal, &t.desired_goal) {
            Self::write(&mut self.achieved, slot, self.goal_dim, a);
            Self::write(&mut self.desired, slot, self.goal_dim, d);
        }
        if self.rewards.len() <= slot {
            self.rewards.push(t.reward);
            self.dones.push(t.done);
        } else {
            self.rewards[slot] = t.reward;
            self.dones[slot] = t.done;
        }
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let o = self.obs_dim;
        let a = self.action_dim;
        let g = self.goal_dim;
        let goal = |v: &Vec<f32>| (g > 0).then(|| v[i * g..(i + 1) * g].to_vec());
        Some(Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
            achieved_goal: goal(&self.achieved),
            desired_goal: goal(&self.desired),
        })
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards[..self.len]
    }

    /// Uniform slot indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::Input("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let b = indices.len();
        let (o, a) = (self.obs_dim, self.action_dim);
        let mut obs = Vec::with_capacity(b * o);
        let mut next = Vec::with_capacity(b * o);
        let mut act = Vec::with_capacity(b * a);
        let mut rewards = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for &i in indices {
            if i >= self.len {
                return Err(Error::Input(format!("replay index {i} out of range {}", self.len)));
            }
            obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            next.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            act.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            rewards.push(self.rewards[i]);
            dones.push(if self.dones[i] { 1.0 } else { 0.0 });
        }
        Ok(Batch {
            indices: indices.to_vec(),
            obs: Matrix::from_vec(b, o, obs)?,
            actions: Matrix::from_vec(b, a, act)?,
            rewards,
            next_obs: Matrix::from_vec(b, o, next)?,
            dones,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        self.batch(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, Pendulum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(v: f32) -> Transition {
        Transition {
            obs: vec![v; 3],
            action: vec![v],
            reward: v,
            next_obs: vec![v + 1.0; 3],
            done: false,
            achieved_goal: None,
            desired_goal: None,
        }
    }

    #[test]
    fn overwrites_oldest_once_full() {
        let spec = Pendulum::new().spec().clone();
        let mut buf = ReplayBuffer::new(3, &spec).unwrap();
        for i in 0..5 {
            buf.push(&tr(i as f32)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f32> = buf.rewards().to_vec();
        rewards.sort_by(f32::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn batch_gathers_rows() {
        let spec = Pendulum::new().spec().clone();
        let mut buf = ReplayBuffer::new(10, &spec).unwrap();
        for i in 0..4 {
            buf.push(&tr(i as f32)).unwrap();
        }
        let b = buf.batch(&[2, 0, 2]).unwrap();
        assert_eq!(b.rewards, vec![2.0, 0.0, 2.0]);
        assert_eq!(b.next_obs.row(1), &[1.0, 1.0, 1.0]);
        assert_eq!(buf.get(3), Some(tr(3.0)));
    }

    #[test]
    fn rejects_wrong_shape_and_empty_sampling() {
        let spec = Pendulum::new().spec().clone();
        let mut buf = ReplayBuffer::new(10, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(4, &mut rng).is_err());
        let mut bad = tr(0.0);
        bad.obs.push(1.0);
        assert!(matches!(buf.push(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn sampling_is_uniform_within_five_sigma() {
        let spec = Pendulum::new().spec().clone();
        let n = 50;
        let mut buf = ReplayBuffer::new(n, &spec).unwrap();
        for i in 0..n + 7 {
            buf.push(&tr(i as f32)).unwrap();
        }
        let mut counts = vec![0usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        for _ in 0..draws / 100 {
            for i in buf.sample_indices(100, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() < 5.0 * sigma, "slot {i}: {c} vs {mean}");
        }
    }
}
