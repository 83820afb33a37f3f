//! Fixtures shared by the benchmarks.

use auxrep_core::agent::{Batch, ReplayBuffer, Transition};
use auxrep_core::env::{EnvConfig, Environment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Replay buffer filled with `n` random-policy transitions from `env`.
pub fn filled_buffer(env: &EnvConfig, n: usize, seed: u64) -> ReplayBuffer {
    let mut e: Box<dyn Environment> = env.build().expect("valid env");
    let spec = e.spec().clone();
    let mut buf = ReplayBuffer::new(n, &spec).expect("capacity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = e.reset(rng.gen());
    for _ in 0..n {
        let action: Vec<f32> = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
            .collect();
        let step = e.step(&action).expect("step");
        buf.push(&Transition::from_step(&spec, &obs, &action, &step)).expect("push");
        obs = if step.done { e.reset(rng.gen()) } else { step.observation };
    }
    buf
}

pub fn batch(buf: &ReplayBuffer, size: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    buf.sample(size, &mut rng).expect("non-empty buffer")
}
