//! Goal-conditioned puck sliding on a 2m x 2m low-friction table.
//!
//! A velocity-controlled actuator confined to a 0.5m disk around the origin must
//! strike a puck so that it slides to a goal sampled outside its reach. The dense
//! reward is the negative puck-goal distance, so it stays constant until contact.
//!
//! Observation (12): actuator position, actuator velocity, puck position, puck
//! velocity, achieved goal (puck position), desired goal. Velocities are in m/step.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{euclidean, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

pub const TABLE_HALF_WIDTH: f64 = 1.0;
pub const REACH_RADIUS: f64 = 0.5;
pub const ACTUATOR_SPEED: f64 = 0.05;
pub const FRICTION: f64 = 0.005;
pub const CONTACT_DISTANCE: f64 = 0.06;
pub const GOAL_RADIUS_MIN: f64 = 0.8;
pub const GOAL_RADIUS_MAX: f64 = 1.4;
pub const PUCK_RADIUS_MIN: f64 = 0.1;
pub const PUCK_RADIUS_MAX: f64 = 0.2;
pub const SUCCESS_THRESHOLD: f64 = 0.05;
pub const HORIZON: usize = 100;
/// Goals keep this distance from the table edge.
const GOAL_EDGE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuckSlideState {
    pub actuator: [f64; 2],
    pub actuator_vel: [f64; 2],
    pub puck: [f64; 2],
    pub puck_vel: [f64; 2],
    pub goal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct PuckSlide {
    spec: EnvSpec,
    state: PuckSlideState,
    t: usize,
}

impl Default for PuckSlide {
    fn default() -> Self {
        Self::new()
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn polar(r: f64, angle: f64) -> [f64; 2] {
    [r * angle.cos(), r * angle.sin()]
}

impl PuckSlide {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 12,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: HORIZON,
                goal_dim: 2,
                success_threshold: Some(SUCCESS_THRESHOLD),
            },
            state: PuckSlideState {
                actuator: [0.0; 2],
                actuator_vel: [0.0; 2],
                puck: [PUCK_RADIUS_MIN, 0.0],
                puck_vel: [0.0; 2],
                goal: [GOAL_RADIUS_MIN, 0.0],
            },
            t: 0,
        }
    }

    pub fn state(&self) -> PuckSlideState {
        self.state
    }

    /// Places the system in an explicit state and restarts the episode clock.
    pub fn set_state(&mut self, state: PuckSlideState) -> Vec<f32> {
        self.state = state;
        self.t = 0;
        self.observe()
    }

    fn observe(&self) -> Vec<f32> {
        let s = &self.state;
        [s.actuator, s.actuator_vel, s.puck, s.puck_vel, s.puck, s.goal]
            .iter()
            .flat_map(|v| v.iter().map(|&x| x as f32))
            .collect()
    }

    fn sample_goal(rng: &mut ChaCha8Rng) -> [f64; 2] {
        let limit = TABLE_HALF_WIDTH - GOAL_EDGE_MARGIN;
        loop {
            // Uniform over the annulus area.
            let r2 = rng.gen_range(GOAL_RADIUS_MIN.powi(2)..GOAL_RADIUS_MAX.powi(2));
            let g = polar(r2.sqrt(), rng.gen_range(-PI..PI));
            if g[0].abs() <= limit && g[1].abs() <= limit {
                return g;
            }
        }
    }

    /// Elastic contact against the kinematically driven (infinitely heavy) actuator.
    fn resolve_contact(&mut self) {
        let s = &mut self.state;
        let offset = [s.puck[0] - s.actuator[0], s.puck[1] - s.actuator[1]];
        let dist = norm(offset);
        if dist >= CONTACT_DISTANCE {
            return;
        }
        let n = if dist > 1e-12 {
            [offset[0] / dist, offset[1] / dist]
        } else {
            let speed = norm(s.actuator_vel);
            if speed < 1e-12 {
                return;
            }
            [s.actuator_vel[0] / speed, s.actuator_vel[1] / speed]
        };
        let approach = (s.actuator_vel[0] - s.puck_vel[0]) * n[0]
            + (s.actuator_vel[1] - s.puck_vel[1]) * n[1];
        if approach > 0.0 {
            s.puck_vel[0] += 2.0 * approach * n[0];
            s.puck_vel[1] += 2.0 * approach * n[1];
        }
        s.puck = [
            s.actuator[0] + n[0] * CONTACT_DISTANCE,
            s.actuator[1] + n[1] * CONTACT_DISTANCE,
        ];
    }

    fn slide(&mut self) {
        let s = &mut self.state;
        for k in 0..2 {
            s.puck[k] += s.puck_vel[k];
            if s.puck[k].abs() > TABLE_HALF_WIDTH {
                s.puck[k] = s.puck[k].clamp(-TABLE_HALF_WIDTH, TABLE_HALF_WIDTH);
                s.puck_vel[k] = 0.0;
            }
        }
        let speed = norm(s.puck_vel);
        if speed > 0.0 {
            let scale = (speed - FRICTION).max(0.0) / speed;
            s.puck_vel = [s.puck_vel[0] * scale, s.puck_vel[1] * scale];
        }
    }

    fn goal_reward(a: &[f32], d: &[f32]) -> f64 {
        -euclidean(a, d)
    }

    fn check_goals(&self, achieved: &[f32], desired: &[f32]) -> Result<()> {
        if achieved.len() != 2 || desired.len() != 2 {
            return Err(Error::Shape(format!(
                "goals must have 2 entries, got {} and {}",
                achieved.len(),
                desired.len()
            )));
        }
        Ok(())
    }
}

impl Environment for PuckSlide {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let puck = polar(
            rng.gen_range(PUCK_RADIUS_MIN..PUCK_RADIUS_MAX),
            rng.gen_range(-PI..PI),
        );
        let goal = Self::sample_goal(&mut rng);
        self.state = PuckSlideState {
            actuator: [0.0; 2],
            actuator_vel: [0.0; 2],
            puck,
            puck_vel: [0.0; 2],
            goal,
        };
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        let a = self.spec.clip_action(action)?;
        let s = &mut self.state;
        let mut target = [
            s.actuator[0] + a[0] as f64 * ACTUATOR_SPEED,
            s.actuator[1] + a[1] as f64 * ACTUATOR_SPEED,
        ];
        let r = norm(target);
        if r > REACH_RADIUS {
            target = [target[0] * REACH_RADIUS / r, target[1] * REACH_RADIUS / r];
        }
        s.actuator_vel = [target[0] - s.actuator[0], target[1] - s.actuator[1]];
        s.actuator = target;

        self.resolve_contact();
        self.slide();
        self.t += 1;

        let obs = self.observe();
        let (ag, dg) = (&obs[8..10], &obs[10..12]);
        let reward = Self::goal_reward(ag, dg);
        let success = euclidean(ag, dg) < SUCCESS_THRESHOLD;
        Ok(StepResult {
            observation: obs,
            reward,
            done: self.t >= HORIZON,
            terminal: false,
            success: Some(success),
        })
    }

    fn compute_reward(&self, achieved: &[f32], desired: &[f32]) -> Result<f64> {
        self.check_goals(achieved, desired)?;
        Ok(Self::goal_reward(achieved, desired))
    }

    fn success(&self, achieved: &[f32], desired: &[f32]) -> Result<bool> {
        self.check_goals(achieved, desired)?;
        Ok(euclidean(achieved, desired) < SUCCESS_THRESHOLD)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_is_always_out_of_reach() {
        let mut env = PuckSlide::new();
        for seed in 0..1000 {
            env.reset(seed);
            let s = env.state();
            let d = norm([s.goal[0] - s.actuator[0], s.goal[1] - s.actuator[1]]);
            assert!(d > REACH_RADIUS, "seed {seed}: {d}");
            assert!(s.goal[0].abs() <= TABLE_HALF_WIDTH && s.goal[1].abs() <= TABLE_HALF_WIDTH);
        }
    }

    #[test]
    fn reward_examples() {
        let env = PuckSlide::new();
        assert_eq!(env.compute_reward(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(env.compute_reward(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -5.0);
    }

    #[test]
    fn success_is_strict_at_threshold() {
        let env = PuckSlide::new();
        assert!(env.success(&[0.5, 0.5], &[0.5, 0.5]).unwrap());
        // 0.05 is not exactly representable, so compare against the computed distance.
        let a = [0.0f32, 0.0];
        let d = [0.03f32, 0.04];
        let dist = euclidean(&a, &d);
        assert_eq!(env.success(&a, &d).unwrap(), dist < SUCCESS_THRESHOLD);
        assert!(!PuckSlide::new().success(&[0.0, 0.0], &[0.0, 0.06]).unwrap());
    }

    #[test]
    fn puck_on_goal_gives_zero_reward() {
        let mut env = PuckSlide::new();
        env.set_state(PuckSlideState {
            actuator: [0.0; 2],
            actuator_vel: [0.0; 2],
            puck: [0.9, 0.0],
            puck_vel: [0.0; 2],
            goal: [0.9, 0.0],
        });
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.success, Some(true));
    }

    #[test]
    fn untouched_puck_keeps_reward_constant() {
        let mut env = PuckSlide::new();
        let obs = env.reset(5);
        let first = env.compute_reward(&obs[8..10], &obs[10..12]).unwrap();
        // Move away from the puck.
        let away = [-obs[4].signum(), -obs[5].signum()];
        for _ in 0..20 {
            let r = env.step(&away).unwrap();
            assert_eq!(r.reward, first);
        }
    }

    #[test]
    fn step_reward_matches_compute_reward() {
        let mut env = PuckSlide::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for ep in 0..20 {
            env.reset(ep);
            for _ in 0..HORIZON {
                let a = [rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)];
                let r = env.step(&a).unwrap();
                let o = &r.observation;
                assert_eq!(r.reward, env.compute_reward(&o[8..10], &o[10..12]).unwrap());
                assert_eq!(r.success, Some(env.success(&o[8..10], &o[10..12]).unwrap()));
            }
        }
    }

    #[test]
    fn struck_puck_decelerates_monotonically() {
        let mut env = PuckSlide::new();
        env.set_state(PuckSlideState {
            actuator: [0.0, 0.0],
            actuator_vel: [0.0; 2],
            puck: [0.08, 0.0],
            puck_vel: [0.0; 2],
            goal: [0.9, 0.0],
        });
        env.step(&[1.0, 0.0]).unwrap();
        let mut last = norm(env.state().puck_vel);
        assert!(last > 0.0);
        // Retreat so the puck is never touched again.
        for _ in 0..60 {
            env.step(&[-1.0, 0.0]).unwrap();
            let speed = norm(env.state().puck_vel);
            assert!(speed <= last);
            last = speed;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn fixed_horizon() {
        let mut env = PuckSlide::new();
        env.reset(0);
        for t in 1..=HORIZON {
            let r = env.step(&[0.2, -0.7]).unwrap();
            assert_eq!(r.done, t == HORIZON);
        }
    }
}
