//! JSONL trajectory dumps, one transition per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agent::Transition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLine {
    pub t: usize,
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub done: bool,
    pub achieved_goal: Option<Vec<f32>>,
    pub desired_goal: Option<Vec<f32>>,
}

pub fn write_trajectory_jsonl<W: Write>(mut w: W, episode: &[Transition]) -> Result<()> {
    for (t, tr) in episode.iter().enumerate() {
        let line = TrajectoryLine {
            t,
            obs: tr.obs.clone(),
            action: tr.action.clone(),
            reward: tr.reward,
            next_obs: tr.next_obs.clone(),
            done: tr.done,
            achieved_goal: tr.achieved_goal.clone(),
            desired_goal: tr.desired_goal.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<trajectory>", e))?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<TrajectoryLine>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<trajectory>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_are_fixed() {
        let tr = Transition {
            obs: vec![1.0],
            action: vec![0.5],
            reward: -1.0,
            next_obs: vec![2.0],
            done: false,
            achieved_goal: None,
            desired_goal: None,
        };
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &[tr.clone(), tr]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["achieved_goal", "action", "desired_goal", "done", "next_obs", "obs", "reward", "t"]
        );
        let back = read_trajectory_jsonl(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].t, 1);
    }
}
