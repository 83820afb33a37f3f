//! Run directory layout and readers.
//!
//! ```text
//! <run>/config.toml        resolved configuration
//! <run>/curve.csv          step,mean,min,max (appended after every evaluation)
//! <run>/evaluations.jsonl  per-episode evaluation scores
//! <run>/episodes.jsonl     training episodes
//! <run>/trajectory.jsonl   one greedy episode after training
//! <run>/checkpoints/       agent and representation checkpoints
//! <run>/run.json           written last; marks the run complete
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalRecord, RepresentationState};
use crate::agent::{Agent, Transition};
use crate::config::RunConfig;
use crate::env::write_trajectory_jsonl;
use crate::error::{Error, Result};
use crate::metrics::{LearningCurve, ScoreKind};

pub const CURVE_HEADER: &str = "step,mean,min,max";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLine {
    pub phase: String,
    /// RL step at which the episode ended (0 during warm-up).
    pub step: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub config_hash: String,
    pub score: ScoreKind,
    pub evaluations: usize,
}

pub struct RunWriter {
    dir: PathBuf,
    config: RunConfig,
    curve: BufWriter<File>,
    evals: BufWriter<File>,
    episodes: BufWriter<File>,
    n_evals: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn flush(w: &mut BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

impl RunWriter {
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        let mut curve = create(&dir.join("curve.csv"))?;
        writeln!(curve, "{CURVE_HEADER}").map_err(|e| Error::io(dir.join("curve.csv"), e))?;
        Ok(Self {
            curve,
            evals: create(&dir.join("evaluations.jsonl"))?,
            episodes: create(&dir.join("episodes.jsonl"))?,
            dir: dir.to_path_buf(),
            config: config.clone(),
            n_evals: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends and flushes, so partial curves survive an interrupted run.
    pub fn append_eval(&mut self, rec: &EvalRecord) -> Result<()> {
        let path = self.dir.join("curve.csv");
        // `Display` for floats is locale-independent and round-trips exactly.
        writeln!(self.curve, "{},{},{},{}", rec.step, rec.mean, rec.min, rec.max)
            .map_err(|e| Error::io(&path, e))?;
        flush(&mut self.curve, &path)?;
        let path = self.dir.join("evaluations.jsonl");
        serde_json::to_writer(&mut self.evals, rec)?;
        writeln!(self.evals).map_err(|e| Error::io(&path, e))?;
        flush(&mut self.evals, &path)?;
        self.n_evals += 1;
        Ok(())
    }

    pub fn append_episode(&mut self, line: &EpisodeLine) -> Result<()> {
        let path = self.dir.join("episodes.jsonl");
        serde_json::to_writer(&mut self.episodes, line)?;
        writeln!(self.episodes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_checkpoints(&mut self, step: Option<u64>, agent: &Agent, rep: &RepresentationState) -> Result<()> {
        let suffix = step.map_or_else(String::new, |s| format!("-step{s}"));
        let ck = self.dir.join("checkpoints");
        agent.to_checkpoint()?.save(&ck.join(format!("agent{suffix}.json")))?;
        if let RepresentationState::OfeNet(net) = rep {
            net.to_checkpoint()?
                .save(&ck.join(format!("representation{suffix}.json")))?;
        }
        Ok(())
    }

    pub fn write_trajectory(&mut self, episode: &[Transition]) -> Result<()> {
        let path = self.dir.join("trajectory.jsonl");
        let mut w = create(&path)?;
        write_trajectory_jsonl(&mut w, episode)?;
        flush(&mut w, &path)
    }

    pub fn finish(&mut self) -> Result<()> {
        flush(&mut self.episodes, &self.dir.join("episodes.jsonl"))?;
        let spec = self.config.env.build()?.spec().clone();
        let summary = RunSummary {
            run_id: self.config.run_id(),
            config_hash: self.config.config_hash()?,
            score: super::score_kind(&spec),
            evaluations: self.n_evals,
        };
        let path = self.dir.join("run.json");
        fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))
    }
}

/// Reads `step,mean,min,max` rows; returns the mean curve and the min/max columns.
pub fn load_curve_csv(path: &Path) -> Result<(LearningCurve, Vec<f64>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header.trim() != CURVE_HEADER {
        return Err(Error::Input(format!("{}: unexpected header `{header}`", path.display())));
    }
    let (mut steps, mut mean, mut min, mut max) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Input(format!("{}: malformed row {}", path.display(), i + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        steps.push(cols[0].parse::<u64>().map_err(|_| bad())?);
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
        mean.push(f(cols[1])?);
        min.push(f(cols[2])?);
        max.push(f(cols[3])?);
    }
    Ok((LearningCurve::new(steps, mean)?, min, max))
}

/// A completed run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub summary: RunSummary,
    pub curve: LearningCurve,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.toml");
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = RunConfig::from_toml(&text)?;
        let summary_path = dir.join("run.json");
        let bytes = fs::read(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary: RunSummary = serde_json::from_slice(&bytes)?;
        let (curve, _, _) = load_curve_csv(&dir.join("curve.csv"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            summary,
            curve,
        })
    }

    /// Completed runs in `root`: the directory itself or any directory below it.
    pub fn discover(root: &Path) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            if d.join("run.json").is_file() {
                out.push(Self::load(&d)?);
                continue;
            }
            let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
            for e in entries {
                let p = e.map_err(|e| Error::io(&d, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                }
            }
        }
        out.sort_by(|a, b| a.dir.cmp(&b.dir));
        Ok(out)
    }
}
