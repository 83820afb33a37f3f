//! Multi-run execution with a filesystem manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{run, RunOptions};
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub variant: String,
    pub env: String,
    pub algorithm: String,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    pub wall_seconds: Option<f64>,
    /// Relative to the suite directory.
    pub dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.runs.iter().filter(|r| r.status == status).count()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub parallelism: usize,
    /// Replace results from an earlier suite in the same directory.
    pub overwrite: bool,
    pub progress: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            overwrite: false,
            progress: false,
        }
    }
}

fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let Ok(entries) = fs::read_dir(dir.join(&rel)) else { continue };
        for e in entries.flatten() {
            let r = rel.join(e.file_name());
            if e.path().is_dir() {
                stack.push(r);
            } else {
                out.push(r);
            }
        }
    }
    out.sort();
    out
}

/// Executes every configuration in its own directory under `dir`. Individual
/// failures are recorded in the manifest and do not stop the suite.
pub fn run_suite(configs: &[RunConfig], dir: &Path, options: &SuiteOptions) -> Result<Manifest> {
    if options.parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    let mut ids: Vec<String> = configs.iter().map(RunConfig::run_id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("run id `{}` appears twice", w[0])));
    }
    if dir.join(MANIFEST_FILE).exists() && !options.overwrite {
        return Err(Error::WouldOverwrite(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if options.overwrite {
        if let Ok(old) = Manifest::load(dir) {
            for r in old.runs {
                let p = dir.join(&r.dir);
                if p.is_dir() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }

    let mut manifest = Manifest::default();
    for cfg in configs {
        manifest.runs.push(ManifestEntry {
            run_id: cfg.run_id(),
            variant: cfg.variant.clone(),
            env: cfg.env.name(),
            algorithm: cfg.algorithm.to_string(),
            seed: cfg.seed,
            config_hash: cfg.config_hash()?,
            status: RunStatus::Pending,
            wall_seconds: None,
            dir: PathBuf::from(cfg.run_id()),
            artifacts: Vec::new(),
            error: None,
        });
    }
    manifest.save(dir)?;

    let shared = Mutex::new(manifest);
    let next = AtomicUsize::new(0);
    let update = |i: usize, f: &dyn Fn(&mut ManifestEntry)| -> Result<()> {
        let mut m = shared.lock().expect("manifest lock");
        f(&mut m.runs[i]);
        m.save(dir)
    };
    let worker = || -> Result<()> {
        loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(cfg) = configs.get(i) else { return Ok(()) };
            update(i, &|e| e.status = RunStatus::Running)?;
            let run_dir = dir.join(cfg.run_id());
            if run_dir.exists() {
                fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            }
            let started = Instant::now();
            let result = run(
                cfg,
                Some(&run_dir),
                &RunOptions {
                    audit: false,
                    progress: options.progress,
                },
            );
            let secs = started.elapsed().as_secs_f64();
            let files = artifacts(&run_dir);
            update(i, &|e| {
                e.wall_seconds = Some(secs);
                e.artifacts = files.clone();
                match &result {
                    Ok(_) => e.status = RunStatus::Done,
                    Err(err) => {
                        e.status = RunStatus::Failed;
                        e.error = Some(err.to_string());
                    }
                }
            })?;
            if let (Err(err), true) = (&result, options.progress) {
                eprintln!("[{}] failed: {err}", cfg.run_id());
            }
        }
    };
    let workers = options.parallelism.min(configs.len()).max(1);
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|_| s.spawn(worker)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("suite worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(shared.into_inner().expect("manifest lock"))
}
