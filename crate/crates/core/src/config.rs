//! Run and suite configuration.
//!
//! A suite file holds a `[base]` run template, optional `[[variants]]` that are
//! deep-merged over it, a seed list, an output directory and a parallelism limit.
//! Every section is decoded on its own so that one pass reports all problems.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, Algorithm, HerConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::representation::{AuxTaskKind, RepresentationConfig};

fn default_true() -> bool {
    true
}

/// One fully resolved training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: String,
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    /// Absent for the raw-observation baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation: Option<RepresentationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub her: Option<HerConfig>,
    #[serde(default)]
    pub agent: AgentConfig,
    pub total_steps: usize,
    pub pretrain_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Extra agent/representation checkpoints every this many steps; the final one is always written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<usize>,
    /// Dump one greedy episode as JSONL at the end of the run.
    #[serde(default = "default_true")]
    pub save_trajectory: bool,
}

impl RunConfig {
    /// Baseline run with environment defaults; handy for tests and examples.
    pub fn new(env: EnvConfig, algorithm: Algorithm, total_steps: usize, pretrain_steps: usize, seed: u64) -> Self {
        let (eval_interval, eval_episodes) = env.default_evaluation();
        Self {
            variant: "baseline".into(),
            env,
            algorithm,
            representation: None,
            her: None,
            agent: AgentConfig::default(),
            total_steps,
            pretrain_steps,
            eval_interval,
            eval_episodes,
            seed,
            checkpoint_interval: None,
            save_trajectory: true,
        }
    }

    /// Switches to an auxiliary task with the environment's default network size.
    pub fn with_task(mut self, task: AuxTaskKind) -> Self {
        let (layers, width) = self.env.default_representation_size();
        self.representation = Some(RepresentationConfig::new(task, layers, width));
        self.variant = task.name().into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.collect_errors("", &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    fn collect_errors(&self, prefix: &str, errors: &mut Vec<String>) {
        self.env.validate(&format!("{prefix}env"), errors);
        self.agent.validate(&format!("{prefix}agent"), errors);
        if let Some(r) = &self.representation {
            r.validate(&format!("{prefix}representation"), errors);
        }
        if self.total_steps < self.pretrain_steps {
            errors.push(format!(
                "{prefix}total_steps: must be at least pretrain_steps ({}), got {}",
                self.pretrain_steps, self.total_steps
            ));
        }
        if self.eval_interval == 0 {
            errors.push(format!("{prefix}eval_interval: must be at least 1"));
        }
        if self.eval_episodes == 0 {
            errors.push(format!("{prefix}eval_episodes: must be at least 1"));
        }
        if self.checkpoint_interval == Some(0) {
            errors.push(format!("{prefix}checkpoint_interval: must be at least 1"));
        }
        if self.variant.is_empty() || self.variant.contains(['/', '\\']) {
            errors.push(format!("{prefix}name: must be non-empty and free of path separators"));
        }
        if self.her.is_some() && !self.env.is_goal_conditioned() {
            errors.push(format!(
                "{prefix}her: hindsight relabeling needs a goal-conditioned environment, {} has no goals",
                self.env.name()
            ));
        }
    }

    /// RL training steps after pretraining; the x-axis budget of learning curves.
    pub fn rl_steps(&self) -> usize {
        self.total_steps - self.pretrain_steps
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-{}-s{}",
            self.env.name(),
            self.algorithm,
            self.variant,
            self.seed
        )
    }

    /// SHA-256 over the canonical JSON form: key order never matters.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Partially specified representation: size defaults come from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepresentationSection {
    task: AuxTaskKind,
    layers: Option<usize>,
    width: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
}

const TEMPLATE_KEYS: &[&str] = &[
    "name",
    "env",
    "algorithm",
    "representation",
    "her",
    "agent",
    "total_steps",
    "pretrain_steps",
    "eval_interval",
    "eval_episodes",
    "checkpoint_interval",
    "save_trajectory",
];

const SUITE_KEYS: &[&str] = &["name", "output_dir", "parallelism", "seeds", "base", "variants"];

/// Removes a key in a variant when set to this string.
const NONE: &str = "none";

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub seeds: Vec<u64>,
    pub base: toml::Table,
    pub variants: Vec<toml::Table>,
}

/// Command-line adjustments applied before resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub task: Option<AuxTaskKind>,
    pub algorithm: Option<Algorithm>,
    pub total_steps: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    /// `dotted.key = toml value` pairs applied to the base template.
    pub set: Vec<(String, toml::Value)>,
}

/// Parses `key=value`, reading the value as TOML and falling back to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("override `{s}` has an empty key")));
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn decode<T: DeserializeOwned>(value: &toml::Value, field: &str, errors: &mut Vec<String>) -> Option<T> {
    match value.clone().try_into::<T>() {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{field}: {}", e.message().trim()));
            None
        }
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (_, toml::Value::String(s)) if s == NONE => {
                base.remove(k);
            }
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{p}` is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Parses and validates; the error lists every problem found.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let mut errors = Vec::new();
        // Without `base` or `variants` the file is a single-run template.
        let flat = !table.contains_key("base") && !table.contains_key("variants");
        for k in table.keys() {
            let known = SUITE_KEYS.contains(&k.as_str()) || (flat && TEMPLATE_KEYS.contains(&k.as_str()));
            if !known {
                errors.push(format!("{k}: unknown key"));
            }
        }
        let name = table
            .get("name")
            .and_then(|v| decode::<String>(v, "name", &mut errors))
            .unwrap_or_else(|| "suite".into());
        let output_dir = match table.get("output_dir") {
            Some(v) => decode::<PathBuf>(v, "output_dir", &mut errors).unwrap_or_default(),
            None => PathBuf::from("runs").join(&name),
        };
        let parallelism = table
            .get("parallelism")
            .and_then(|v| decode::<usize>(v, "parallelism", &mut errors))
            .unwrap_or(1);
        let seeds = table
            .get("seeds")
            .and_then(|v| decode::<Vec<u64>>(v, "seeds", &mut errors))
            .unwrap_or_else(|| vec![0]);
        let base = match table.get("base") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => {
                errors.push("base: must be a table".into());
                toml::Table::new()
            }
            None => {
                let mut t = table.clone();
                t.retain(|k, _| !SUITE_KEYS.contains(&k));
                t
            }
        };
        let variants = match table.get("variants") {
            Some(toml::Value::Array(items)) => items
                .iter()
                .enumerate()
                .filter_map(|(i, v)| match v {
                    toml::Value::Table(t) => Some(t.clone()),
                    _ => {
                        errors.push(format!("variants[{i}]: must be a table"));
                        None
                    }
                })
                .collect(),
            Some(_) => {
                errors.push("variants: must be an array of tables".into());
                Vec::new()
            }
            None => Vec::new(),
        };
        let suite = Self {
            name,
            output_dir,
            parallelism,
            seeds,
            base,
            variants,
        };
        suite.collect_errors(&mut errors);
        if errors.is_empty() {
            Ok(suite)
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(alg) = o.algorithm {
            self.force("algorithm", toml::Value::String(alg.name().into()))?;
        }
        if let Some(steps) = o.total_steps {
            self.force("total_steps", toml::Value::Integer(steps as i64))?;
        }
        if let Some(task) = o.task {
            self.force("representation.task", toml::Value::String(task.name().into()))?;
            // Variant names describe the task they ran.
            for v in &mut self.variants {
                v.remove("name");
            }
        }
        for (k, v) in &o.set {
            set_path(&mut self.base, k, v.clone())?;
        }
        let mut errors = Vec::new();
        self.collect_errors(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Sets `path` in the base and in every variant that would otherwise override it.
    fn force(&mut self, path: &str, value: toml::Value) -> Result<()> {
        set_path(&mut self.base, path, value.clone())?;
        let head = path.split('.').next().expect("non-empty path");
        for v in &mut self.variants {
            if matches!(v.get(head), Some(toml::Value::String(s)) if s == NONE) {
                v.remove(head);
            }
            if v.contains_key(head) {
                set_path(v, path, value.clone())?;
            }
        }
        Ok(())
    }

    fn templates(&self) -> Vec<(String, toml::Table)> {
        if self.variants.is_empty() {
            return vec![("base".into(), self.base.clone())];
        }
        self.variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut t = self.base.clone();
                merge(&mut t, v);
                (format!("variants[{i}]"), t)
            })
            .collect()
    }

    fn collect_errors(&self, errors: &mut Vec<String>) {
        if self.parallelism == 0 {
            errors.push("parallelism: must be at least 1".into());
        }
        if self.seeds.is_empty() {
            errors.push("seeds: must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errors.push("seeds: must be distinct".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            errors.push("output_dir: must not be empty".into());
        }
        let mut names = Vec::new();
        for (label, t) in self.templates() {
            if let Some(cfg) = resolve(&t, &label, 0, errors) {
                if names.contains(&cfg.variant) {
                    errors.push(format!("{label}.name: duplicate variant name `{}`", cfg.variant));
                }
                names.push(cfg.variant);
            }
        }
    }

    /// Every (variant, seed) run, variants outermost.
    pub fn runs(&self) -> Result<Vec<RunConfig>> {
        let mut errors = Vec::new();
        let mut runs = Vec::new();
        for (label, t) in self.templates() {
            for &seed in &self.seeds {
                if let Some(cfg) = resolve(&t, &label, seed, &mut errors) {
                    runs.push(cfg);
                }
            }
        }
        if errors.is_empty() {
            Ok(runs)
        } else {
            errors.dedup();
            Err(Error::Validation(errors))
        }
    }
}

/// Decodes a merged template into a run; `None` with `errors` extended on failure.
fn resolve(t: &toml::Table, label: &str, seed: u64, errors: &mut Vec<String>) -> Option<RunConfig> {
    let before = errors.len();
    let field = |k: &str| format!("{label}.{k}");
    for k in t.keys() {
        if !TEMPLATE_KEYS.contains(&k.as_str()) {
            errors.push(format!("{}: unknown key", field(k)));
        }
    }
    let required = |k: &str, errors: &mut Vec<String>| {
        let v = t.get(k);
        if v.is_none() {
            errors.push(format!("{}: missing required key", field(k)));
        }
        v
    };
    let env = required("env", errors).and_then(|v| decode::<EnvConfig>(v, &field("env"), errors));
    let algorithm = required("algorithm", errors).and_then(|v| decode::<Algorithm>(v, &field("algorithm"), errors));
    let total_steps =
        required("total_steps", errors).and_then(|v| decode::<usize>(v, &field("total_steps"), errors));
    let opt = |k: &str| t.get(k).map(|v| (v.clone(), field(k)));
    let pretrain_steps = match opt("pretrain_steps") {
        Some((v, f)) => decode::<usize>(&v, &f, errors),
        None => Some(0),
    };
    let section = match opt("representation") {
        Some((v, f)) => decode::<RepresentationSection>(&v, &f, errors).map(Some),
        None => Some(None),
    };
    let her = match opt("her") {
        Some((v, f)) => decode::<HerConfig>(&v, &f, errors).map(Some),
        None => Some(None),
    };
    let agent = match opt("agent") {
        Some((v, f)) => decode::<AgentConfig>(&v, &f, errors),
        None => Some(AgentConfig::default()),
    };
    let eval_interval = opt("eval_interval").map(|(v, f)| decode::<usize>(&v, &f, errors));
    let eval_episodes = opt("eval_episodes").map(|(v, f)| decode::<usize>(&v, &f, errors));
    let checkpoint_interval = opt("checkpoint_interval").map(|(v, f)| decode::<usize>(&v, &f, errors));
    let save_trajectory = match opt("save_trajectory") {
        Some((v, f)) => decode::<bool>(&v, &f, errors),
        None => Some(true),
    };
    let name = opt("name").map(|(v, f)| decode::<String>(&v, &f, errors));
    if errors.len() > before {
        return None;
    }

    let env = env?;
    let (def_interval, def_episodes) = env.default_evaluation();
    let (def_layers, def_width) = env.default_representation_size();
    let representation = section?.map(|s| RepresentationConfig {
        task: s.task,
        layers: s.layers.unwrap_or(def_layers),
        width: s.width.unwrap_or(def_width),
        learning_rate: s.learning_rate.unwrap_or(3e-4),
        batch_size: s.batch_size.unwrap_or(256),
    });
    let her = her?;
    let derived = {
        let base = representation.as_ref().map_or("baseline", |r| r.task.name());
        if her.is_some() {
            format!("{base}-her")
        } else {
            base.to_string()
        }
    };
    let cfg = RunConfig {
        variant: name.flatten().unwrap_or(derived),
        env,
        algorithm: algorithm?,
        representation,
        her,
        agent: agent?,
        total_steps: total_steps?,
        pretrain_steps: pretrain_steps?,
        eval_interval: eval_interval.flatten().unwrap_or(def_interval),
        eval_episodes: eval_episodes.flatten().unwrap_or(def_episodes),
        seed,
        checkpoint_interval: checkpoint_interval.flatten(),
        save_trajectory: save_trajectory?,
    };
    cfg.collect_errors(&format!("{label}."), errors);
    (errors.len() == before).then_some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUITE: &str = r#"
name = "pendulum-grid"
output_dir = "out/pendulum"
seeds = [0, 1, 2]

[base]
env = { id = "pendulum" }
algorithm = "td3"
total_steps = 3000
pretrain_steps = 1000
agent = { hidden = [64, 64] }

[[variants]]
name = "baseline"

[[variants]]
representation = { task = "fsp" }

[[variants]]
representation = { task = "rwp", layers = 3 }
algorithm = "sac"
"#;

    #[test]
    fn suite_expands_variants_and_seeds() {
        let suite = SuiteConfig::from_toml_str(SUITE).unwrap();
        let runs = suite.runs().unwrap();
        assert_eq!(runs.len(), 9);
        assert_eq!(runs[0].variant, "baseline");
        assert!(runs[0].representation.is_none());
        assert_eq!(runs[3].variant, "fsp");
        let rep = runs[3].representation.as_ref().unwrap();
        assert_eq!((rep.layers, rep.width), (2, 10));
        assert_eq!(runs[6].algorithm, Algorithm::Sac);
        assert_eq!(runs[6].representation.as_ref().unwrap().layers, 3);
        assert_eq!(runs[7].seed, 1);
        assert_eq!(runs[0].agent.hidden, vec![64, 64]);
        assert_eq!((runs[0].eval_interval, runs[0].eval_episodes), (1000, 10));
    }

    #[test]
    fn missing_env_names_the_field() {
        let err = SuiteConfig::from_toml_str("algorithm = \"td3\"\ntotal_steps = 10").unwrap_err();
        assert!(err.to_string().contains("base.env: missing required key"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"
seeds = [1, 1]
parallelism = 0
bogus = 3
[base]
env = { id = "linear_chain", n = 4, m = 9 }
algorithm = "ppo"
total_steps = 10
pretrain_steps = 20
eval_interval = 0
agent = { gama = 0.9 }
"#;
        let Error::Validation(errs) = SuiteConfig::from_toml_str(text).unwrap_err() else {
            panic!()
        };
        let joined = errs.join("\n");
        for needle in ["bogus", "parallelism", "seeds", "algorithm", "gama"] {
            assert!(joined.contains(needle), "missing {needle} in\n{joined}");
        }
        // Semantic checks run only once the sections decode.
        let text = r#"
[base]
env = { id = "linear_chain", n = 4, m = 9 }
algorithm = "td3"
total_steps = 10
pretrain_steps = 20
eval_interval = 0
her = {}
"#;
        let Error::Validation(errs) = SuiteConfig::from_toml_str(text).unwrap_err() else {
            panic!()
        };
        let joined = errs.join("\n");
        for needle in ["env.m", "total_steps", "eval_interval", "her"] {
            assert!(joined.contains(needle), "missing {needle} in\n{joined}");
        }
    }

    #[test]
    fn overrides_apply() {
        let mut suite = SuiteConfig::from_toml_str(SUITE).unwrap();
        suite
            .apply(&Overrides {
                seed: Some(3),
                task: Some(AuxTaskKind::Fsp),
                set: vec![parse_assignment("agent.batch_size=32").unwrap()],
                ..Overrides::default()
            })
            .unwrap_err(); // all variants collapse to the same name
        let mut suite = SuiteConfig::from_toml_str(
            "env = { id = \"pendulum\" }\nalgorithm = \"td3\"\ntotal_steps = 2000\npretrain_steps = 1000",
        )
        .unwrap();
        suite
            .apply(&Overrides {
                seed: Some(3),
                task: Some(AuxTaskKind::Fsp),
                set: vec![parse_assignment("agent.batch_size=32").unwrap()],
                ..Overrides::default()
            })
            .unwrap();
        let runs = suite.runs().unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].seed, 3);
        assert_eq!(runs[0].variant, "fsp");
        assert_eq!(runs[0].representation.as_ref().unwrap().task, AuxTaskKind::Fsp);
        assert_eq!(runs[0].agent.batch_size, 32);
    }

    #[test]
    fn none_removes_a_base_key() {
        let text = r#"
[base]
env = { id = "pendulum" }
algorithm = "td3"
total_steps = 10
representation = { task = "fsdp" }
[[variants]]
representation = "none"
[[variants]]
"#;
        let runs = SuiteConfig::from_toml_str(text).unwrap().runs().unwrap();
        assert_eq!(runs[0].variant, "baseline");
        assert_eq!(runs[1].variant, "fsdp");
    }

    #[test]
    fn run_config_round_trips_and_hashes_stably() {
        let runs = SuiteConfig::from_toml_str(SUITE).unwrap().runs().unwrap();
        for cfg in &runs {
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(&back, cfg);
            assert_eq!(back.config_hash().unwrap(), cfg.config_hash().unwrap());
        }
        assert_ne!(runs[0].config_hash().unwrap(), runs[1].config_hash().unwrap());
        // Key order in the source file is irrelevant.
        let reordered = r#"
total_steps = 3000
algorithm = "td3"
pretrain_steps = 1000
env = { id = "pendulum" }
agent = { hidden = [64, 64] }
"#;
        let a = SuiteConfig::from_toml_str(reordered).unwrap().runs().unwrap();
        let mut expected = runs[0].clone();
        expected.seed = 0;
        assert_eq!(a[0].config_hash().unwrap(), expected.config_hash().unwrap());
    }

    #[test]
    fn assignments_parse_values() {
        assert_eq!(parse_assignment("a=3").unwrap().1, toml::Value::Integer(3));
        assert_eq!(parse_assignment("a.b = fsp").unwrap().1, toml::Value::String("fsp".into()));
        assert!(parse_assignment("novalue").is_err());
    }
}
