//! Multi-run comparison: CSV rows, a JSON detail file and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, normalize_best, se80, se80_of_seeds, se80_relative, smooth, threshold_from, Crossing,
    LearningCurve, ScoreKind,
};
use crate::plot::{line_chart, scatter, ScatterPoint, Series};
use crate::train::RunRecord;

pub const COMPARISON_HEADER: &str = "variant,algorithm,env,best_score,normalized_best,se80,n_seeds";
pub const DEFAULT_BASELINE: &str = "baseline";

/// One variant of one environment/algorithm group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub algorithm: String,
    pub env: String,
    pub score: ScoreKind,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    /// Best value of the smoothed seed-mean curve.
    pub best_score: f64,
    /// Per-seed best of each smoothed curve, min and max over seeds.
    pub seed_best_min: f64,
    pub seed_best_max: f64,
    /// `None` when the baseline does not improve on its initial score.
    pub normalized_best: Option<f64>,
    pub normalized_best_min: Option<f64>,
    pub normalized_best_max: Option<f64>,
    pub threshold: f64,
    pub crossing_step: Option<u64>,
    pub se80: Option<f64>,
    /// Min and max over seeds; `None` unless every seed crossed.
    pub se80_seed_range: Option<(f64, f64)>,
    /// Crossing step relative to the baseline's crossing step.
    pub se80_relative: Option<f64>,
    pub budget: u64,
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub crossing: Crossing,
    /// Window for the best-score smoothing.
    pub window: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            crossing: Crossing::default(),
            window: crate::metrics::DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

fn smoothed_best(curve: &LearningCurve, window: usize) -> Result<f64> {
    Ok(smooth(curve, window)?.best())
}

/// Groups `records` by environment and algorithm and compares every variant to
/// `baseline`. Rows are ordered by env, algorithm, then baseline first and the
/// remaining variants by name.
pub fn compare(records: &[RunRecord], baseline: &str, options: &CompareOptions) -> Result<Vec<VariantReport>> {
    if records.is_empty() {
        return Err(Error::Input("no completed runs to compare".into()));
    }
    type Key = (String, String);
    let mut groups: BTreeMap<Key, BTreeMap<String, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        let key = (r.config.env.name(), r.config.algorithm.name().to_string());
        groups
            .entry(key)
            .or_default()
            .entry(r.config.variant.clone())
            .or_default()
            .push(r);
    }

    let mut out = Vec::new();
    for ((env, alg), variants) in &groups {
        let base_runs = variants.get(baseline).ok_or_else(|| {
            Error::Input(format!(
                "no `{baseline}` runs for {env}/{alg}; found variants: {}",
                variants.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let reference = base_runs[0];
        let budget = reference.config.rl_steps() as u64;
        for runs in variants.values() {
            for r in runs {
                if r.config.rl_steps() as u64 != budget {
                    return Err(Error::Input(format!(
                        "incompatible runs in {env}/{alg}: {} trains for {} steps, {} for {budget}",
                        r.dir.display(),
                        r.config.rl_steps(),
                        reference.dir.display()
                    )));
                }
                if r.curve.steps != reference.curve.steps {
                    return Err(Error::Input(format!(
                        "incompatible runs in {env}/{alg}: {} and {} use different evaluation steps",
                        r.dir.display(),
                        reference.dir.display()
                    )));
                }
                if r.summary.score != reference.summary.score {
                    return Err(Error::Input(format!(
                        "incompatible runs in {env}/{alg}: mixed score kinds"
                    )));
                }
            }
        }

        let base_curves: Vec<LearningCurve> = base_runs.iter().map(|r| r.curve.clone()).collect();
        let base_agg = aggregate(&base_curves)?;
        let r0 = base_agg.mean[0];
        // R_max is read from the curve that crossing is tested on.
        let r_max = match options.crossing {
            Crossing::Smoothed(w) => smooth(&base_agg.mean_curve(), w)?.best(),
            Crossing::Raw => base_agg.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        // A baseline that ends below its untrained score would otherwise have a
        // threshold above anything it reached.
        let threshold = threshold_from(r0, r_max).min(r_max);
        let base_best = smoothed_best(&base_agg.mean_curve(), options.window)?;
        let base_se80 = se80_of_seeds(&base_curves, threshold, budget, options.crossing)?;

        let mut names: Vec<&String> = variants.keys().collect();
        names.sort_by_key(|n| (n.as_str() != baseline, n.as_str()));
        for name in names {
            let runs = &variants[name];
            let mut seeds: Vec<u64> = runs.iter().map(|r| r.config.seed).collect();
            seeds.sort_unstable();
            if seeds.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Input(format!(
                    "duplicate seeds for {name} in {env}/{alg}"
                )));
            }
            let mut runs = runs.clone();
            runs.sort_by_key(|r| r.config.seed);
            let curves: Vec<LearningCurve> = runs.iter().map(|r| r.curve.clone()).collect();
            let agg = aggregate(&curves)?;
            let best = smoothed_best(&agg.mean_curve(), options.window)?;
            let seed_bests = curves
                .iter()
                .map(|c| smoothed_best(c, options.window))
                .collect::<Result<Vec<_>>>()?;
            let b_min = seed_bests.iter().copied().fold(f64::INFINITY, f64::min);
            let b_max = seed_bests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm = |v: f64| match normalize_best(v, base_best, r0) {
                Ok(x) => Ok(Some(x)),
                Err(Error::DegenerateBaseline(_)) => Ok(None),
                Err(e) => Err(e),
            };
            let s = se80_of_seeds(&curves, threshold, budget, options.crossing)?;
            let per_seed = curves
                .iter()
                .map(|c| {
                    let c = match options.crossing {
                        Crossing::Smoothed(w) => smooth(c, w)?,
                        Crossing::Raw => c.clone(),
                    };
                    Ok(se80(&c, threshold, budget)?.se80)
                })
                .collect::<Result<Vec<_>>>()?;
            let se80_seed_range = per_seed.iter().copied().collect::<Option<Vec<f64>>>().map(|v| {
                (
                    v.iter().copied().fold(f64::INFINITY, f64::min),
                    v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            });
            out.push(VariantReport {
                variant: name.clone(),
                algorithm: alg.clone(),
                env: env.clone(),
                score: reference.summary.score,
                n_seeds: runs.len(),
                seeds,
                best_score: best,
                seed_best_min: b_min,
                seed_best_max: b_max,
                normalized_best: norm(best)?,
                normalized_best_min: norm(b_min)?,
                normalized_best_max: norm(b_max)?,
                threshold,
                crossing_step: s.crossing_step,
                se80: s.se80,
                se80_seed_range,
                se80_relative: se80_relative(&s, &base_se80),
                budget,
                steps: agg.steps.clone(),
                mean: agg.mean.clone(),
                min: agg.min.clone(),
                max: agg.max.clone(),
            });
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text with a fixed column order; never-crossed SE80 and undefined normalized
/// scores are empty cells.
pub fn comparison_csv(rows: &[VariantReport]) -> String {
    let mut s = String::from(COMPARISON_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.algorithm,
            r.env,
            r.best_score,
            opt(r.normalized_best),
            opt(r.se80),
            r.n_seeds
        );
    }
    s
}

pub fn learning_curve_svg(rows: &[VariantReport]) -> String {
    let (env, alg) = rows
        .first()
        .map(|r| (r.env.as_str(), r.algorithm.as_str()))
        .unwrap_or_default();
    let y_label = match rows.first().map(|r| r.score) {
        Some(ScoreKind::SuccessRate) => "success rate",
        _ => "evaluation return",
    };
    let series: Vec<Series> = rows
        .iter()
        .map(|r| Series {
            label: format!("{} (n={})", r.variant, r.n_seeds),
            xs: r.steps.iter().map(|&s| s as f64).collect(),
            ys: r.mean.clone(),
            band: Some((r.min.clone(), r.max.clone())),
        })
        .collect();
    line_chart(&format!("{env} / {alg}"), "training steps", y_label, &series)
}

pub fn scatter_svg(rows: &[VariantReport]) -> String {
    let (env, alg) = rows
        .first()
        .map(|r| (r.env.as_str(), r.algorithm.as_str()))
        .unwrap_or_default();
    let points: Vec<ScatterPoint> = rows
        .iter()
        .map(|r| ScatterPoint {
            label: r.variant.clone(),
            x: r.se80.filter(|_| r.normalized_best.is_some()),
            y: r.normalized_best.unwrap_or(f64::NAN),
            x_range: r.se80_seed_range,
            y_range: r.normalized_best_min.zip(r.normalized_best_max),
        })
        .collect();
    scatter(
        &format!("{env} / {alg}"),
        "SE80 (fraction of training steps)",
        "normalized best score",
        &points,
    )
}

/// Files written by [`write_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub figures: Vec<PathBuf>,
}

pub fn write_report(rows: &[VariantReport], out_dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: String, contents: &[u8]| -> Result<PathBuf> {
        let p = out_dir.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let csv = write("comparison.csv".into(), comparison_csv(rows).as_bytes())?;
    let json = write("comparison.json".into(), &serde_json::to_vec_pretty(rows)?)?;
    let mut groups: BTreeMap<(String, String), Vec<VariantReport>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.env.clone(), r.algorithm.clone()))
            .or_default()
            .push(r.clone());
    }
    let mut figures = Vec::new();
    for ((env, alg), g) in &groups {
        figures.push(write(format!("curves-{env}-{alg}.svg"), learning_curve_svg(g).as_bytes())?);
        figures.push(write(format!("se80-{env}-{alg}.svg"), scatter_svg(g).as_bytes())?);
    }
    Ok(ReportFiles { csv, json, figures })
}
