//! Learning-curve statistics: aggregation, smoothing, SE80 and normalized best scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the baseline's improvement that defines the SE80 threshold.
pub const SE80_FRACTION: f64 = 0.8;
/// Smoothing window (in evaluations) applied before threshold crossing.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Return,
    SuccessRate,
}

/// Scores at evaluation steps. Steps start at 0 and strictly increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub steps: Vec<u64>,
    pub scores: Vec<f64>,
}

impl LearningCurve {
    pub fn new(steps: Vec<u64>, scores: Vec<f64>) -> Result<Self> {
        if steps.len() != scores.len() {
            return Err(Error::Input(format!(
                "{} steps but {} scores",
                steps.len(),
                scores.len()
            )));
        }
        if steps.first() != Some(&0) {
            return Err(Error::Input("a learning curve must start at step 0".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("learning-curve steps must strictly increase".into()));
        }
        Ok(Self { steps, scores })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial(&self) -> f64 {
        self.scores[0]
    }

    pub fn best(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last(&self) -> f64 {
        *self.scores.last().expect("non-empty curve")
    }
}

/// Pointwise mean, min and max over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl AggregateCurve {
    pub fn mean_curve(&self) -> LearningCurve {
        LearningCurve {
            steps: self.steps.clone(),
            scores: self.mean.clone(),
        }
    }
}

pub fn aggregate(curves: &[LearningCurve]) -> Result<AggregateCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Input("no curves to aggregate".into()))?;
    if let Some(c) = curves.iter().find(|c| c.steps != first.steps) {
        return Err(Error::Input(format!(
            "curves have different step grids ({} vs {} evaluations)",
            first.len(),
            c.len()
        )));
    }
    let n = curves.len() as f64;
    let len = first.len();
    let mut agg = AggregateCurve {
        steps: first.steps.clone(),
        mean: vec![0.0; len],
        min: vec![f64::INFINITY; len],
        max: vec![f64::NEG_INFINITY; len],
    };
    for c in curves {
        for (i, &s) in c.scores.iter().enumerate() {
            agg.mean[i] += s;
            agg.min[i] = agg.min[i].min(s);
            agg.max[i] = agg.max[i].max(s);
        }
    }
    for (i, m) in agg.mean.iter_mut().enumerate() {
        // Keep min <= mean <= max despite rounding.
        *m = (*m / n).clamp(agg.min[i], agg.max[i]);
    }
    Ok(agg)
}

/// Centered moving average; windows shrink at the ends so every value averages only
/// recorded points.
pub fn smooth(curve: &LearningCurve, window: usize) -> Result<LearningCurve> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Input(format!("smoothing window must be odd and positive, got {window}")));
    }
    let h = window / 2;
    let n = curve.len();
    let scores = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            let w = &curve.scores[lo..=hi];
            let lo_v = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi_v = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (w.iter().sum::<f64>() / w.len() as f64).clamp(lo_v, hi_v)
        })
        .collect();
    Ok(LearningCurve {
        steps: curve.steps.clone(),
        scores,
    })
}

/// `r0 + 0.8 * (r_max - r0)`: `r0` is the mean initial score over baseline seeds and
/// `r_max` the maximum of the seed-mean curve.
pub fn se80_threshold(baseline: &[LearningCurve]) -> Result<f64> {
    let agg = aggregate(baseline)?;
    if agg.steps.is_empty() {
        return Err(Error::Input("baseline curves are empty".into()));
    }
    let r0 = agg.mean[0];
    let r_max = agg.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(threshold_from(r0, r_max))
}

pub fn threshold_from(r0: f64, r_max: f64) -> f64 {
    r0 + SE80_FRACTION * (r_max - r0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se80Result {
    pub threshold: f64,
    /// First evaluation step at or above the threshold.
    pub crossing_step: Option<u64>,
    /// `crossing_step / total_steps`; `None` when never reached.
    pub se80: Option<f64>,
}

/// First crossing of `threshold` on `curve`, as a fraction of `total_steps`.
pub fn se80(curve: &LearningCurve, threshold: f64, total_steps: u64) -> Result<Se80Result> {
    if total_steps == 0 {
        return Err(Error::Input("training budget must be positive".into()));
    }
    if curve.steps.last().is_some_and(|&s| s > total_steps) {
        return Err(Error::Input("curve extends past the training budget".into()));
    }
    let crossing_step = curve
        .steps
        .iter()
        .zip(&curve.scores)
        .find(|(_, &s)| s >= threshold)
        .map(|(&t, _)| t);
    Ok(Se80Result {
        threshold,
        crossing_step,
        se80: crossing_step.map(|t| t as f64 / total_steps as f64),
    })
}

/// Whether crossing is assessed on the smoothed seed-mean curve or the raw one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Smoothed(usize),
    Raw,
}

impl Default for Crossing {
    fn default() -> Self {
        Crossing::Smoothed(DEFAULT_SMOOTHING_WINDOW)
    }
}

/// SE80 of the seed-mean of `curves`.
pub fn se80_of_seeds(
    curves: &[LearningCurve],
    threshold: f64,
    total_steps: u64,
    crossing: Crossing,
) -> Result<Se80Result> {
    let mean = aggregate(curves)?.mean_curve();
    let curve = match crossing {
        Crossing::Smoothed(w) => smooth(&mean, w)?,
        Crossing::Raw => mean,
    };
    se80(&curve, threshold, total_steps)
}

/// Baseline-relative reading: variant crossing step over baseline crossing step.
pub fn se80_relative(variant: &Se80Result, baseline: &Se80Result) -> Option<f64> {
    match (variant.crossing_step, baseline.crossing_step) {
        (Some(v), Some(b)) if b > 0 => Some(v as f64 / b as f64),
        (Some(0), Some(0)) => Some(1.0),
        _ => None,
    }
}

/// `(best - r0) / (baseline_best - r0)`.
pub fn normalize_best(best: f64, baseline_best: f64, r0: f64) -> Result<f64> {
    let denom = baseline_best - r0;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateBaseline(format!(
            "baseline best {baseline_best} does not improve on the untrained score {r0}"
        )));
    }
    Ok((best - r0) / denom)
}
