//! Error functions and correlation statistics.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ExerciseId, SubmissionId, TruthSet};
use crate::error::MetricError;

/// Scores of the submissions of one exercise.
pub type ScoreVector = BTreeMap<SubmissionId, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Kendall,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::L2, Metric::Kendall];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::Kendall => "kendall",
        }
    }

    pub fn evaluate<K: Ord>(self, est: &BTreeMap<K, f64>, truth: &BTreeMap<K, f64>) -> Result<f64, MetricError> {
        match self {
            Metric::L2 => l2_error(est, truth),
            Metric::Kendall => kendall_tau_error(est, truth),
        }
    }

    fn min_len(self) -> usize {
        match self {
            Metric::L2 => 1,
            Metric::Kendall => 2,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Metric::L2),
            "kendall" | "kendall-tau" => Ok(Metric::Kendall),
            other => Err(format!("unknown metric {other:?} (expected l2 or kendall)")),
        }
    }
}

fn paired<K: Ord>(est: &BTreeMap<K, f64>, truth: &BTreeMap<K, f64>, min: usize) -> Result<Vec<(f64, f64)>, MetricError> {
    if est.len() != truth.len() || !est.keys().zip(truth.keys()).all(|(a, b)| a == b) {
        return Err(MetricError::KeyMismatch);
    }
    if est.len() < min {
        return Err(MetricError::TooFew { needed: min, got: est.len() });
    }
    let pairs: Vec<(f64, f64)> = est.values().copied().zip(truth.values().copied()).collect();
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(pairs)
}

/// Root-mean-square deviation between estimated and true scores.
pub fn l2_error<K: Ord>(est: &BTreeMap<K, f64>, truth: &BTreeMap<K, f64>) -> Result<f64, MetricError> {
    let pairs = paired(est, truth, 1)?;
    let sse: f64 = pairs.iter().map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Mean pairwise disagreement between the orders induced by two score
/// vectors: 0 when a pair is ordered (or tied) the same way in both, 1 when it
/// is inverted, 0.5 when exactly one side ties it.
pub fn kendall_tau_error<K: Ord>(est: &BTreeMap<K, f64>, truth: &BTreeMap<K, f64>) -> Result<f64, MetricError> {
    let pairs = paired(est, truth, 2)?;
    let n = pairs.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = pairs[i].0.partial_cmp(&pairs[j].0).expect("finite");
            let b = pairs[i].1.partial_cmp(&pairs[j].1).expect("finite");
            total += match (a, b) {
                _ if a == b => 0.0,
                (Ordering::Equal, _) | (_, Ordering::Equal) => 0.5,
                _ => 1.0,
            };
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Pearson product-moment correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(MetricError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Result of [`per_exercise_errors`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExerciseErrors {
    pub values: BTreeMap<ExerciseId, f64>,
    /// Exercises the metric was undefined on, with the reason.
    pub skipped: Vec<(ExerciseId, String)>,
}

/// Applies `metric` to each exercise of a fit independently.
pub fn per_exercise_errors(
    scores: &BTreeMap<(ExerciseId, SubmissionId), f64>,
    truth: &TruthSet,
    metric: Metric,
) -> Result<ExerciseErrors, MetricError> {
    let mut grouped: BTreeMap<&ExerciseId, (ScoreVector, ScoreVector)> = BTreeMap::new();
    for ((e, s), v) in scores {
        let t = truth.scores.get(&(e.clone(), s.clone())).copied().ok_or_else(|| MetricError::MissingTruth {
            exercise: e.to_string(),
            submission: s.to_string(),
        })?;
        let slot = grouped.entry(e).or_default();
        slot.0.insert(s.clone(), *v);
        slot.1.insert(s.clone(), t);
    }
    let mut out = ExerciseErrors::default();
    for (e, (est, tru)) in grouped {
        if est.len() < metric.min_len() {
            log::warn!("exercise {e}: {} undefined on {} submission(s), skipped", metric, est.len());
            out.skipped.push((e.clone(), format!("{metric} needs at least {} submissions", metric.min_len())));
            continue;
        }
        out.values.insert(e.clone(), metric.evaluate(&est, &tru)?);
    }
    Ok(out)
}
