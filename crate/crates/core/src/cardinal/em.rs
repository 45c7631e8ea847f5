//! Coordinate-ascent MAP fitting of the Gaussian bias/reliability model.
//!
//! Observation `y` of item `s` by grader `g` is N(score_s + bias_g, 1/rel_g)
//! with priors score_s ~ N(mu_s, var_s), bias_g ~ N(0, bias_var) and
//! rel_g ~ Gamma(shape, rate). Each sweep maximizes the log posterior exactly
//! in the biases, then the reliabilities, then the scores, so the objective
//! never decreases. Graders may have their bias and/or reliability pinned.

use std::collections::BTreeMap;

use super::{EmConfig, Hyperparams, ScorePrior};
use crate::data::{CardinalGrade, ExerciseId, GraderId, SubmissionId};
use crate::error::FitError;

pub const RELIABILITY_FLOOR: f64 = 1e-6;

/// Prior variance used when an exercise has fewer than two grades.
const FALLBACK_SCORE_VAR: f64 = 1.0;
const SCORE_VAR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Obs {
    pub item: usize,
    pub grader: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub items: Vec<(ExerciseId, SubmissionId)>,
    pub item_prior: Vec<(f64, f64)>,
    pub graders: Vec<GraderId>,
    pub fixed_bias: Vec<Option<f64>>,
    pub fixed_rel: Vec<Option<f64>>,
    pub obs: Vec<Obs>,
    item_index: BTreeMap<(ExerciseId, SubmissionId), usize>,
    grader_index: BTreeMap<GraderId, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub scores: Vec<f64>,
    pub bias: Vec<f64>,
    pub rel: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub state: State,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Problem {
    /// Builds a problem over the given grades. Items and graders are indexed
    /// in sorted id order so the fit does not depend on input order.
    pub fn from_grades<'a>(
        grades: impl IntoIterator<Item = &'a CardinalGrade>,
        prior: ScorePrior,
    ) -> Result<Problem, FitError> {
        let grades: Vec<&CardinalGrade> = grades.into_iter().collect();
        let mut item_index: BTreeMap<(ExerciseId, SubmissionId), usize> = BTreeMap::new();
        let mut grader_index: BTreeMap<GraderId, usize> = BTreeMap::new();
        for g in &grades {
            item_index.insert((g.exercise.clone(), g.submission.clone()), 0);
            grader_index.insert(g.grader.clone(), 0);
        }
        for (i, v) in item_index.values_mut().enumerate() {
            *v = i;
        }
        for (i, v) in grader_index.values_mut().enumerate() {
            *v = i;
        }
        let items: Vec<(ExerciseId, SubmissionId)> = item_index.keys().cloned().collect();
        let graders: Vec<GraderId> = grader_index.keys().cloned().collect();

        let mut per_exercise: BTreeMap<&ExerciseId, Vec<f64>> = BTreeMap::new();
        for g in &grades {
            per_exercise.entry(&g.exercise).or_default().push(g.value);
        }
        let stats: BTreeMap<&ExerciseId, (f64, f64)> = per_exercise
            .into_iter()
            .map(|(e, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() < 2 {
                    FALLBACK_SCORE_VAR
                } else {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).max(SCORE_VAR_FLOOR)
                };
                (e, (mean, var))
            })
            .collect();
        let item_prior = items
            .iter()
            .map(|(e, _)| match prior {
                ScorePrior::Empirical => stats[e],
                ScorePrior::Fixed { mean, var } => (mean, var),
            })
            .collect();

        let obs = grades
            .iter()
            .map(|g| Obs {
                item: item_index[&(g.exercise.clone(), g.submission.clone())],
                grader: grader_index[&g.grader],
                value: g.value,
            })
            .collect();

        let n_graders = graders.len();
        Ok(Problem {
            items,
            item_prior,
            graders,
            fixed_bias: vec![None; n_graders],
            fixed_rel: vec![None; n_graders],
            obs,
            item_index,
            grader_index,
        })
    }

    pub fn item(&self, exercise: &ExerciseId, submission: &SubmissionId) -> Option<usize> {
        self.item_index.get(&(exercise.clone(), submission.clone())).copied()
    }

    pub fn grader(&self, id: &GraderId) -> Option<usize> {
        self.grader_index.get(id).copied()
    }

    /// Adds a grader whose parameters are pinned (or returns the existing one).
    pub fn add_grader(&mut self, id: GraderId, bias: Option<f64>, rel: Option<f64>) -> usize {
        if let Some(i) = self.grader(&id) {
            self.fixed_bias[i] = bias;
            self.fixed_rel[i] = rel;
            return i;
        }
        let i = self.graders.len();
        self.graders.push(id.clone());
        self.grader_index.insert(id, i);
        self.fixed_bias.push(bias);
        self.fixed_rel.push(rel);
        i
    }

    pub fn add_obs(&mut self, item: usize, grader: usize, value: f64) {
        self.obs.push(Obs { item, grader, value });
    }

    pub fn initial_state(&self, hyper: &Hyperparams) -> State {
        let mut sum = vec![0.0; self.items.len()];
        let mut count = vec![0usize; self.items.len()];
        for o in &self.obs {
            sum[o.item] += o.value;
            count[o.item] += 1;
        }
        let scores = sum
            .iter()
            .zip(&count)
            .enumerate()
            .map(|(i, (s, &c))| if c > 0 { s / c as f64 } else { self.item_prior[i].0 })
            .collect();
        let prior_rel = hyper.rel_shape / hyper.rel_rate;
        State {
            scores,
            bias: self.fixed_bias.iter().map(|b| b.unwrap_or(0.0)).collect(),
            rel: self.fixed_rel.iter().map(|r| r.map_or(prior_rel, |r| r.max(RELIABILITY_FLOOR))).collect(),
        }
    }

    /// Log posterior up to an additive constant.
    pub fn objective(&self, st: &State, hyper: &Hyperparams) -> f64 {
        let mut total = 0.0;
        for o in &self.obs {
            let r = st.rel[o.grader];
            let resid = o.value - st.scores[o.item] - st.bias[o.grader];
            total += 0.5 * r.ln() - 0.5 * r * resid * resid;
        }
        for (s, (mu, var)) in st.scores.iter().zip(&self.item_prior) {
            total -= (s - mu).powi(2) / (2.0 * var);
        }
        for g in 0..self.graders.len() {
            if self.fixed_bias[g].is_none() {
                total -= st.bias[g].powi(2) / (2.0 * hyper.bias_var);
            }
            if self.fixed_rel[g].is_none() {
                let r = st.rel[g];
                total += (hyper.rel_shape - 1.0) * r.ln() - hyper.rel_rate * r;
            }
        }
        total
    }

    fn update_bias(&self, st: &mut State, hyper: &Hyperparams) {
        let n = self.graders.len();
        let mut num = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for o in &self.obs {
            num[o.grader] += o.value - st.scores[o.item];
            cnt[o.grader] += 1;
        }
        for g in 0..n {
            if self.fixed_bias[g].is_some() {
                continue;
            }
            let r = st.rel[g];
            st.bias[g] = r * num[g] / (1.0 / hyper.bias_var + cnt[g] as f64 * r);
        }
    }

    fn update_rel(&self, st: &mut State, hyper: &Hyperparams) {
        let n = self.graders.len();
        let mut sse = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for o in &self.obs {
            let resid = o.value - st.scores[o.item] - st.bias[o.grader];
            sse[o.grader] += resid * resid;
            cnt[o.grader] += 1;
        }
        for g in 0..n {
            if self.fixed_rel[g].is_some() {
                continue;
            }
            let num = hyper.rel_shape - 1.0 + cnt[g] as f64 / 2.0;
            let den = hyper.rel_rate + 0.5 * sse[g];
            st.rel[g] = (num / den).max(RELIABILITY_FLOOR);
        }
    }

    pub fn update_scores(&self, st: &mut State) {
        let m = self.items.len();
        let mut num: Vec<f64> = self.item_prior.iter().map(|(mu, var)| mu / var).collect();
        let mut den: Vec<f64> = self.item_prior.iter().map(|(_, var)| 1.0 / var).collect();
        for o in &self.obs {
            let r = st.rel[o.grader];
            num[o.item] += r * (o.value - st.bias[o.grader]);
            den[o.item] += r;
        }
        for i in 0..m {
            st.scores[i] = num[i] / den[i];
        }
    }

    pub fn run(&self, hyper: &Hyperparams, cfg: &EmConfig) -> Outcome {
        self.run_from(self.initial_state(hyper), hyper, cfg)
    }

    pub fn run_from(&self, mut st: State, hyper: &Hyperparams, cfg: &EmConfig) -> Outcome {
        let mut trace = vec![self.objective(&st, hyper)];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let prev = st.clone();
            self.update_bias(&mut st, hyper);
            self.update_rel(&mut st, hyper);
            self.update_scores(&mut st);
            trace.push(self.objective(&st, hyper));
            if max_change(&prev, &st) < cfg.tolerance {
                converged = true;
                break;
            }
        }
        Outcome { state: st, trace, iterations, converged }
    }
}

/// Largest parameter change; reliabilities are compared relative to their size.
fn max_change(a: &State, b: &State) -> f64 {
    let abs = a
        .scores
        .iter()
        .zip(&b.scores)
        .chain(a.bias.iter().zip(&b.bias))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let rel = a.rel.iter().zip(&b.rel).map(|(x, y)| (x - y).abs() / x.max(y.abs()).max(1.0)).fold(0.0, f64::max);
    abs.max(rel)
}
