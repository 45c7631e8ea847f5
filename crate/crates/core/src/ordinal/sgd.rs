//! Alternating stochastic gradient ascent for the pairwise and listwise
//! ranking models. Reliabilities are optimized on the log scale.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use super::{components, Model, OrdinalConfig, OrdinalFit};
use crate::data::{ExerciseId, GraderId, OrdinalBallot, SubmissionId};

/// Bounds on log reliability.
const LOG_REL_MIN: f64 = -12.0;
const LOG_REL_MAX: f64 = 12.0;

/// Pair link function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logistic,
    Probit,
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Probability that an item with latent gap `gap` over another wins, for a
/// grader with reliability `rel`.
pub fn pair_probability(link: Link, rel: f64, gap: f64) -> f64 {
    let x = rel * gap;
    match link {
        Link::Logistic => 1.0 / (1.0 + (-x).exp()),
        Link::Probit => normal_cdf(x),
    }
}

fn log_prob(link: Link, x: f64) -> f64 {
    match link {
        // log sigma(x) = -log(1 + e^-x)
        Link::Logistic => {
            if x > 0.0 {
                -(-x).exp().ln_1p()
            } else {
                x - x.exp().ln_1p()
            }
        }
        Link::Probit => {
            if x > -30.0 {
                normal_cdf(x).ln()
            } else {
                -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln()
            }
        }
    }
}

/// d/dx log P(x).
fn dlog_prob(link: Link, x: f64) -> f64 {
    match link {
        Link::Logistic => 1.0 / (1.0 + x.exp()),
        Link::Probit => {
            if x > -30.0 {
                (-0.5 * x * x).exp() / (2.0 * PI).sqrt() / normal_cdf(x)
            } else {
                -x
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Pair { w: usize, l: usize, g: usize },
    /// Index into `Problem::lists`.
    List(usize),
}

struct Problem {
    subs: Vec<SubmissionId>,
    graders: Vec<GraderId>,
    terms: Vec<Term>,
    /// Strict ballots best to worst, with their grader.
    lists: Vec<(usize, Vec<usize>)>,
    link: Link,
}

impl Problem {
    fn new(group: &[&OrdinalBallot], model: Model, warnings: &mut Vec<String>) -> Problem {
        let mut subs: Vec<SubmissionId> = group.iter().flat_map(|b| b.submissions().cloned()).collect();
        subs.sort();
        subs.dedup();
        let mut graders: Vec<GraderId> = group.iter().map(|b| b.grader.clone()).collect();
        graders.sort();
        graders.dedup();
        let si: BTreeMap<&SubmissionId, usize> = subs.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let gi: BTreeMap<&GraderId, usize> = graders.iter().enumerate().map(|(i, g)| (g, i)).collect();

        let mut ordered: Vec<&OrdinalBallot> = group.to_vec();
        ordered.sort_by(|a, b| (&a.grader, &a.ranking).cmp(&(&b.grader, &b.ranking)));

        let mut terms = Vec::new();
        let mut lists = Vec::new();
        let mut broke_ties = false;
        for b in ordered {
            let g = gi[&b.grader];
            if model == Model::Listwise && b.is_strict() {
                let seq = b.ranking.iter().rev().map(|grp| si[&grp[0]]).collect();
                terms.push(Term::List(lists.len()));
                lists.push((g, seq));
                continue;
            }
            broke_ties |= model == Model::Listwise;
            for (hi, upper) in b.ranking.iter().enumerate() {
                for lower in &b.ranking[..hi] {
                    for w in upper {
                        for l in lower {
                            terms.push(Term::Pair { w: si[w], l: si[l], g });
                        }
                    }
                }
            }
        }
        if broke_ties {
            warnings.push("ballots with ties were broken into pairs".into());
        }
        let link = match model {
            Model::Pairwise(link) => link,
            Model::Listwise => Link::Logistic,
        };
        Problem { subs, graders, terms, lists, link }
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in &self.terms {
            match *t {
                Term::Pair { w, l, .. } => out.push((w, l)),
                Term::List(i) => {
                    let seq = &self.lists[i].1;
                    out.extend(seq.windows(2).map(|p| (p[0], p[1])));
                }
            }
        }
        out
    }

    fn log_lik(&self, x: &[f64], rel: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| match *t {
                Term::Pair { w, l, g } => log_prob(self.link, rel[g] * (x[w] - x[l])),
                Term::List(i) => {
                    let (g, seq) = &self.lists[i];
                    list_log_lik(seq, x, rel[*g])
                }
            })
            .sum()
    }

    fn objective(&self, x: &[f64], u: &[f64], cfg: &OrdinalConfig) -> f64 {
        let rel: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let mut total = self.log_lik(x, &rel);
        total -= x.iter().map(|v| (v - cfg.prior.mean).powi(2)).sum::<f64>() / (2.0 * cfg.prior.var);
        if cfg.estimate_reliability {
            total += rel.iter().zip(u).map(|(r, lr)| (cfg.rel_shape - 1.0) * lr - cfg.rel_rate * r).sum::<f64>();
        }
        total
    }

    /// One pass over `order` updating latents.
    fn score_pass(&self, order: &[usize], x: &mut [f64], rel: &[f64], eta: f64) {
        for &k in order {
            match self.terms[k] {
                Term::Pair { w, l, g } => {
                    let r = rel[g];
                    let step = eta * r * dlog_prob(self.link, r * (x[w] - x[l]));
                    x[w] += step;
                    x[l] -= step;
                }
                Term::List(i) => {
                    let (g, seq) = &self.lists[i];
                    let r = rel[*g];
                    let grad = list_grad_x(seq, x, r);
                    for (pos, item) in seq.iter().enumerate() {
                        x[*item] += eta * grad[pos];
                    }
                }
            }
        }
    }

    /// One pass over `order` updating log reliabilities.
    fn rel_pass(&self, order: &[usize], x: &[f64], u: &mut [f64], eta: f64) {
        for &k in order {
            let (g, grad) = match self.terms[k] {
                Term::Pair { w, l, g } => {
                    let r = u[g].exp();
                    let d = x[w] - x[l];
                    (g, r * d * dlog_prob(self.link, r * d))
                }
                Term::List(i) => {
                    let (g, seq) = &self.lists[i];
                    let r = u[*g].exp();
                    (*g, r * list_grad_r(seq, x, r))
                }
            };
            u[g] = (u[g] + eta * grad).clamp(LOG_REL_MIN, LOG_REL_MAX);
        }
    }
}

/// Log-probability of drawing `seq` in order, item weights exp(r x).
fn list_log_lik(seq: &[usize], x: &[f64], r: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..seq.len().saturating_sub(1) {
        let a: Vec<f64> = seq[i..].iter().map(|s| r * x[*s]).collect();
        total += a[0] - log_sum_exp(&a);
    }
    total
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of r x over `seq[i..]`.
fn suffix_softmax(seq: &[usize], i: usize, x: &[f64], r: f64) -> Vec<f64> {
    let a: Vec<f64> = seq[i..].iter().map(|s| r * x[*s]).collect();
    let z = log_sum_exp(&a);
    a.iter().map(|v| (v - z).exp()).collect()
}

/// Gradient of [`list_log_lik`] with respect to the latents, by position.
fn list_grad_x(seq: &[usize], x: &[f64], r: f64) -> Vec<f64> {
    let mut grad = vec![0.0; seq.len()];
    for i in 0..seq.len().saturating_sub(1) {
        let p = suffix_softmax(seq, i, x, r);
        grad[i] += r;
        for (j, pj) in p.iter().enumerate() {
            grad[i + j] -= r * pj;
        }
    }
    grad
}

/// Derivative of [`list_log_lik`] with respect to r.
fn list_grad_r(seq: &[usize], x: &[f64], r: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..seq.len().saturating_sub(1) {
        let p = suffix_softmax(seq, i, x, r);
        let expected: f64 = p.iter().zip(&seq[i..]).map(|(pj, s)| pj * x[*s]).sum();
        total += x[seq[i]] - expected;
    }
    total
}

pub(super) fn fit_exercise(
    exercise: &ExerciseId,
    group: &[&OrdinalBallot],
    cfg: &OrdinalConfig,
    model: Model,
    seed: u64,
) -> OrdinalFit {
    let mut warnings = Vec::new();
    let p = Problem::new(group, model, &mut warnings);
    let n = p.subs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![cfg.prior.mean; n];
    let mut u = vec![0.0; p.graders.len()];
    let mut order: Vec<usize> = (0..p.terms.len()).collect();
    let mut trace = vec![p.objective(&x, &u, cfg)];
    let mut last_change = f64::INFINITY;
    // proximal shrink toward the prior mean, once per epoch
    let prior_prec = 1.0 / cfg.prior.var;

    for epoch in 1..=cfg.epochs {
        let eta = cfg.step / (epoch as f64).sqrt();
        let before = x.clone();
        let rel: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        order.shuffle(&mut rng);
        p.score_pass(&order, &mut x, &rel, eta);
        let shrink = 1.0 / (1.0 + eta * prior_prec);
        for v in x.iter_mut() {
            *v = cfg.prior.mean + (*v - cfg.prior.mean) * shrink;
        }
        if cfg.estimate_reliability {
            order.shuffle(&mut rng);
            p.rel_pass(&order, &x, &mut u, eta);
            for lr in u.iter_mut() {
                let r = lr.exp();
                *lr = (*lr + eta * (cfg.rel_shape - 1.0 - cfg.rel_rate * r)).clamp(LOG_REL_MIN, LOG_REL_MAX);
            }
        }
        last_change = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        trace.push(p.objective(&x, &u, cfg));
    }

    let comps = components(n, p.edges());
    if comps.len() > 1 {
        warnings.push(format!("exercise {exercise}: comparison graph has {} components", comps.len()));
        for comp in &comps {
            let mean = comp.iter().map(|i| x[*i]).sum::<f64>() / comp.len() as f64;
            for i in comp {
                x[*i] += cfg.prior.mean - mean;
            }
        }
    }

    let converged = last_change <= cfg.tolerance;
    if !converged {
        log::debug!("exercise {exercise}: latents still moving by {last_change:e} after {} epochs", cfg.epochs);
    }
    OrdinalFit {
        latent: p.subs.iter().zip(&x).map(|(s, v)| ((exercise.clone(), s.clone()), *v)).collect(),
        reliability: if cfg.estimate_reliability {
            p.graders.iter().zip(&u).map(|(g, lr)| ((exercise.clone(), g.clone()), lr.exp())).collect()
        } else {
            BTreeMap::new()
        },
        objective_trace: trace,
        converged,
        warnings,
    }
}
