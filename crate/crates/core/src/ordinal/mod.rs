//! Rank aggregation over ordinal ballots: Borda count, Bradley-Terry,
//! Thurstone and Plackett-Luce, plus the map from latent scores back to a
//! cardinal scale.

mod sgd;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cardinal::ModelFit;
use crate::data::{ExerciseId, GraderId, OrdinalBallot, SubmissionId};
use crate::error::FitError;

pub use sgd::{normal_cdf, pair_probability, Link};

/// `winner` was ranked strictly above `loser` by `grader`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairComparison {
    pub exercise: ExerciseId,
    pub winner: SubmissionId,
    pub loser: SubmissionId,
    pub grader: GraderId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrdinalFit {
    pub latent: BTreeMap<(ExerciseId, SubmissionId), f64>,
    /// Per-exercise grader reliabilities; empty when not estimated.
    pub reliability: BTreeMap<(ExerciseId, GraderId), f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl OrdinalFit {
    pub fn exercise_latent(&self, exercise: &ExerciseId) -> BTreeMap<SubmissionId, f64> {
        self.latent.iter().filter(|((e, _), _)| e == exercise).map(|((_, s), v)| (s.clone(), *v)).collect()
    }

    /// Latent scores in the cardinal fit layout, for metrics and fit.json.
    pub fn into_model_fit(self) -> ModelFit {
        let reliability = self.reliability.into_iter().map(|((_, g), r)| (g, r)).collect();
        ModelFit {
            scores: self.latent,
            reliability,
            objective_trace: self.objective_trace,
            iterations: 0,
            converged: self.converged,
            warnings: self.warnings,
            ..ModelFit::default()
        }
    }

    pub(crate) fn absorb(&mut self, other: OrdinalFit) {
        self.latent.extend(other.latent);
        self.reliability.extend(other.reliability);
        if self.objective_trace.len() < other.objective_trace.len() {
            self.objective_trace.resize(other.objective_trace.len(), *self.objective_trace.last().unwrap_or(&0.0));
        }
        let last = other.objective_trace.last().copied().unwrap_or(0.0);
        for (i, slot) in self.objective_trace.iter_mut().enumerate() {
            *slot += other.objective_trace.get(i).copied().unwrap_or(last);
        }
        self.converged &= other.converged;
        self.warnings.extend(other.warnings);
    }
}

/// Normal prior on latent scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub mean: f64,
    pub var: f64,
}

impl Default for LatentPrior {
    fn default() -> Self {
        Self { mean: 0.5, var: 1.0 / 36.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdinalConfig {
    pub prior: LatentPrior,
    /// Gamma shape/rate of the reliability prior.
    pub rel_shape: f64,
    pub rel_rate: f64,
    pub estimate_reliability: bool,
    /// Initial SGD step; epoch t uses step / sqrt(t).
    pub step: f64,
    pub epochs: usize,
    /// Converged when no latent moved by more than this in the final epoch.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OrdinalConfig {
    fn default() -> Self {
        Self {
            prior: LatentPrior::default(),
            rel_shape: 10.0,
            rel_rate: 2.0,
            estimate_reliability: false,
            step: 0.05,
            epochs: 200,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl OrdinalConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.prior.mean.is_finite() || !pos(self.prior.var) {
            return Err(FitError::Hyper("latent prior needs finite mean and positive var".into()));
        }
        if !pos(self.rel_shape) || !pos(self.rel_rate) || !pos(self.step) || self.epochs == 0 {
            return Err(FitError::Hyper("rel_shape, rel_rate, step and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Full rank-breaking: every submission beats every submission in a lower
/// tie-group of the same ballot.
pub fn ballots_to_pairs(ballots: &[OrdinalBallot]) -> Vec<PairComparison> {
    let mut out = Vec::new();
    for b in ballots {
        for (hi, upper) in b.ranking.iter().enumerate() {
            for lower in &b.ranking[..hi] {
                for w in upper {
                    for l in lower {
                        out.push(PairComparison {
                            exercise: b.exercise.clone(),
                            winner: w.clone(),
                            loser: l.clone(),
                            grader: b.grader.clone(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Sum over ballots of the number of submissions ranked strictly lower; a
/// tie-group gets the mean of the positions it spans.
pub fn borda(ballots: &[OrdinalBallot]) -> OrdinalFit {
    let mut latent: BTreeMap<(ExerciseId, SubmissionId), f64> = BTreeMap::new();
    for b in ballots {
        let mut below = 0usize;
        for group in &b.ranking {
            let score = below as f64 + (group.len() as f64 - 1.0) / 2.0;
            for s in group {
                *latent.entry((b.exercise.clone(), s.clone())).or_default() += score;
            }
            below += group.len();
        }
    }
    OrdinalFit { latent, converged: true, ..OrdinalFit::default() }
}

fn by_exercise(ballots: &[OrdinalBallot]) -> BTreeMap<&ExerciseId, Vec<&OrdinalBallot>> {
    let mut out: BTreeMap<&ExerciseId, Vec<&OrdinalBallot>> = BTreeMap::new();
    for b in ballots {
        out.entry(&b.exercise).or_default().push(b);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Pairwise(Link),
    Listwise,
}

fn fit(ballots: &[OrdinalBallot], cfg: &OrdinalConfig, model: Model) -> Result<OrdinalFit, FitError> {
    cfg.validate()?;
    if ballots.is_empty() {
        return Err(FitError::NoBallots("empty ballot list".into()));
    }
    let mut out = OrdinalFit { converged: true, ..OrdinalFit::default() };
    for (i, (exercise, group)) in by_exercise(ballots).into_iter().enumerate() {
        let seed = crate::synth::replicate_seed(cfg.seed, i as u64);
        out.absorb(sgd::fit_exercise(exercise, &group, cfg, model, seed));
    }
    Ok(out)
}

/// Bradley-Terry: P(w beats l) = 1 / (1 + exp(-r_g (x_w - x_l))).
pub fn bt_fit(ballots: &[OrdinalBallot], cfg: &OrdinalConfig) -> Result<OrdinalFit, FitError> {
    fit(ballots, cfg, Model::Pairwise(Link::Logistic))
}

/// Thurstone: P(w beats l) = Phi(r_g (x_w - x_l)).
pub fn thurstone_fit(ballots: &[OrdinalBallot], cfg: &OrdinalConfig) -> Result<OrdinalFit, FitError> {
    fit(ballots, cfg, Model::Pairwise(Link::Probit))
}

/// Plackett-Luce over each strict ballot read best to worst, item weights
/// exp(r_g x). Ballots with ties contribute their Bradley-Terry pairs.
pub fn pl_fit(ballots: &[OrdinalBallot], cfg: &OrdinalConfig) -> Result<OrdinalFit, FitError> {
    fit(ballots, cfg, Model::Listwise)
}

/// Affine map of each exercise's latents onto the target mean and
/// population variance. Constant latents map to the mean.
pub fn latent_to_scores(
    latent: &BTreeMap<(ExerciseId, SubmissionId), f64>,
    mean: f64,
    var: f64,
    clip: bool,
) -> BTreeMap<(ExerciseId, SubmissionId), f64> {
    let mut per: BTreeMap<&ExerciseId, Vec<f64>> = BTreeMap::new();
    for ((e, _), v) in latent {
        per.entry(e).or_default().push(*v);
    }
    let maps: BTreeMap<&ExerciseId, (f64, f64)> = per
        .into_iter()
        .map(|(e, v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let lv = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            let scale = if lv > 0.0 { (var.max(0.0) / lv).sqrt() } else { 0.0 };
            (e, (m, scale))
        })
        .collect();
    latent
        .iter()
        .map(|((e, s), v)| {
            let (m, scale) = maps[e];
            let y = mean + scale * (v - m);
            ((e.clone(), s.clone()), if clip { y.clamp(0.0, 1.0) } else { y })
        })
        .collect()
}

/// Connected components of the comparison graph, each a sorted set of item
/// indices.
pub(crate) fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<BTreeSet<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut comps: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().insert(i);
    }
    comps.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::kendall_tau_error;
    use approx::assert_abs_diff_eq;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ballot(grader: &str, ranking: &[&[&str]]) -> OrdinalBallot {
        OrdinalBallot {
            exercise: "e".into(),
            grader: grader.into(),
            ranking: ranking.iter().map(|g| g.iter().map(|s| SubmissionId::from(*s)).collect()).collect(),
        }
    }

    fn pair(w: &str, l: &str) -> (String, String) {
        (w.to_string(), l.to_string())
    }

    fn pairs_of(b: &[OrdinalBallot]) -> Vec<(String, String)> {
        let mut v: Vec<_> = ballots_to_pairs(b).into_iter().map(|p| pair(p.winner.as_str(), p.loser.as_str())).collect();
        v.sort();
        v
    }

    #[test]
    fn rank_breaking() {
        let strict = [ballot("g", &[&["A"], &["B"], &["C"]])];
        assert_eq!(pairs_of(&strict), vec![pair("B", "A"), pair("C", "A"), pair("C", "B")]);
        let tied = [ballot("g", &[&["A", "B"], &["C"]])];
        assert_eq!(pairs_of(&tied), vec![pair("C", "A"), pair("C", "B")]);
        let five = [ballot("g", &[&["a"], &["b"], &["c"], &["d"], &["e"]])];
        assert_eq!(ballots_to_pairs(&five).len(), 10);
    }

    fn latent(fit: &OrdinalFit, s: &str) -> f64 {
        fit.latent[&("e".into(), s.into())]
    }

    #[test]
    fn borda_examples() {
        let f = borda(&[ballot("g", &[&["A"], &["B"], &["C"]])]);
        assert_eq!((latent(&f, "A"), latent(&f, "B"), latent(&f, "C")), (0.0, 1.0, 2.0));
        let f = borda(&[ballot("g", &[&["A"], &["B"]]), ballot("h", &[&["B"], &["A"]])]);
        assert_eq!((latent(&f, "A"), latent(&f, "B")), (1.0, 1.0));
        let f = borda(&[ballot("g", &[&["A", "B"], &["C"]])]);
        assert_eq!((latent(&f, "A"), latent(&f, "B"), latent(&f, "C")), (0.5, 0.5, 2.0));
    }

    #[test]
    fn fractional_borda_averages_tie_breakings() {
        let tied = borda(&[ballot("g", &[&["A"], &["B", "C", "D"], &["E"]])]);
        let orders: [&[&str]; 6] =
            [&["B", "C", "D"], &["B", "D", "C"], &["C", "B", "D"], &["C", "D", "B"], &["D", "B", "C"], &["D", "C", "B"]];
        for s in ["B", "C", "D"] {
            let avg: f64 = orders.iter().map(|o| 1.0 + o.iter().position(|x| *x == s).unwrap() as f64).sum::<f64>() / 6.0;
            assert_eq!(latent(&tied, s), avg);
        }
        assert_eq!(latent(&tied, "E"), 4.0);
    }

    #[test]
    fn pair_probabilities() {
        assert_eq!(pair_probability(Link::Logistic, 1.0, 0.0), 0.5);
        assert_abs_diff_eq!(pair_probability(Link::Logistic, 1.0, 1.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_eq!(pair_probability(Link::Probit, 1.0, 0.0), 0.5);
        assert_abs_diff_eq!(pair_probability(Link::Probit, 1.0, 1.0), 0.841_344_746_068_542_9, epsilon = 1e-9);
    }

    #[test]
    fn latent_map_examples() {
        let mut l = BTreeMap::new();
        l.insert(("e".into(), "a".into()), 0.0);
        l.insert(("e".into(), "b".into()), 1.0);
        let s = latent_to_scores(&l, 0.5, 0.25, false);
        assert_abs_diff_eq!(s[&("e".into(), "a".into())], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[&("e".into(), "b".into())], 1.0, epsilon = 1e-12);
        for v in l.values_mut() {
            *v = 3.0;
        }
        let s = latent_to_scores(&l, 0.6, 0.1, true);
        assert!(s.values().all(|v| *v == 0.6));
    }

    /// `n_ballots` strict noise-free ballots, each a random `size`-subset of
    /// `n_items` items ranked by a planted order.
    pub(crate) fn planted(n_items: usize, n_ballots: usize, size: usize, seed: u64) -> (Vec<OrdinalBallot>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<String> = (0..n_items).map(|i| format!("s{i:02}")).collect();
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let rank: BTreeMap<&String, usize> = order.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let ballots = (0..n_ballots)
            .map(|b| {
                let mut pick: Vec<&String> = items.choose_multiple(&mut rng, size).collect();
                pick.sort_by_key(|s| rank[s]);
                let ranking = pick.iter().map(|s| vec![SubmissionId::from(s.as_str())]).collect();
                OrdinalBallot { exercise: "e".into(), grader: format!("g{b:02}").into(), ranking }
            })
            .collect();
        (ballots, order)
    }

    pub(crate) fn planted_error(fit: &OrdinalFit, order: &[String]) -> f64 {
        let truth: BTreeMap<SubmissionId, f64> =
            order.iter().enumerate().map(|(i, s)| (SubmissionId::from(s.as_str()), i as f64)).collect();
        kendall_tau_error(&fit.exercise_latent(&"e".into()), &truth).unwrap()
    }

    /// A unit-variance prior leaves the likelihood room to separate the
    /// planted order.
    pub(crate) fn planted_cfg(estimate_reliability: bool) -> OrdinalConfig {
        OrdinalConfig { estimate_reliability, prior: LatentPrior { mean: 0.5, var: 1.0 }, ..Default::default() }
    }

    #[test]
    fn planted_order_is_recovered() {
        for seed in [4, 17] {
            let (ballots, order) = planted(12, 50, 5, seed);
            for est in [true, false] {
                for f in [bt_fit, thurstone_fit, pl_fit] {
                    let fit = f(&ballots, &planted_cfg(est)).unwrap();
                    assert_eq!(planted_error(&fit, &order), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_ballot_orders_latents() {
        let b = [ballot("g", &[&["A"], &["B"], &["C"]])];
        for f in [bt_fit, thurstone_fit, pl_fit] {
            let fit = f(&b, &OrdinalConfig::default()).unwrap();
            assert!(latent(&fit, "A") < latent(&fit, "B") && latent(&fit, "B") < latent(&fit, "C"));
        }
    }

    #[test]
    fn pl_and_bt_agree_on_pairs() {
        let b = [
            ballot("g1", &[&["A"], &["B"]]),
            ballot("g2", &[&["B"], &["C"]]),
            ballot("g3", &[&["A"], &["C"]]),
            ballot("g4", &[&["C"], &["A"]]),
            ballot("g5", &[&["A"], &["B"]]),
        ];
        let cfg = OrdinalConfig::default();
        let order = |f: &OrdinalFit| {
            let mut v: Vec<(f64, String)> = ["A", "B", "C"].iter().map(|s| (latent(f, s), s.to_string())).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v.into_iter().map(|x| x.1).collect::<Vec<_>>()
        };
        assert_eq!(order(&bt_fit(&b, &cfg).unwrap()), order(&pl_fit(&b, &cfg).unwrap()));
    }

    #[test]
    fn duplicated_ballots_keep_order() {
        let (ballots, order) = planted(12, 50, 5, 9);
        let doubled: Vec<OrdinalBallot> = ballots.iter().chain(&ballots).cloned().collect();
        for f in [bt_fit, thurstone_fit, pl_fit] {
            let fit = f(&doubled, &planted_cfg(false)).unwrap();
            assert_eq!(planted_error(&fit, &order), 0.0);
        }
    }

    #[test]
    fn relabeling_keeps_order() {
        let (ballots, order) = planted(12, 50, 5, 2);
        let rename = |s: &str| format!("q{}", s.chars().rev().collect::<String>());
        let relabeled: Vec<OrdinalBallot> = ballots
            .iter()
            .map(|b| OrdinalBallot {
                exercise: b.exercise.clone(),
                grader: rename(b.grader.as_str()).into(),
                ranking: b.ranking.iter().map(|g| g.iter().map(|s| rename(s.as_str()).into()).collect()).collect(),
            })
            .collect();
        let renamed: Vec<String> = order.iter().map(|s| rename(s)).collect();
        for f in [bt_fit, thurstone_fit, pl_fit] {
            assert_eq!(planted_error(&f(&relabeled, &planted_cfg(false)).unwrap(), &renamed), 0.0);
        }
    }

    #[test]
    fn disconnected_components_are_centered() {
        let b = [ballot("g", &[&["A"], &["B"]]), ballot("h", &[&["C"], &["D"], &["E"]])];
        let fit = bt_fit(&b, &OrdinalConfig::default()).unwrap();
        assert!(!fit.warnings.is_empty());
        assert_abs_diff_eq!((latent(&fit, "A") + latent(&fit, "B")) / 2.0, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!((latent(&fit, "C") + latent(&fit, "D") + latent(&fit, "E")) / 3.0, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reliabilities_positive_and_deterministic() {
        let (ballots, _) = planted(10, 20, 4, 5);
        let cfg = OrdinalConfig { estimate_reliability: true, seed: 3, ..Default::default() };
        let a = bt_fit(&ballots, &cfg).unwrap();
        assert_eq!(a.reliability.len(), 20);
        assert!(a.reliability.values().all(|r| *r > 0.0));
        assert_eq!(a, bt_fit(&ballots, &cfg).unwrap());
        assert!(bt_fit(&ballots, &OrdinalConfig::default()).unwrap().reliability.is_empty());
    }

    #[test]
    fn components_union_find() {
        let c = components(5, [(0, 1), (3, 4), (1, 0)]);
        assert_eq!(c.len(), 3);
        assert!(c.contains(&[0, 1].into_iter().collect()));
    }
}
