//! Cardinal estimators: Mean and Median baselines, and the Gaussian
//! bias/reliability models fit per exercise (UST) or jointly across all
//! exercises with grader parameters shared (UMT).

pub(crate) mod em;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CardinalGrade, Dataset, ExerciseId, GradeRole, GraderId, RoleSet, SubmissionId};
use crate::error::FitError;

pub use em::RELIABILITY_FLOOR;

/// Prior on true scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorePrior {
    /// Per-exercise sample mean and variance of the grades being fit.
    Empirical,
    Fixed { mean: f64, var: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub score_prior: ScorePrior,
    /// Variance of the zero-mean bias prior.
    pub bias_var: f64,
    /// Gamma shape of the reliability prior.
    pub rel_shape: f64,
    /// Gamma rate of the reliability prior.
    pub rel_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { score_prior: ScorePrior::Empirical, bias_var: 1.0 / 36.0, rel_shape: 3.0, rel_rate: 1.0 / 30.0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), FitError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.bias_var) || !pos(self.rel_shape) || !pos(self.rel_rate) {
            return Err(FitError::Hyper("bias_var, rel_shape and rel_rate must be positive".into()));
        }
        if let ScorePrior::Fixed { mean, var } = self.score_prior {
            if !mean.is_finite() || !pos(var) {
                return Err(FitError::Hyper("fixed score prior needs finite mean and positive var".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Stop once no score or bias moves by more than this (reliabilities:
    /// relative change).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 500 }
    }
}

/// Estimated scores plus, for model-based fits, grader parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    #[serde(with = "score_rows")]
    pub scores: BTreeMap<(ExerciseId, SubmissionId), f64>,
    pub bias: BTreeMap<GraderId, f64>,
    pub reliability: BTreeMap<GraderId, f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ModelFit {
    pub fn exercise_scores(&self, exercise: &ExerciseId) -> BTreeMap<SubmissionId, f64> {
        self.scores.iter().filter(|((e, _), _)| e == exercise).map(|((_, s), v)| (s.clone(), *v)).collect()
    }

    /// Restricts the scores to the given submissions.
    pub fn restrict<'a>(&self, keep: impl Fn(&ExerciseId, &SubmissionId) -> bool + 'a) -> ModelFit {
        ModelFit {
            scores: self.scores.iter().filter(|((e, s), _)| keep(e, s)).map(|(k, v)| (k.clone(), *v)).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn from_outcome(p: &em::Problem, out: em::Outcome, warnings: Vec<String>) -> ModelFit {
        let scores = p.items.iter().cloned().zip(out.state.scores.iter().copied()).collect();
        let bias = p.graders.iter().cloned().zip(out.state.bias.iter().copied()).collect();
        let reliability = p.graders.iter().cloned().zip(out.state.rel.iter().copied()).collect();
        ModelFit {
            scores,
            bias,
            reliability,
            objective_trace: out.trace,
            iterations: out.iterations,
            converged: out.converged,
            warnings,
        }
    }
}

mod score_rows {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::data::{ExerciseId, SubmissionId};

    #[derive(Serialize, Deserialize)]
    struct Row {
        exercise: ExerciseId,
        submission: SubmissionId,
        score: f64,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(ExerciseId, SubmissionId), f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Row> = m
            .iter()
            .map(|((e, sub), v)| Row { exercise: e.clone(), submission: sub.clone(), score: *v })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(ExerciseId, SubmissionId), f64>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows.into_iter().map(|r| ((r.exercise, r.submission), r.score)).collect())
    }
}

fn collect_by_submission(
    dataset: &Dataset,
    roles: RoleSet,
    strict: bool,
) -> Result<BTreeMap<(ExerciseId, SubmissionId), Vec<f64>>, FitError> {
    let mut by: BTreeMap<(ExerciseId, SubmissionId), Vec<f64>> = BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        by.entry((g.exercise.clone(), g.submission.clone())).or_default().push(g.value);
    }
    if strict {
        for (s, e) in dataset.submissions() {
            if !by.contains_key(&(e.clone(), s.clone())) {
                return Err(FitError::Ungraded { submission: s.to_string() });
            }
        }
    }
    Ok(by)
}

fn aggregate(dataset: &Dataset, roles: RoleSet, strict: bool, f: impl Fn(&mut [f64]) -> f64) -> Result<ModelFit, FitError> {
    let scores = collect_by_submission(dataset, roles, strict)?.into_iter().map(|(k, mut v)| (k, f(&mut v))).collect();
    Ok(ModelFit { scores, converged: true, ..ModelFit::default() })
}

fn mean(v: &mut [f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Arithmetic mean of each submission's grades of the given roles.
pub fn mean_estimate(dataset: &Dataset, roles: RoleSet) -> Result<ModelFit, FitError> {
    aggregate(dataset, roles, true, mean)
}

/// [`mean_estimate`] over only the submissions that have grades of `roles`.
pub fn mean_of_graded(dataset: &Dataset, roles: RoleSet) -> ModelFit {
    aggregate(dataset, roles, false, mean).expect("lenient aggregation cannot fail")
}

/// [`median_estimate`] over only the submissions that have grades of `roles`.
pub fn median_of_graded(dataset: &Dataset, roles: RoleSet) -> ModelFit {
    aggregate(dataset, roles, false, median).expect("lenient aggregation cannot fail")
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample median of each submission's grades (mean of the two central values
/// for even counts).
pub fn median_estimate(dataset: &Dataset, roles: RoleSet) -> Result<ModelFit, FitError> {
    aggregate(dataset, roles, true, median)
}

/// TA grades are treated as truth, never as observations, in unsupervised fits.
fn unsupervised_roles(roles: RoleSet, warnings: &mut Vec<String>) -> RoleSet {
    if roles.contains(GradeRole::TaGrade) {
        warnings.push("TA grades excluded from unsupervised fitting".into());
    }
    roles.without(GradeRole::TaGrade)
}

pub(crate) fn check_coverage(dataset: &Dataset, exercises: &[&ExerciseId], p: &em::Problem, warnings: &mut Vec<String>) {
    for e in exercises {
        for s in dataset.submissions_of(e) {
            if p.item(e, s).is_none() {
                warnings.push(format!("submission {s} has no grades and was not scored"));
            }
        }
    }
}

/// Fits one exercise in isolation.
pub fn ust_fit(
    dataset: &Dataset,
    exercise: &ExerciseId,
    roles: RoleSet,
    hyper: &Hyperparams,
    em_config: &EmConfig,
) -> Result<ModelFit, FitError> {
    hyper.validate()?;
    if dataset.max_points(exercise).is_none() {
        return Err(FitError::UnknownExercise(exercise.to_string()));
    }
    let mut warnings = Vec::new();
    let roles = unsupervised_roles(roles, &mut warnings);
    let grades: Vec<&CardinalGrade> = dataset.grades_with_roles(roles).filter(|g| &g.exercise == exercise).collect();
    if grades.is_empty() {
        return Err(FitError::EmptyExercise(exercise.to_string()));
    }
    let p = em::Problem::from_grades(grades, hyper.score_prior)?;
    check_coverage(dataset, &[exercise], &p, &mut warnings);
    let out = p.run(hyper, em_config);
    Ok(ModelFit::from_outcome(&p, out, warnings))
}

/// [`ust_fit`] on every exercise that has grades of the selected roles.
pub fn ust_fit_all(
    dataset: &Dataset,
    roles: RoleSet,
    hyper: &Hyperparams,
    em_config: &EmConfig,
) -> Result<BTreeMap<ExerciseId, ModelFit>, FitError> {
    let mut out = BTreeMap::new();
    for e in dataset.exercise_ids() {
        match ust_fit(dataset, e, roles, hyper, em_config) {
            Ok(fit) => {
                out.insert(e.clone(), fit);
            }
            Err(FitError::EmptyExercise(_)) => log::warn!("exercise {e}: no grades, skipped"),
            Err(err) => return Err(err),
        }
    }
    if out.is_empty() {
        return Err(FitError::EmptyExercise("<all>".into()));
    }
    Ok(out)
}

/// Concatenates per-exercise UST fits into one score table. Grader parameters
/// are per exercise and therefore dropped; the traces are summed.
pub fn merge_exercise_fits(fits: &BTreeMap<ExerciseId, ModelFit>) -> ModelFit {
    let mut merged = ModelFit { converged: true, ..ModelFit::default() };
    let len = fits.values().map(|f| f.objective_trace.len()).max().unwrap_or(0);
    merged.objective_trace = vec![0.0; len];
    for fit in fits.values() {
        merged.scores.extend(fit.scores.iter().map(|(k, v)| (k.clone(), *v)));
        for (i, slot) in merged.objective_trace.iter_mut().enumerate() {
            // converged fits hold their final value
            *slot += fit.objective_trace.get(i).or(fit.objective_trace.last()).copied().unwrap_or(0.0);
        }
        merged.iterations = merged.iterations.max(fit.iterations);
        merged.converged &= fit.converged;
        merged.warnings.extend(fit.warnings.iter().cloned());
    }
    merged
}

pub(crate) fn umt_problem(
    dataset: &Dataset,
    roles: RoleSet,
    hyper: &Hyperparams,
    warnings: &mut Vec<String>,
) -> Result<em::Problem, FitError> {
    hyper.validate()?;
    let roles = unsupervised_roles(roles, warnings);
    let grades: Vec<&CardinalGrade> = dataset.grades_with_roles(roles).collect();
    if grades.is_empty() {
        return Err(FitError::EmptyExercise("<all>".into()));
    }
    let p = em::Problem::from_grades(grades, hyper.score_prior)?;
    let exercises: Vec<&ExerciseId> = dataset.exercise_ids().collect();
    check_coverage(dataset, &exercises, &p, warnings);
    Ok(p)
}

/// Joint fit over all exercises with one bias and reliability per grader.
pub fn umt_fit(
    dataset: &Dataset,
    roles: RoleSet,
    hyper: &Hyperparams,
    em_config: &EmConfig,
) -> Result<ModelFit, FitError> {
    let mut warnings = Vec::new();
    let p = umt_problem(dataset, roles, hyper, &mut warnings)?;
    let out = p.run(hyper, em_config);
    Ok(ModelFit::from_outcome(&p, out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};
    use approx::assert_abs_diff_eq;

    fn peer(e: &str, s: &str, g: &str, v: f64) -> CardinalGrade {
        CardinalGrade { exercise: e.into(), submission: s.into(), grader: g.into(), role: GradeRole::PeerGrade, value: v }
    }

    fn ds(grades: Vec<CardinalGrade>) -> Dataset {
        let mut b = Dataset::builder();
        let mut exercises: Vec<ExerciseId> = grades.iter().map(|g| g.exercise.clone()).collect();
        exercises.dedup();
        exercises.sort();
        exercises.dedup();
        for e in exercises {
            b.add_exercise(e, 1.0);
        }
        for g in grades {
            b.add_grade(g);
        }
        b.build().unwrap()
    }

    #[test]
    fn mean_and_median_baselines() {
        let d = ds(vec![peer("e", "a", "g1", 0.5), peer("e", "a", "g2", 0.7), peer("e", "a", "g3", 0.9)]);
        let key = (ExerciseId::from("e"), SubmissionId::from("a"));
        assert_abs_diff_eq!(mean_estimate(&d, RoleSet::PEER).unwrap().scores[&key], 0.7, epsilon = 1e-12);
        assert_eq!(median_estimate(&d, RoleSet::PEER).unwrap().scores[&key], 0.7);
        let single = ds(vec![peer("e", "a", "g1", 0.4)]);
        assert_eq!(mean_estimate(&single, RoleSet::PEER).unwrap().scores[&key], 0.4);
        assert_eq!(median(&mut [0.0, 0.0, 1.0]), 0.0);
        assert_eq!(median(&mut [0.2, 0.8]), 0.5);
    }

    #[test]
    fn mean_rejects_ungraded() {
        let d = ds(vec![peer("e", "a", "g1", 0.4)]);
        assert!(matches!(mean_estimate(&d, RoleSet::SELF), Err(FitError::Ungraded { .. })));
    }

    #[test]
    fn single_observation_posterior() {
        // bias prior var -> 0 pins the bias, leaving a conjugate normal update
        let d = ds(vec![peer("e", "a", "g", 0.6)]);
        let hyper = Hyperparams { score_prior: ScorePrior::Fixed { mean: 0.5, var: 0.01 }, bias_var: 1e-12, ..Default::default() };
        let cfg = EmConfig { tolerance: 1e-13, max_iterations: 100_000 };
        let fit = ust_fit(&d, &"e".into(), RoleSet::PEER, &hyper, &cfg).unwrap();
        let s = fit.scores[&("e".into(), "a".into())];
        let r = fit.reliability[&GraderId::from("g")];
        let b = fit.bias[&GraderId::from("g")];
        assert!(b.abs() < 1e-9);
        let expected = (0.5 / 0.01 + r * 0.6) / (1.0 / 0.01 + r);
        assert_abs_diff_eq!(s, expected, epsilon = 1e-9);
        assert!(s > 0.5 && s < 0.6);
        // reliability is the Gamma-posterior mode given the residual
        let resid = 0.6 - s;
        assert_abs_diff_eq!(r, (3.0 - 1.0 + 0.5) / (1.0 / 30.0 + 0.5 * resid * resid), epsilon = 1e-6 * r);
    }

    fn trace_is_monotone(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] >= w[0] - 1e-9)
    }

    #[test]
    fn em_is_monotone_on_generated_data() {
        let cfg = GeneratorConfig { n_submissions: 30, n_graders: 25, n_exercises: 3, ..GeneratorConfig::fig1_right(4, 3) };
        let d = generate(&cfg).unwrap().dataset;
        let umt = umt_fit(&d, RoleSet::PEER, &Hyperparams::default(), &EmConfig::default()).unwrap();
        assert!(trace_is_monotone(&umt.objective_trace));
        for fit in ust_fit_all(&d, RoleSet::PEER, &Hyperparams::default(), &EmConfig::default()).unwrap().values() {
            assert!(trace_is_monotone(&fit.objective_trace));
            assert!(fit.reliability.values().all(|r| *r > 0.0));
        }
    }

    #[test]
    fn umt_on_one_exercise_equals_ust() {
        let cfg = GeneratorConfig { n_submissions: 25, n_graders: 25, n_exercises: 1, ..GeneratorConfig::fig1_left(4, 11) };
        let d = generate(&cfg).unwrap().dataset;
        let e = d.exercise_ids().next().unwrap().clone();
        let h = Hyperparams::default();
        let a = umt_fit(&d, RoleSet::PEER, &h, &EmConfig::default()).unwrap();
        let b = ust_fit(&d, &e, RoleSet::PEER, &h, &EmConfig::default()).unwrap();
        for (k, v) in &a.scores {
            assert_abs_diff_eq!(*v, b.scores[k], epsilon = 1e-9);
        }
    }

    /// Noise-free grades, ten per submission, with one of twenty graders
    /// shifted by `offset` on every grade.
    fn planted(offset: f64) -> (Dataset, BTreeMap<(ExerciseId, SubmissionId), f64>) {
        let mut grades = Vec::new();
        let mut truth = BTreeMap::new();
        let n_sub = 20;
        let graders: Vec<String> = (0..20).map(|j| format!("g{j}")).collect();
        for e in ["e0", "e1", "e2"] {
            for i in 0..n_sub {
                let t = 0.2 + 0.6 * ((i * 7 + e.len() * 3 + (e.as_bytes()[1] as usize)) % n_sub) as f64 / n_sub as f64;
                let s = format!("{e}-s{i}");
                truth.insert((e.into(), s.as_str().into()), t);
                for (j, g) in graders.iter().enumerate() {
                    if (i + j) % 2 == 0 {
                        let v = if j == 0 { t + offset } else { t };
                        grades.push(peer(e, &s, g.as_str(), v));
                    }
                }
            }
        }
        (ds(grades), truth)
    }

    #[test]
    fn planted_bias_is_recovered() {
        let (d, _) = planted(0.1);
        let fit = umt_fit(&d, RoleSet::PEER, &Hyperparams::default(), &EmConfig { tolerance: 1e-10, max_iterations: 20_000 }).unwrap();
        let b0 = fit.bias[&GraderId::from("g0")];
        assert!((b0 - 0.1).abs() < 0.02, "bias {b0}");
    }

    #[test]
    fn shift_is_absorbed_by_bias() {
        let cfg = EmConfig { tolerance: 1e-10, max_iterations: 20_000 };
        let (base, _) = planted(0.0);
        let f0 = umt_fit(&base, RoleSet::PEER, &Hyperparams::default(), &cfg).unwrap();
        for c in [-0.2, -0.05, 0.1, 0.2] {
            let (shifted, _) = planted(c);
            let f = umt_fit(&shifted, RoleSet::PEER, &Hyperparams::default(), &cfg).unwrap();
            for (k, v) in &f.scores {
                assert!((v - f0.scores[k]).abs() <= 0.02, "shift {c}: {k:?} moved {}", v - f0.scores[k]);
            }
        }
    }

    #[test]
    fn relabeling_permutes_the_fit() {
        let cfg = GeneratorConfig { n_submissions: 15, n_graders: 15, n_exercises: 2, ..GeneratorConfig::fig1_left(3, 5) };
        let d = generate(&cfg).unwrap().dataset;
        let rename = |s: &str| format!("z{}", s.chars().rev().collect::<String>());
        let mut b = Dataset::builder();
        for (e, m) in d.exercises() {
            b.add_exercise(e.clone(), *m);
        }
        for g in d.grades() {
            b.add_grade(CardinalGrade {
                submission: rename(g.submission.as_str()).into(),
                grader: rename(g.grader.as_str()).into(),
                ..g.clone()
            });
        }
        let relabeled = b.build().unwrap();
        let h = Hyperparams::default();
        let em = EmConfig::default();
        let a = umt_fit(&d, RoleSet::PEER, &h, &em).unwrap();
        let r = umt_fit(&relabeled, RoleSet::PEER, &h, &em).unwrap();
        for ((e, s), v) in &a.scores {
            let w = r.scores[&(e.clone(), rename(s.as_str()).into())];
            assert_abs_diff_eq!(*v, w, epsilon = 1e-9);
        }
        for (g, v) in &a.bias {
            assert_abs_diff_eq!(*v, r.bias[&GraderId::from(rename(g.as_str()))], epsilon = 1e-9);
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let d = generate(&GeneratorConfig { n_exercises: 2, ..GeneratorConfig::fig1_left(3, 1) }).unwrap().dataset;
        let a = umt_fit(&d, RoleSet::PEER, &Hyperparams::default(), &EmConfig::default()).unwrap();
        let b = umt_fit(&d, RoleSet::PEER, &Hyperparams::default(), &EmConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ta_grades_are_not_observations() {
        let mut grades = vec![peer("e", "a", "g1", 0.5), peer("e", "b", "g1", 0.7)];
        grades.push(CardinalGrade { role: GradeRole::TaGrade, ..peer("e", "a", "ta", 0.1) });
        let d = ds(grades);
        let fit = umt_fit(&d, RoleSet::PEER.with(GradeRole::TaGrade), &Hyperparams::default(), &EmConfig::default()).unwrap();
        assert!(!fit.bias.contains_key(&GraderId::from("ta")));
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let d = ds(vec![peer("e", "a", "g1", 0.4)]);
        let h = Hyperparams { rel_rate: 0.0, ..Default::default() };
        assert!(matches!(umt_fit(&d, RoleSet::PEER, &h, &EmConfig::default()), Err(FitError::Hyper(_))));
    }
}
