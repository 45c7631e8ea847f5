//! Estimators and analyses that use (partial) ground truth: the supervised
//! naive bias-corrected mean, truth-anchored UMT, exam-based reliabilities and
//! the per-grader correlation study.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cardinal::{self, umt_problem, EmConfig, Hyperparams, ModelFit, RELIABILITY_FLOOR};
use crate::data::{Dataset, ExerciseId, GraderId, RoleSet, SubmissionId, TruthSet};
use crate::error::FitError;
use crate::metrics::pearson_r;

pub type SubmissionKey = (ExerciseId, SubmissionId);

/// Id of the pseudo-grader that carries anchored truth into the joint fit.
pub const TA_PSEUDO_GRADER: &str = "__ta__";

/// Reliabilities in direct exam mode span `[0, EXAM_RELIABILITY_MAX]`.
pub const EXAM_RELIABILITY_MAX: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: BTreeSet<SubmissionKey>,
    pub test: BTreeSet<SubmissionKey>,
    pub seed: u64,
    pub fraction: f64,
}

impl TrainTestSplit {
    /// Per exercise, a seeded shuffle puts round(fraction * n) submissions in
    /// train and the rest in test.
    pub fn stratified(keys: impl IntoIterator<Item = SubmissionKey>, fraction: f64, seed: u64) -> Result<Self, FitError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(FitError::Hyper(format!("train fraction {fraction} outside (0, 1)")));
        }
        let mut per: BTreeMap<ExerciseId, BTreeSet<SubmissionId>> = BTreeMap::new();
        for (e, s) in keys {
            per.entry(e).or_default().insert(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = TrainTestSplit { train: BTreeSet::new(), test: BTreeSet::new(), seed, fraction };
        for (e, subs) in per {
            let mut subs: Vec<SubmissionId> = subs.into_iter().collect();
            subs.shuffle(&mut rng);
            let n_train = (fraction * subs.len() as f64).round() as usize;
            for (i, s) in subs.into_iter().enumerate() {
                let set = if i < n_train { &mut split.train } else { &mut split.test };
                set.insert((e.clone(), s));
            }
        }
        Ok(split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasScope {
    /// One bias per grader over the whole course.
    #[default]
    Global,
    PerExercise,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraderBias {
    pub scope: BiasScope,
    /// Keyed by exercise only in per-exercise scope.
    pub values: BTreeMap<(Option<ExerciseId>, GraderId), f64>,
    /// Graders that graded something but no training submission; their bias is 0.
    pub unsupported: BTreeSet<GraderId>,
}

impl GraderBias {
    pub fn get(&self, exercise: &ExerciseId, grader: &GraderId) -> f64 {
        let key = match self.scope {
            BiasScope::Global => (None, grader.clone()),
            BiasScope::PerExercise => (Some(exercise.clone()), grader.clone()),
        };
        self.values.get(&key).copied().unwrap_or(0.0)
    }

    /// Global biases keyed by grader (empty in per-exercise scope).
    pub fn global(&self) -> BTreeMap<GraderId, f64> {
        self.values.iter().filter(|((e, _), _)| e.is_none()).map(|((_, g), v)| (g.clone(), *v)).collect()
    }
}

/// Mean of (grade - truth) over each grader's grades on `train` submissions.
pub fn estimate_grader_bias(
    dataset: &Dataset,
    truth: &TruthSet,
    train: &BTreeSet<SubmissionKey>,
    roles: RoleSet,
    scope: BiasScope,
) -> GraderBias {
    let mut acc: BTreeMap<(Option<ExerciseId>, GraderId), (f64, usize)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for g in dataset.grades_with_roles(roles) {
        seen.insert(g.grader.clone());
        let key = (g.exercise.clone(), g.submission.clone());
        let Some(t) = truth.get(&g.exercise, &g.submission).filter(|_| train.contains(&key)) else {
            continue;
        };
        let e = match scope {
            BiasScope::Global => None,
            BiasScope::PerExercise => Some(g.exercise.clone()),
        };
        let slot = acc.entry((e, g.grader.clone())).or_default();
        slot.0 += g.value - t;
        slot.1 += 1;
    }
    let values: BTreeMap<_, _> = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let supported: BTreeSet<&GraderId> = values.keys().map(|(_, g)| g).collect();
    let unsupported = seen.iter().filter(|g| !supported.contains(g)).cloned().collect();
    GraderBias { scope, values, unsupported }
}

/// Bias-corrected mean of each test submission's grades.
pub fn sn_from_bias(
    dataset: &Dataset,
    bias: &GraderBias,
    test: &BTreeSet<SubmissionKey>,
    roles: RoleSet,
) -> Result<ModelFit, FitError> {
    let mut acc: BTreeMap<SubmissionKey, (f64, usize)> = BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        let key = (g.exercise.clone(), g.submission.clone());
        if test.contains(&key) {
            let slot = acc.entry(key).or_default();
            slot.0 += g.value - bias.get(&g.exercise, &g.grader);
            slot.1 += 1;
        }
    }
    if let Some((_, s)) = test.iter().find(|k| !acc.contains_key(*k)) {
        return Err(FitError::Ungraded { submission: s.to_string() });
    }
    let mut warnings = Vec::new();
    if !bias.unsupported.is_empty() {
        warnings.push(format!("{} graders have no training grades; bias 0 used", bias.unsupported.len()));
    }
    Ok(ModelFit {
        scores: acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        bias: bias.global(),
        converged: true,
        warnings,
        ..ModelFit::default()
    })
}

/// Supervised naive estimate: biases from the train half, corrected means on
/// the test half.
pub fn sn_estimate(
    dataset: &Dataset,
    truth: &TruthSet,
    split: &TrainTestSplit,
    roles: RoleSet,
    scope: BiasScope,
) -> Result<ModelFit, FitError> {
    let bias = estimate_grader_bias(dataset, truth, &split.train, roles, scope);
    sn_from_bias(dataset, &bias, &split.test, roles)
}

/// Joint fit with truth on `anchored` submissions entered as grades of a
/// pseudo-grader with zero bias and reliability fixed at `ta_reliability`.
/// Evaluate only outside `anchored`.
#[allow(clippy::too_many_arguments)]
pub fn smt_fit(
    dataset: &Dataset,
    truth: &TruthSet,
    anchored: &BTreeSet<SubmissionKey>,
    roles: RoleSet,
    hyper: &Hyperparams,
    ta_reliability: f64,
    em_config: &EmConfig,
) -> Result<ModelFit, FitError> {
    if !(ta_reliability > 0.0 && ta_reliability.is_finite()) {
        return Err(FitError::Hyper("ta_reliability must be positive and finite".into()));
    }
    let mut warnings = Vec::new();
    let mut p = umt_problem(dataset, roles, hyper, &mut warnings)?;
    let mut anchors = Vec::new();
    for (e, s) in anchored {
        let t = truth.get(e, s).ok_or_else(|| FitError::AnchorWithoutTruth(s.to_string()))?;
        match p.item(e, s) {
            Some(i) => anchors.push((i, t)),
            None => warnings.push(format!("anchored submission {s} has no grades; anchor ignored")),
        }
    }
    if !anchors.is_empty() {
        let ta = p.add_grader(TA_PSEUDO_GRADER.into(), Some(0.0), Some(ta_reliability));
        for (i, t) in anchors {
            p.add_obs(i, ta, t);
        }
    }
    let out = p.run(hyper, em_config);
    let mut fit = ModelFit::from_outcome(&p, out, warnings);
    fit.bias.remove(&GraderId::from(TA_PSEUDO_GRADER));
    fit.reliability.remove(&GraderId::from(TA_PSEUDO_GRADER));
    Ok(fit)
}

/// Per grader, mean |grade - bias - truth| over all grades with truth, with the
/// bias estimated on those same grades.
pub fn mean_deviation(dataset: &Dataset, truth: &TruthSet, roles: RoleSet) -> BTreeMap<GraderId, f64> {
    let all: BTreeSet<SubmissionKey> = truth.scores.keys().cloned().collect();
    let bias = estimate_grader_bias(dataset, truth, &all, roles, BiasScope::Global);
    let mut acc: BTreeMap<GraderId, (f64, usize)> = BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        if let Some(t) = truth.get(&g.exercise, &g.submission) {
            let slot = acc.entry(g.grader.clone()).or_default();
            slot.0 += (g.value - bias.get(&g.exercise, &g.grader) - t).abs();
            slot.1 += 1;
        }
    }
    acc.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraderDiagnostic {
    pub grader: GraderId,
    pub mean_given_grade: f64,
    /// Sample mean of (own grade - mean of the other graders' grades).
    pub peer_relative_bias: Option<f64>,
    /// Sample variance of the same deviations.
    pub peer_relative_variance: Option<f64>,
    /// Submissions that contributed a deviation.
    pub support: usize,
}

/// Deviation of each grade from the mean of the other graders' grades on the
/// same submission. Graders with fewer than two usable submissions get no
/// bias or variance.
pub fn grader_diagnostics(dataset: &Dataset, roles: RoleSet) -> Vec<GraderDiagnostic> {
    let mut by_sub: BTreeMap<SubmissionKey, Vec<(&GraderId, f64)>> = BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        by_sub.entry((g.exercise.clone(), g.submission.clone())).or_default().push((&g.grader, g.value));
    }
    let mut given: BTreeMap<&GraderId, Vec<f64>> = BTreeMap::new();
    let mut devs: BTreeMap<&GraderId, Vec<f64>> = BTreeMap::new();
    for grades in by_sub.values() {
        for (g, v) in grades {
            given.entry(*g).or_default().push(*v);
            let others: Vec<f64> = grades.iter().filter(|(o, _)| o != g).map(|(_, w)| *w).collect();
            if !others.is_empty() {
                let m = others.iter().sum::<f64>() / others.len() as f64;
                devs.entry(*g).or_default().push(v - m);
            }
        }
    }
    given
        .into_iter()
        .map(|(g, vals)| {
            let d = devs.remove(g).unwrap_or_default();
            let (bias, var) = if d.len() >= 2 {
                let n = d.len() as f64;
                let m = d.iter().sum::<f64>() / n;
                (Some(m), Some(d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)))
            } else {
                (None, None)
            };
            GraderDiagnostic {
                grader: g.clone(),
                mean_given_grade: vals.iter().sum::<f64>() / vals.len() as f64,
                peer_relative_bias: bias,
                peer_relative_variance: var,
                support: d.len(),
            }
        })
        .collect()
}

/// Mean truth over each grader's own group submissions.
pub fn homework_performance(dataset: &Dataset, truth: &TruthSet) -> BTreeMap<GraderId, f64> {
    let mut acc: BTreeMap<GraderId, (f64, usize)> = BTreeMap::new();
    for (s, members) in dataset.groups() {
        let Some(e) = dataset.exercise_of(s) else { continue };
        let Some(t) = truth.get(e, s) else { continue };
        for m in members {
            let slot = acc.entry(m.clone()).or_default();
            slot.0 += t;
            slot.1 += 1;
        }
    }
    acc.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r_homework_bias: Option<f64>,
    pub r_homework_deviation: Option<f64>,
    pub r_exam_homework: Option<f64>,
    pub r_exam_bias: Option<f64>,
    pub r_exam_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CorrelationReport {
    pub fn entries(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("r_homework_bias", self.r_homework_bias),
            ("r_homework_deviation", self.r_homework_deviation),
            ("r_exam_homework", self.r_exam_homework),
            ("r_exam_bias", self.r_exam_bias),
            ("r_exam_deviation", self.r_exam_deviation),
        ]
    }
}

fn correlate(
    name: &str,
    a: &BTreeMap<GraderId, f64>,
    b: &BTreeMap<GraderId, f64>,
    warnings: &mut Vec<String>,
) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(g, x)| b.get(g).map(|y| (*x, *y))).unzip();
    match pearson_r(&xs, &ys) {
        Ok(r) => Some(r),
        Err(err) => {
            warnings.push(format!("{name}: {err}"));
            None
        }
    }
}

/// Pearson correlations between homework performance, exam grade, truth-based
/// bias and mean deviation, over graders that have both quantities.
pub fn correlation_report(dataset: &Dataset, truth: &TruthSet, roles: RoleSet) -> CorrelationReport {
    let all: BTreeSet<SubmissionKey> = truth.scores.keys().cloned().collect();
    let bias = estimate_grader_bias(dataset, truth, &all, roles, BiasScope::Global).global();
    let dev = mean_deviation(dataset, truth, roles);
    let hw = homework_performance(dataset, truth);
    let exam = dataset.exams();
    let mut w = Vec::new();
    let mut report = CorrelationReport {
        r_homework_bias: correlate("r_homework_bias", &hw, &bias, &mut w),
        r_homework_deviation: correlate("r_homework_deviation", &hw, &dev, &mut w),
        ..CorrelationReport::default()
    };
    if exam.is_empty() {
        w.push("no exam grades; exam correlations omitted".into());
    } else {
        report.r_exam_homework = correlate("r_exam_homework", exam, &hw, &mut w);
        report.r_exam_bias = correlate("r_exam_bias", exam, &bias, &mut w);
        report.r_exam_deviation = correlate("r_exam_deviation", exam, &dev, &mut w);
    }
    report.warnings = w;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExamMode {
    /// Reliability fixed to the exam grade mapped linearly onto [0, 150].
    Direct,
    /// Fitted reliability scaled by exam / mean exam, then one score update.
    Hybrid,
}

impl std::str::FromStr for ExamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Self::Direct),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown exam mode {other:?} (direct, hybrid)")),
        }
    }
}

/// Joint fit with reliabilities informed by the graders' exam grades.
pub fn exam_reliability_fit(
    dataset: &Dataset,
    mode: ExamMode,
    roles: RoleSet,
    hyper: &Hyperparams,
    em_config: &EmConfig,
) -> Result<ModelFit, FitError> {
    let mut warnings = Vec::new();
    let mut p = umt_problem(dataset, roles, hyper, &mut warnings)?;
    let exams = dataset.exams();
    let mut exam = Vec::with_capacity(p.graders.len());
    for g in &p.graders {
        exam.push(*exams.get(g).ok_or_else(|| FitError::MissingExam(g.to_string()))?);
    }
    match mode {
        ExamMode::Direct => {
            let lo = exam.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = exam.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (slot, x) in p.fixed_rel.iter_mut().zip(&exam) {
                let r = if hi > lo { (x - lo) / (hi - lo) * EXAM_RELIABILITY_MAX } else { EXAM_RELIABILITY_MAX };
                *slot = Some(r.max(RELIABILITY_FLOOR));
            }
            let out = p.run(hyper, em_config);
            Ok(ModelFit::from_outcome(&p, out, warnings))
        }
        ExamMode::Hybrid => {
            let mean = exam.iter().sum::<f64>() / exam.len() as f64;
            if mean <= 0.0 {
                return Err(FitError::Hyper("mean exam grade must be positive".into()));
            }
            let mut out = p.run(hyper, em_config);
            for (r, x) in out.state.rel.iter_mut().zip(&exam) {
                *r = (*r * x / mean).max(RELIABILITY_FLOOR);
            }
            p.update_scores(&mut out.state);
            out.trace.push(p.objective(&out.state, hyper));
            Ok(ModelFit::from_outcome(&p, out, warnings))
        }
    }
}

/// Per-grader diagnostics and correlation coefficients, serialized as
/// analysis.json and analysis.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub graders: Vec<GraderRow>,
    pub correlations: CorrelationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraderRow {
    #[serde(flatten)]
    pub diagnostic: GraderDiagnostic,
    pub truth_bias: Option<f64>,
    pub mean_deviation: Option<f64>,
    pub homework: Option<f64>,
    pub exam: Option<f64>,
}

pub fn analyze(dataset: &Dataset, truth: &TruthSet, roles: RoleSet) -> AnalysisReport {
    let all: BTreeSet<SubmissionKey> = truth.scores.keys().cloned().collect();
    let bias = estimate_grader_bias(dataset, truth, &all, roles, BiasScope::Global).global();
    let dev = mean_deviation(dataset, truth, roles);
    let hw = homework_performance(dataset, truth);
    let graders = grader_diagnostics(dataset, roles)
        .into_iter()
        .map(|d| {
            let g = d.grader.clone();
            GraderRow {
                truth_bias: bias.get(&g).copied(),
                mean_deviation: dev.get(&g).copied(),
                homework: hw.get(&g).copied(),
                exam: dataset.exams().get(&g).copied(),
                diagnostic: d,
            }
        })
        .collect();
    AnalysisReport { graders, correlations: correlation_report(dataset, truth, roles) }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Long format: `section,id,statistic,value`, one row per grader
    /// statistic and one per coefficient. Missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,id,statistic,value\n");
        for row in &self.graders {
            let d = &row.diagnostic;
            let stats = [
                ("mean_given_grade", Some(d.mean_given_grade)),
                ("peer_relative_bias", d.peer_relative_bias),
                ("peer_relative_variance", d.peer_relative_variance),
                ("support", Some(d.support as f64)),
                ("truth_bias", row.truth_bias),
                ("mean_deviation", row.mean_deviation),
                ("homework", row.homework),
                ("exam", row.exam),
            ];
            for (name, v) in stats {
                let _ = writeln!(out, "grader,{},{name},{}", d.grader, opt(v));
            }
        }
        for (name, v) in self.correlations.entries() {
            let _ = writeln!(out, "coefficient,{name},r,{}", opt(v));
        }
        out
    }
}

/// Mean estimate restricted to `keys`, for comparisons on a test set.
pub fn mean_on(dataset: &Dataset, roles: RoleSet, keys: &BTreeSet<SubmissionKey>) -> Result<ModelFit, FitError> {
    Ok(cardinal::mean_estimate(dataset, roles)?.restrict(move |e, s| keys.contains(&(e.clone(), s.clone()))))
}
