//! Replicated benchmark protocols over synthetic data, and per-exercise
//! evaluation of every estimator on a dataset with reference scores.
//!
//! A report is a flat list of records, one per (replicate, k, estimator,
//! reliability mode, role group, metric, exercise). Replicates run in
//! parallel but are assembled in (replicate, k) order, so the CSV is
//! identical for any thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cardinal::{self, EmConfig, Hyperparams};
use crate::data::{induce_ballots, Dataset, ExerciseId, GradeRole, OrdinalBallot, RoleSet, TruthSet};
use crate::error::{ExperimentError, FitError};
use crate::metrics::{per_exercise_errors, Metric};
use crate::ordinal::{self, LatentPrior, OrdinalConfig, OrdinalFit};
use crate::supervised::{self, BiasScope, ExamMode, SubmissionKey, TrainTestSplit};
use crate::synth::{self, replicate_seed, GeneratorConfig};

type Scores = BTreeMap<SubmissionKey, f64>;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $s),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => {
                        let valid: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        Err(format!("unknown {} {other:?} (expected one of {})", stringify!($name).to_lowercase(), valid.join(", ")))
                    }
                }
            }
        }
    };
}

named_enum!(Protocol {
    Fig1Left => "fig1-left",
    Fig1Right => "fig1-right",
    Fig2Left => "fig2-left",
    Fig2Right => "fig2-right",
    NoisyTruth => "noisy-truth",
    RealDataEval => "real-data-eval",
});

named_enum!(Estimator {
    Mean => "mean",
    Median => "median",
    Ust => "ust",
    Umt => "umt",
    Borda => "borda",
    Bt => "bt",
    Thurstone => "thurstone",
    Pl => "pl",
    Sn => "sn",
    Smt => "smt",
    ExamDirect => "exam-direct",
    ExamHybrid => "exam-hybrid",
});

named_enum!(
    /// Reliability variant of an ordinal estimator; `none` for estimators
    /// without one.
    ReliabilityMode {
        None => "none",
        Off => "off",
        On => "on",
    }
);

impl Estimator {
    pub fn is_ordinal(self) -> bool {
        matches!(self, Estimator::Borda | Estimator::Bt | Estimator::Thurstone | Estimator::Pl)
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, Estimator::Sn | Estimator::Smt)
    }

    /// Reliability variants this estimator is reported under.
    pub fn modes(self, requested: &[ReliabilityMode]) -> Vec<ReliabilityMode> {
        match self {
            Estimator::Bt | Estimator::Thurstone | Estimator::Pl => {
                requested.iter().copied().filter(|m| *m != ReliabilityMode::None).collect()
            }
            Estimator::Borda if requested.contains(&ReliabilityMode::Off) => vec![ReliabilityMode::Off],
            Estimator::Borda => Vec::new(),
            _ => vec![ReliabilityMode::None],
        }
    }
}

/// Which submissions' errors form the "easy" or "difficult" subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Easy,
    Difficult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub replicates: usize,
    pub k_values: Vec<usize>,
    pub estimators: Vec<Estimator>,
    pub reliability_modes: Vec<ReliabilityMode>,
    pub metrics: Vec<Metric>,
    pub base_seed: u64,
    /// Keys of the generator configuration that replace the protocol preset.
    pub generator: serde_json::Map<String, serde_json::Value>,
    pub hyper: Hyperparams,
    pub em: EmConfig,
    pub ordinal: OrdinalConfig,
    /// Sd of the truth perturbation (noisy-truth protocol).
    pub noise_sd: f64,
    /// Role groups evaluated on a real dataset.
    pub role_groups: Vec<RoleSet>,
    pub train_fraction: f64,
    pub ta_reliability: f64,
    pub bias_scope: BiasScope,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::new(Protocol::Fig1Left)
    }
}

impl ExperimentSpec {
    /// Protocol defaults.
    pub fn new(protocol: Protocol) -> Self {
        use Estimator::*;
        let (k_values, estimators, metrics) = match protocol {
            Protocol::Fig1Left | Protocol::Fig1Right | Protocol::NoisyTruth => {
                ((1..=9).collect(), vec![Mean, Median, Ust, Umt], Metric::ALL.to_vec())
            }
            Protocol::Fig2Left | Protocol::Fig2Right => (vec![6], vec![Mean, Borda, Bt, Thurstone, Pl], vec![Metric::Kendall]),
            Protocol::RealDataEval => (Vec::new(), vec![Mean, Median, Ust, Umt, Bt, Sn, Smt], Metric::ALL.to_vec()),
        };
        Self {
            protocol,
            replicates: if protocol == Protocol::RealDataEval { 1 } else { 100 },
            k_values,
            estimators,
            reliability_modes: vec![ReliabilityMode::Off, ReliabilityMode::On],
            metrics,
            base_seed: 0,
            generator: serde_json::Map::new(),
            hyper: Hyperparams::default(),
            em: EmConfig::default(),
            ordinal: OrdinalConfig::default(),
            noise_sd: 0.05,
            role_groups: vec![RoleSet::SELF, RoleSet::PEER, RoleSet::SELF_PEER],
            train_fraction: 0.5,
            ta_reliability: 1000.0,
            bias_scope: BiasScope::Global,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Spec(m.into()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.protocol != Protocol::RealDataEval && self.k_values.is_empty() {
            return bad("k_values must be non-empty");
        }
        if self.k_values.contains(&0) {
            return bad("k values must be positive");
        }
        if self.estimators.is_empty() || self.metrics.is_empty() {
            return bad("estimators and metrics must be non-empty");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and non-negative");
        }
        self.hyper.validate()?;
        self.ordinal.validate()?;
        self.generator_config(1, 0)?;
        Ok(())
    }

    /// Generator configuration of the protocol preset with overrides applied.
    pub fn generator_config(&self, k: usize, seed: u64) -> Result<GeneratorConfig, ExperimentError> {
        let preset = match self.protocol {
            Protocol::Fig1Left | Protocol::NoisyTruth => GeneratorConfig::fig1_left(k, seed),
            Protocol::Fig1Right => GeneratorConfig::fig1_right(k, seed),
            Protocol::Fig2Left => GeneratorConfig { grades_per_submission: k, ..GeneratorConfig::fig2_left(seed) },
            Protocol::Fig2Right => GeneratorConfig { grades_per_submission: k, ..GeneratorConfig::fig2_right(seed) },
            Protocol::RealDataEval => GeneratorConfig::ad_shaped(seed),
        };
        if self.generator.is_empty() {
            return Ok(preset);
        }
        let mut value = serde_json::to_value(&preset).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        for (key, v) in &self.generator {
            if matches!(key.as_str(), "grades_per_submission" | "seed") {
                return Err(ExperimentError::Spec(format!("generator override {key:?} is set by the protocol")));
            }
            obj.insert(key.clone(), v.clone());
        }
        serde_json::from_value(value).map_err(|e| ExperimentError::Spec(format!("generator overrides: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub protocol: Protocol,
    pub replicate: usize,
    /// Grades per submission; 0 for real datasets.
    pub k: usize,
    pub estimator: Estimator,
    pub reliability_mode: ReliabilityMode,
    pub role_group: RoleSet,
    pub metric: Metric,
    pub exercise: ExerciseId,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub records: Vec<Record>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub const REPORT_HEADER: &str = "protocol,replicate,k,estimator,reliability_mode,role_group,metric,exercise,value";

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.protocol, r.replicate, r.k, r.estimator, r.reliability_mode, r.role_group, r.metric, r.exercise, r.value
            );
        }
        out
    }

    /// Spec echo for report_meta.json.
    pub fn meta_json(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            spec: &'a ExperimentSpec,
            base_seed: u64,
            records: usize,
            warnings: &'a [String],
        }
        let meta = Meta { spec: &self.spec, base_seed: self.spec.base_seed, records: self.records.len(), warnings: &self.warnings };
        let mut s = serde_json::to_string_pretty(&meta).expect("meta serializes");
        s.push('\n');
        s
    }

    /// Per replicate, the mean over exercises of the selected records.
    pub fn replicate_means(&self, sel: &Selection) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in self.records.iter().filter(|r| sel.matches(r)) {
            let slot = acc.entry(r.replicate).or_default();
            slot.0 += r.value;
            slot.1 += 1;
        }
        acc.into_iter().map(|(i, (s, n))| (i, s / n as f64)).collect()
    }

    /// Median over replicates of [`Self::replicate_means`]; `None` if nothing
    /// matches.
    pub fn median_over_replicates(&self, sel: &Selection) -> Option<f64> {
        let mut v: Vec<f64> = self.replicate_means(sel).into_values().collect();
        (!v.is_empty()).then(|| cardinal::median(&mut v))
    }
}

/// Filter over report records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub estimator: Estimator,
    pub metric: Metric,
    pub k: Option<usize>,
    pub mode: Option<ReliabilityMode>,
    pub role_group: Option<RoleSet>,
}

impl Selection {
    pub fn new(estimator: Estimator, metric: Metric) -> Self {
        Self { estimator, metric, k: None, mode: None, role_group: None }
    }

    pub fn k(self, k: usize) -> Self {
        Self { k: Some(k), ..self }
    }

    pub fn mode(self, mode: ReliabilityMode) -> Self {
        Self { mode: Some(mode), ..self }
    }

    pub fn roles(self, roles: RoleSet) -> Self {
        Self { role_group: Some(roles), ..self }
    }

    fn matches(&self, r: &Record) -> bool {
        r.estimator == self.estimator
            && r.metric == self.metric
            && self.k.is_none_or(|k| r.k == k)
            && self.mode.is_none_or(|m| r.reliability_mode == m)
            && self.role_group.is_none_or(|g| r.role_group == g)
    }
}

/// Everything one estimator run needs besides its inputs.
struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    seed: u64,
    split: Option<&'a TrainTestSplit>,
    truth: &'a TruthSet,
}

/// Per-exercise sample mean and variance of the grades of `roles`.
fn grade_moments(dataset: &Dataset, roles: RoleSet) -> BTreeMap<ExerciseId, (f64, f64)> {
    let mut per: BTreeMap<&ExerciseId, Vec<f64>> = BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        per.entry(&g.exercise).or_default().push(g.value);
    }
    per.into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(e, v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (e.clone(), (m, var.max(1e-4)))
        })
        .collect()
}

fn ordinal_ballots(dataset: &Dataset, roles: RoleSet) -> Vec<OrdinalBallot> {
    let mut ballots = induce_ballots(dataset, roles);
    if roles.contains(GradeRole::PeerGrade) {
        ballots.extend(dataset.ballots().iter().cloned());
    }
    ballots
}

/// Fits an ordinal estimator on the ballots induced by `roles` (plus any
/// explicit ballots when peer grades are included). Each exercise is fit on
/// its own, with that exercise's grade mean and variance as latent prior.
pub fn fit_ordinal(
    dataset: &Dataset,
    roles: RoleSet,
    est: Estimator,
    estimate_reliability: bool,
    base: &OrdinalConfig,
    seed: u64,
) -> Result<OrdinalFit, FitError> {
    let ballots = ordinal_ballots(dataset, roles);
    if ballots.is_empty() {
        return Err(FitError::NoBallots(format!("{roles} grades induce no rankings")));
    }
    if est == Estimator::Borda {
        return Ok(ordinal::borda(&ballots));
    }
    let moments = grade_moments(dataset, roles);
    let mut by_ex: BTreeMap<ExerciseId, Vec<OrdinalBallot>> = BTreeMap::new();
    for b in ballots {
        by_ex.entry(b.exercise.clone()).or_default().push(b);
    }
    let mut out: Option<OrdinalFit> = None;
    for (i, (e, group)) in by_ex.into_iter().enumerate() {
        let prior = moments.get(&e).map_or(base.prior, |&(mean, var)| LatentPrior { mean, var });
        let cfg = OrdinalConfig { prior, estimate_reliability, seed: replicate_seed(seed, i as u64), ..*base };
        let fit = match est {
            Estimator::Bt => ordinal::bt_fit(&group, &cfg)?,
            Estimator::Thurstone => ordinal::thurstone_fit(&group, &cfg)?,
            Estimator::Pl => ordinal::pl_fit(&group, &cfg)?,
            other => return Err(FitError::Hyper(format!("{other} is not an ordinal model"))),
        };
        match out.as_mut() {
            Some(acc) => acc.absorb(fit),
            None => out = Some(fit),
        }
    }
    Ok(out.expect("at least one exercise"))
}

/// Ordinal latents mapped onto the grade mean and variance of their exercise.
pub fn ordinal_scores(dataset: &Dataset, roles: RoleSet, latent: &Scores) -> Scores {
    let mut mapped = Scores::new();
    for (e, (m, v)) in &grade_moments(dataset, roles) {
        let part: Scores = latent.iter().filter(|((x, _), _)| x == e).map(|(k, v)| (k.clone(), *v)).collect();
        mapped.extend(ordinal::latent_to_scores(&part, *m, *v, false));
    }
    mapped
}

/// Scores to evaluate and whether they are latent (order-only) values.
fn run_estimator(
    dataset: &Dataset,
    roles: RoleSet,
    est: Estimator,
    mode: ReliabilityMode,
    ctx: &Ctx,
) -> Result<(Scores, bool), FitError> {
    let spec = ctx.spec;
    let scores = match est {
        Estimator::Mean => cardinal::mean_of_graded(dataset, roles).scores,
        Estimator::Median => cardinal::median_of_graded(dataset, roles).scores,
        Estimator::Ust => cardinal::merge_exercise_fits(&cardinal::ust_fit_all(dataset, roles, &spec.hyper, &spec.em)?).scores,
        Estimator::Umt => cardinal::umt_fit(dataset, roles, &spec.hyper, &spec.em)?.scores,
        Estimator::Borda | Estimator::Bt | Estimator::Thurstone | Estimator::Pl => {
            let fit = fit_ordinal(dataset, roles, est, mode == ReliabilityMode::On, &spec.ordinal, ctx.seed)?;
            return Ok((fit.latent, true));
        }
        Estimator::Sn | Estimator::Smt => {
            let split = ctx.split.expect("supervised estimators need a split");
            let graded: BTreeSet<SubmissionKey> = cardinal::mean_of_graded(dataset, roles).scores.into_keys().collect();
            let test: BTreeSet<SubmissionKey> = split.test.intersection(&graded).cloned().collect();
            if est == Estimator::Sn {
                let bias = supervised::estimate_grader_bias(dataset, ctx.truth, &split.train, roles, spec.bias_scope);
                supervised::sn_from_bias(dataset, &bias, &test, roles)?.scores
            } else {
                let anchored: BTreeSet<SubmissionKey> = split.train.intersection(&graded).cloned().collect();
                let fit = supervised::smt_fit(dataset, ctx.truth, &anchored, roles, &spec.hyper, spec.ta_reliability, &spec.em)?;
                fit.restrict(|e, s| test.contains(&(e.clone(), s.clone()))).scores
            }
        }
        Estimator::ExamDirect => supervised::exam_reliability_fit(dataset, ExamMode::Direct, roles, &spec.hyper, &spec.em)?.scores,
        Estimator::ExamHybrid => supervised::exam_reliability_fit(dataset, ExamMode::Hybrid, roles, &spec.hyper, &spec.em)?.scores,
    };
    Ok((scores, false))
}

/// Records of one estimator run against `truth`. Latent scores are mapped
/// onto the grade moments of their exercise before computing L2.
#[allow(clippy::too_many_arguments)]
fn records_for(
    spec: &ExperimentSpec,
    replicate: usize,
    k: usize,
    est: Estimator,
    mode: ReliabilityMode,
    roles: RoleSet,
    (scores, latent): (Scores, bool),
    dataset: &Dataset,
    truth: &TruthSet,
) -> Result<Vec<Record>, ExperimentError> {
    let scores: Scores = scores.into_iter().filter(|(k, _)| truth.scores.contains_key(k)).collect();
    let mut out = Vec::new();
    for &metric in &spec.metrics {
        let values = if latent && metric == Metric::L2 {
            per_exercise_errors(&ordinal_scores(dataset, roles, &scores), truth, metric)?
        } else {
            per_exercise_errors(&scores, truth, metric)?
        };
        for (exercise, value) in values.values {
            out.push(Record { protocol: spec.protocol, replicate, k, estimator: est, reliability_mode: mode, role_group: roles, metric, exercise, value });
        }
    }
    Ok(out)
}

/// All estimator x mode records for one dataset.
fn evaluate_all(
    spec: &ExperimentSpec,
    replicate: usize,
    k: usize,
    roles: RoleSet,
    dataset: &Dataset,
    fit_truth: &TruthSet,
    eval_truth: &TruthSet,
    split: Option<&TrainTestSplit>,
    seed: u64,
) -> Result<(Vec<Record>, Vec<String>), ExperimentError> {
    let ctx = Ctx { spec, seed, split, truth: fit_truth };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for &est in &spec.estimators {
        if est.is_ordinal() && roles == RoleSet::SELF {
            continue;
        }
        for mode in est.modes(&spec.reliability_modes) {
            match run_estimator(dataset, roles, est, mode, &ctx) {
                Ok(out) => records.extend(records_for(spec, replicate, k, est, mode, roles, out, dataset, eval_truth)?),
                Err(err @ (FitError::NoBallots(_) | FitError::MissingExam(_))) if spec.protocol == Protocol::RealDataEval => {
                    warnings.push(format!("{est} on {roles}: {err}"));
                }
                Err(err) => return Err(err.into()),
            }
        }
    }
    Ok((records, warnings))
}

type TaskOutput = Result<(Vec<Record>, Vec<String>), ExperimentError>;

/// Runs `tasks` on a pool of `jobs` threads (0 = rayon default), keeping the
/// input order.
fn run_tasks<T: Sync>(tasks: &[T], jobs: usize, f: impl Fn(&T) -> TaskOutput + Sync + Send) -> TaskOutput {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Spec(format!("thread pool: {e}")))?;
    let parts: Vec<TaskOutput> = pool.install(|| tasks.par_iter().map(&f).collect());
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for part in parts {
        let (r, w) = part?;
        records.extend(r);
        warnings.extend(w);
    }
    Ok((records, warnings))
}

fn synthetic_tasks(spec: &ExperimentSpec) -> Vec<(usize, usize)> {
    (0..spec.replicates).flat_map(|r| spec.k_values.iter().map(move |&k| (r, k))).collect()
}

fn run_synthetic(spec: &ExperimentSpec, jobs: usize, noise_sd: f64) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let (records, warnings) = run_tasks(&synthetic_tasks(spec), jobs, |&(r, k)| {
        let seed = replicate_seed(spec.base_seed, r as u64);
        let data = synth::generate(&spec.generator_config(k, seed)?)?;
        // the perturbation is shared by every k of a replicate
        let eval_truth = synth::perturb_truth(&data.truth, noise_sd, seed);
        evaluate_all(spec, r, k, RoleSet::PEER, &data.dataset, &data.truth, &eval_truth, None, seed)
    })?;
    Ok(ExperimentReport { spec: spec.clone(), records, warnings })
}

fn expect_protocol(spec: &ExperimentSpec, allowed: &[Protocol]) -> Result<(), ExperimentError> {
    if allowed.contains(&spec.protocol) {
        Ok(())
    } else {
        Err(ExperimentError::Spec(format!("protocol {} is not valid here", spec.protocol)))
    }
}

/// Cardinal estimators against synthetic truth for every (replicate, k).
pub fn run_fig1(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    expect_protocol(spec, &[Protocol::Fig1Left, Protocol::Fig1Right])?;
    run_synthetic(spec, jobs, 0.0)
}

/// Ordinal estimators on ballots induced from the peer grades, plus the
/// cardinal Mean on the grades themselves.
pub fn run_fig2(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    expect_protocol(spec, &[Protocol::Fig2Left, Protocol::Fig2Right])?;
    run_synthetic(spec, jobs, 0.0)
}

/// As [`run_fig1`] on the fig1-left generator, with errors measured against
/// truth perturbed by N(0, noise_sd²).
pub fn run_noisy_truth(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    expect_protocol(spec, &[Protocol::NoisyTruth])?;
    run_synthetic(spec, jobs, spec.noise_sd)
}

/// Per role group and estimator, per-exercise errors against `truth`.
/// Supervised estimators are scored on the test half of a per-replicate
/// split only.
pub fn run_real_eval(
    dataset: &Dataset,
    truth: &TruthSet,
    spec: &ExperimentSpec,
    jobs: usize,
) -> Result<ExperimentReport, ExperimentError> {
    expect_protocol(spec, &[Protocol::RealDataEval])?;
    spec.validate()?;
    if truth.is_empty() {
        return Err(ExperimentError::Spec("real-data evaluation needs truth".into()));
    }
    let tasks: Vec<(usize, RoleSet)> =
        (0..spec.replicates).flat_map(|r| spec.role_groups.iter().map(move |g| (r, *g))).collect();
    let (records, warnings) = run_tasks(&tasks, jobs, |&(r, roles)| {
        let seed = replicate_seed(spec.base_seed, r as u64);
        let split = TrainTestSplit::stratified(truth.scores.keys().cloned(), spec.train_fraction, seed)?;
        let supervised_split = spec.estimators.iter().any(|e| e.is_supervised()).then_some(&split);
        evaluate_all(spec, r, 0, roles, dataset, truth, truth, supervised_split, seed)
    })?;
    Ok(ExperimentReport { spec: spec.clone(), records, warnings })
}

/// Dispatches on the spec's protocol; real-data evaluation needs a dataset.
pub fn run(
    spec: &ExperimentSpec,
    jobs: usize,
    real: Option<(&Dataset, &TruthSet)>,
) -> Result<ExperimentReport, ExperimentError> {
    match spec.protocol {
        Protocol::Fig1Left | Protocol::Fig1Right => run_fig1(spec, jobs),
        Protocol::Fig2Left | Protocol::Fig2Right => run_fig2(spec, jobs),
        Protocol::NoisyTruth => run_noisy_truth(spec, jobs),
        Protocol::RealDataEval => {
            let (d, t) = real.ok_or_else(|| ExperimentError::Spec("real-data-eval needs a dataset and truth".into()))?;
            run_real_eval(d, t, spec, jobs)
        }
    }
}

/// Exercises ranked by error: the lowest floor(q n) for `Easy`, or those at
/// rank ceil(q n) and above for `Difficult`. Ties are ordered by id.
pub fn filter_exercises(errors: &BTreeMap<ExerciseId, f64>, band: Band, quantile: f64) -> BTreeSet<ExerciseId> {
    let q = quantile.clamp(0.0, 1.0);
    let mut ranked: Vec<(&ExerciseId, f64)> = errors.iter().map(|(e, v)| (e, *v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = ranked.len() as f64;
    let chosen: Vec<&(&ExerciseId, f64)> = match band {
        Band::Easy => ranked.iter().take((q * n).floor() as usize).collect(),
        Band::Difficult => ranked.iter().skip((q * n).ceil() as usize).collect(),
    };
    chosen.into_iter().map(|(e, _)| (*e).clone()).collect()
}

/// Per-exercise L2 error of the Mean baseline, the ranking used by
/// [`filter_exercises`].
pub fn mean_baseline_errors(
    dataset: &Dataset,
    truth: &TruthSet,
    roles: RoleSet,
) -> Result<BTreeMap<ExerciseId, f64>, ExperimentError> {
    let scores: Scores =
        cardinal::mean_of_graded(dataset, roles).scores.into_iter().filter(|(k, _)| truth.scores.contains_key(k)).collect();
    Ok(per_exercise_errors(&scores, truth, Metric::L2)?.values)
}

/// Submission ids of a truth set that fall in `exercises`.
pub fn restrict_truth(truth: &TruthSet, exercises: &BTreeSet<ExerciseId>) -> TruthSet {
    TruthSet {
        scores: truth.scores.iter().filter(|((e, _), _)| exercises.contains(e)).map(|(k, v)| (k.clone(), *v)).collect(),
        source: truth.source,
    }
}
