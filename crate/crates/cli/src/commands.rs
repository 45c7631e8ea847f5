use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use peergrade::cardinal::{self, EmConfig, Hyperparams, ModelFit};
use peergrade::data::csv_io;
use peergrade::experiments::{self, Estimator, ExperimentSpec, Protocol, ReliabilityMode};
use peergrade::fitfile::{FitFile, SupervisionSettings};
use peergrade::metrics::{per_exercise_errors, Metric};
use peergrade::ordinal::OrdinalConfig;
use peergrade::supervised::{self, BiasScope, ExamMode, SubmissionKey, TrainTestSplit};
use peergrade::synth;
use peergrade::{Dataset, ExerciseId, Format, RoleSet, TruthSet, TruthSource};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CmdResult, DomainContext, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Csv,
    Json,
}

fn parse_bias_scope(s: &str) -> Result<BiasScope, String> {
    match s {
        "global" => Ok(BiasScope::Global),
        "per-exercise" => Ok(BiasScope::PerExercise),
        other => Err(format!("unknown bias scope {other:?} (expected global or per-exercise)")),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(anyhow!("missing required flag --{flag}")))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).usage()
}

/// A directory is read as CSV files, anything else as a JSON document.
fn load_data(path: &Path) -> Result<Dataset, Failure> {
    let format = if path.is_dir() { Format::Csv } else { Format::Json };
    peergrade::data::load_dataset(path, format).with_context(|| format!("loading {}", path.display())).domain()
}

fn load_truth(path: &Path) -> Result<TruthSet, Failure> {
    csv_io::load_truth(path, TruthSource::Ta).with_context(|| format!("loading {}", path.display())).domain()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display())).domain()
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).domain()
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// Protocol whose generator preset to use [default: fig1-left]
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Peer grades per submission [default: 6]
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Submissions per exercise
    #[arg(long)]
    pub submissions: Option<usize>,
    #[arg(long)]
    pub graders: Option<usize>,
    #[arg(long)]
    pub exercises: Option<usize>,
    /// Graders reporting uniform noise
    #[arg(long)]
    pub random_graders: Option<usize>,
    /// Clamp grades and true scores to [0,1]
    #[arg(long)]
    pub clip: Option<bool>,
    /// JSON object of generator fields overriding the preset
    #[arg(long, value_name = "FILE")]
    pub generator_file: Option<PathBuf>,
    /// Dataset layout [default: csv]
    #[arg(long, value_enum)]
    pub format: Option<OutFormat>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let out = required(a.out, "out")?;
    let mut spec = ExperimentSpec::new(a.protocol.unwrap_or(Protocol::Fig1Left));
    if let Some(path) = &a.generator_file {
        spec.generator = read_json(path)?;
    }
    let overrides = [
        ("n_submissions", a.submissions.map(serde_json::Value::from)),
        ("n_graders", a.graders.map(serde_json::Value::from)),
        ("n_exercises", a.exercises.map(serde_json::Value::from)),
        ("n_random_graders", a.random_graders.map(serde_json::Value::from)),
        ("clip_to_unit", a.clip.map(serde_json::Value::from)),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            spec.generator.insert(key.into(), v);
        }
    }
    let cfg = spec.generator_config(a.k.unwrap_or(6), a.seed.unwrap_or(0)).usage()?;
    let data = synth::generate(&cfg).domain()?;

    create_dir(&out)?;
    match a.format.unwrap_or(OutFormat::Csv) {
        OutFormat::Csv => peergrade::data::save_dataset(&data.dataset, &out, Format::Csv).domain()?,
        OutFormat::Json => peergrade::data::save_dataset(&data.dataset, &out.join("dataset.json"), Format::Json).domain()?,
    }
    csv_io::save_truth(&data.truth, &out.join(csv_io::TRUTH_FILE)).domain()?;
    let mut config = serde_json::to_string_pretty(&cfg).expect("config serializes");
    config.push('\n');
    write(&out.join("config.json"), config)?;
    println!(
        "generated {} submissions, {} grades, {} graders into {}",
        data.dataset.submissions().len(),
        data.dataset.grades().len(),
        data.graders.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    /// Dataset directory (CSV) or JSON file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// mean, median, ust, umt, borda, bt, thurstone, pl, sn, smt, exam-direct or exam-hybrid
    #[arg(long)]
    pub model: Option<Estimator>,
    /// Grade roles to use, e.g. peer or self,peer [default: peer]
    #[arg(long)]
    pub roles: Option<RoleSet>,
    /// Estimate per-grader reliabilities (bt, thurstone, pl)
    #[arg(long)]
    pub reliability: bool,
    /// JSON hyperparameters of the cardinal models
    #[arg(long, value_name = "FILE")]
    pub hyper_file: Option<PathBuf>,
    /// JSON EM settings (tolerance, max_iterations)
    #[arg(long, value_name = "FILE")]
    pub em_file: Option<PathBuf>,
    /// JSON settings of the ordinal models
    #[arg(long, value_name = "FILE")]
    pub ordinal_file: Option<PathBuf>,
    /// True scores for the supervised models (sn, smt)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Train on this share of the truth and score only the rest
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Reliability of the truth pseudo-grader in smt [default: 1000]
    #[arg(long)]
    pub ta_reliability: Option<f64>,
    /// Bias scope of sn: global or per-exercise [default: global]
    #[arg(long, value_parser = parse_bias_scope)]
    pub bias_scope: Option<BiasScope>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file [default: fit.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[allow(clippy::too_many_arguments)]
fn supervised_fit(
    dataset: &Dataset,
    model: Estimator,
    roles: RoleSet,
    truth: &TruthSet,
    settings: &SupervisionSettings,
    seed: u64,
    hyper: &Hyperparams,
    em: &EmConfig,
) -> Result<ModelFit, Failure> {
    let graded: BTreeSet<SubmissionKey> = cardinal::mean_of_graded(dataset, roles).scores.into_keys().collect();
    let (train, scored): (BTreeSet<SubmissionKey>, BTreeSet<SubmissionKey>) = match settings.train_fraction {
        Some(f) => {
            let split = TrainTestSplit::stratified(truth.scores.keys().cloned(), f, seed).usage()?;
            (split.train, split.test.intersection(&graded).cloned().collect())
        }
        None => (truth.scores.keys().cloned().collect(), graded.clone()),
    };
    if model == Estimator::Sn {
        let bias = supervised::estimate_grader_bias(dataset, truth, &train, roles, settings.bias_scope);
        supervised::sn_from_bias(dataset, &bias, &scored, roles).domain()
    } else {
        let anchored: BTreeSet<SubmissionKey> = train.intersection(&graded).cloned().collect();
        let fit = supervised::smt_fit(dataset, truth, &anchored, roles, hyper, settings.ta_reliability, em).domain()?;
        Ok(fit.restrict(|e, s| scored.contains(&(e.clone(), s.clone()))))
    }
}

pub fn fit(a: FitArgs) -> CmdResult {
    let data_path = required(a.data, "data")?;
    let model = required(a.model, "model")?;
    let roles = a.roles.unwrap_or(RoleSet::PEER);
    let out = a.out.unwrap_or_else(|| PathBuf::from("fit.json"));
    let seed = a.seed.unwrap_or(0);
    let hyper: Hyperparams = a.hyper_file.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let em: EmConfig = a.em_file.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let ordinal: OrdinalConfig = a.ordinal_file.as_deref().map(read_json).transpose()?.unwrap_or_default();
    hyper.validate().usage()?;
    ordinal.validate().usage()?;
    if a.reliability && !model.is_ordinal() {
        return Err(Failure::Usage(anyhow!("--reliability applies to bt, thurstone and pl only")));
    }
    if model.is_supervised() != a.truth.is_some() {
        let msg = if model.is_supervised() { "needs --truth" } else { "does not use --truth" };
        return Err(Failure::Usage(anyhow!("model {model} {msg}")));
    }
    let dataset = load_data(&data_path)?;

    let mode = match model {
        m if m.is_ordinal() && m != Estimator::Borda => {
            if a.reliability {
                ReliabilityMode::On
            } else {
                ReliabilityMode::Off
            }
        }
        Estimator::Borda => ReliabilityMode::Off,
        _ => ReliabilityMode::None,
    };
    let mut file = FitFile {
        model,
        roles,
        reliability_mode: mode,
        seed,
        hyper: None,
        em: None,
        ordinal: None,
        supervision: None,
        fit: ModelFit::default(),
        latent: Vec::new(),
        exercise_reliability: Vec::new(),
    };
    let em_model = matches!(model, Estimator::Ust | Estimator::Umt | Estimator::Smt | Estimator::ExamDirect | Estimator::ExamHybrid);
    if em_model {
        file.hyper = Some(hyper);
        file.em = Some(em);
    }
    file.fit = match model {
        Estimator::Mean => cardinal::mean_estimate(&dataset, roles).domain()?,
        Estimator::Median => cardinal::median_estimate(&dataset, roles).domain()?,
        Estimator::Ust => cardinal::merge_exercise_fits(&cardinal::ust_fit_all(&dataset, roles, &hyper, &em).domain()?),
        Estimator::Umt => cardinal::umt_fit(&dataset, roles, &hyper, &em).domain()?,
        Estimator::Borda | Estimator::Bt | Estimator::Thurstone | Estimator::Pl => {
            let of = experiments::fit_ordinal(&dataset, roles, model, a.reliability, &ordinal, seed).domain()?;
            if model != Estimator::Borda {
                file.ordinal = Some(OrdinalConfig { estimate_reliability: a.reliability, seed, ..ordinal });
            }
            file.set_ordinal(&of);
            ModelFit {
                scores: experiments::ordinal_scores(&dataset, roles, &of.latent),
                iterations: of.objective_trace.len().saturating_sub(1),
                objective_trace: of.objective_trace,
                converged: of.converged,
                warnings: of.warnings,
                ..ModelFit::default()
            }
        }
        Estimator::Sn | Estimator::Smt => {
            let truth = load_truth(a.truth.as_deref().expect("checked above"))?;
            let settings = SupervisionSettings {
                train_fraction: a.train_fraction,
                ta_reliability: a.ta_reliability.unwrap_or(1000.0),
                bias_scope: a.bias_scope.unwrap_or_default(),
            };
            let fit = supervised_fit(&dataset, model, roles, &truth, &settings, seed, &hyper, &em)?;
            file.supervision = Some(settings);
            fit
        }
        Estimator::ExamDirect => supervised::exam_reliability_fit(&dataset, ExamMode::Direct, roles, &hyper, &em).domain()?,
        Estimator::ExamHybrid => supervised::exam_reliability_fit(&dataset, ExamMode::Hybrid, roles, &hyper, &em).domain()?,
    };
    for w in &file.fit.warnings {
        log::warn!("{w}");
    }
    file.save(&out).domain()?;
    println!(
        "{model} on {roles}: {} scores, {} iterations, converged: {} -> {}",
        file.fit.scores.len(),
        file.fit.iterations,
        file.fit.converged,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// Fit to evaluate [default: fit.json]
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// True scores (truth.csv)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Metrics, comma separated [default: l2,kendall]
    #[arg(long, value_delimiter = ',')]
    pub metric: Option<Vec<Metric>>,
    /// One row per exercise instead of the mean over exercises
    #[arg(long)]
    pub per_exercise: bool,
    /// Also write the table to this CSV file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fit and truth must cover the same submissions on every fitted exercise.
fn check_coverage(fit: &ModelFit, truth: &TruthSet) -> anyhow::Result<()> {
    let exercises: BTreeSet<&ExerciseId> = fit.scores.keys().map(|(e, _)| e).collect();
    if let Some((e, s)) = fit.scores.keys().find(|k| !truth.scores.contains_key(*k)) {
        bail!("fit scores submission {s} of exercise {e}, which has no true score");
    }
    if let Some((e, s)) = truth.scores.keys().find(|k| exercises.contains(&k.0) && !fit.scores.contains_key(*k)) {
        bail!("fit has no score for submission {s} of exercise {e}");
    }
    if exercises.is_empty() {
        bail!("fit contains no scores");
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let fit_path = a.fit.unwrap_or_else(|| PathBuf::from("fit.json"));
    let truth = load_truth(&required(a.truth, "truth")?)?;
    let metrics = a.metric.unwrap_or_else(|| Metric::ALL.to_vec());
    let file = FitFile::load(&fit_path).with_context(|| format!("loading {}", fit_path.display())).domain()?;
    check_coverage(&file.fit, &truth).domain()?;

    let mut table = String::from("exercise,metric,value\n");
    for metric in metrics {
        let errors = per_exercise_errors(&file.fit.scores, &truth, metric).domain()?;
        if a.per_exercise {
            for (e, v) in &errors.values {
                writeln!(table, "{e},{metric},{v}").expect("string write");
            }
        } else if !errors.values.is_empty() {
            let mean = errors.values.values().sum::<f64>() / errors.values.len() as f64;
            writeln!(table, "all,{metric},{mean}").expect("string write");
        }
    }
    print!("{table}");
    if let Some(out) = a.out {
        write(&out, table)?;
    }
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentArgs {
    /// fig1-left, fig1-right, fig2-left, fig2-right, noisy-truth or real-data-eval
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Full experiment spec as JSON; flags override its fields
    #[arg(long, value_name = "FILE")]
    pub spec_file: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Base seed of the replicate seeds
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicates [default: all cores]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Grades-per-submission grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Estimators, comma separated
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<Estimator>>,
    /// Metrics, comma separated
    #[arg(long, value_delimiter = ',')]
    pub metric: Option<Vec<Metric>>,
    /// Sd of the truth perturbation (noisy-truth)
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Dataset for real-data-eval
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Truth for real-data-eval [default: the dataset's TA grades]
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn experiment(a: ExperimentArgs) -> CmdResult {
    let mut spec: ExperimentSpec = match (&a.spec_file, a.protocol) {
        (Some(path), _) => read_json(path)?,
        (None, Some(p)) => ExperimentSpec::new(p),
        (None, None) => return Err(Failure::Usage(anyhow!("missing required flag --protocol"))),
    };
    if let Some(p) = a.protocol {
        if p != spec.protocol {
            spec = ExperimentSpec { protocol: p, ..spec };
        }
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    if let Some(s) = a.seed {
        spec.base_seed = s;
    }
    if let Some(k) = a.k {
        spec.k_values = k;
    }
    if let Some(e) = a.estimators {
        spec.estimators = e;
    }
    if let Some(m) = a.metric {
        spec.metrics = m;
    }
    if let Some(sd) = a.noise_sd {
        spec.noise_sd = sd;
    }
    spec.validate().usage()?;

    let real = match (spec.protocol, &a.data) {
        (Protocol::RealDataEval, Some(path)) => {
            let dataset = load_data(path)?;
            let truth = match &a.truth {
                Some(t) => load_truth(t)?,
                None => dataset.ta_truth(),
            };
            Some((dataset, truth))
        }
        (Protocol::RealDataEval, None) => return Err(Failure::Usage(anyhow!("real-data-eval needs --data"))),
        (_, Some(_)) => return Err(Failure::Usage(anyhow!("--data applies to real-data-eval only"))),
        (_, None) => None,
    };
    let report = experiments::run(&spec, a.jobs.unwrap_or(0), real.as_ref().map(|(d, t)| (d, t))).domain()?;
    for w in &report.warnings {
        log::warn!("{w}");
    }

    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    write(&out.join("report.csv"), report.to_csv())?;
    write(&out.join("report_meta.json"), report.meta_json())?;
    println!("{}: {} records -> {}", spec.protocol, report.records.len(), out.join("report.csv").display());
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeArgs {
    /// Dataset directory (CSV) or JSON file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reference scores [default: the dataset's TA grades]
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Grade roles to analyze [default: peer]
    #[arg(long)]
    pub roles: Option<RoleSet>,
    /// analysis.json or analysis.csv [default: json]
    #[arg(long, value_enum)]
    pub format: Option<OutFormat>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    let dataset = load_data(&required(a.data, "data")?)?;
    let truth = match &a.truth {
        Some(t) => load_truth(t)?,
        None => dataset.ta_truth(),
    };
    let report = supervised::analyze(&dataset, &truth, a.roles.unwrap_or(RoleSet::PEER));
    for w in &report.correlations.warnings {
        log::warn!("{w}");
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    let path = match a.format.unwrap_or(OutFormat::Json) {
        OutFormat::Json => {
            let p = out.join("analysis.json");
            write(&p, report.to_json())?;
            p
        }
        OutFormat::Csv => {
            let p = out.join("analysis.csv");
            write(&p, report.to_csv())?;
            p
        }
    };
    let reported: BTreeMap<&str, f64> =
        report.correlations.entries().into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    println!("{} graders, {} correlations -> {}", report.graders.len(), reported.len(), path.display());
    Ok(())
}
