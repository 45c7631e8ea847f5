use std::fmt;

use thiserror::Error;

/// Where in an input a record came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    /// 1-based line in a CSV file (the header is line 1).
    Row { file: &'static str, line: u64 },
    /// 0-based index into an in-memory or JSON array.
    Record { kind: &'static str, index: usize },
    Unknown,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Row { file, line } => write!(f, "{file}:{line}"),
            Location::Record { kind, index } => write!(f, "{kind}[{index}]"),
            Location::Unknown => f.write_str("<unknown>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    const SHOWN: usize = 5;
    let mut out: Vec<String> = v.iter().take(SHOWN).map(ToString::to_string).collect();
    if v.len() > SHOWN {
        out.push(format!("... and {} more", v.len() - SHOWN));
    }
    out.join("; ")
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("{location}: schema error: {message}")]
    Schema { location: Location, message: String },
    #[error("exercise {0}: score maximum must be positive")]
    InvalidExercise(String),
    #[error("exercise {0}: needs at least two grades with nonzero variance")]
    DegenerateExercise(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            DataError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("score vectors have different key sets")]
    KeyMismatch,
    #[error("need at least {needed} entries, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("sequences have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: a sequence has zero variance")]
    UndefinedCorrelation,
    #[error("non-finite score")]
    NonFinite,
    #[error("no truth for submission {submission} of exercise {exercise}")]
    MissingTruth { exercise: String, submission: String },
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("exercise {0} has no usable grades")]
    EmptyExercise(String),
    #[error("unknown exercise {0}")]
    UnknownExercise(String),
    #[error("submission {submission} has no grades of the selected roles")]
    Ungraded { submission: String },
    #[error("no ballots to fit: {0}")]
    NoBallots(String),
    #[error("missing exam grade for grader {0}")]
    MissingExam(String),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("submission {0} is anchored but has no truth value")]
    AnchorWithoutTruth(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(
        "infeasible assignment: {k} peer grades per submission but only {available} eligible graders"
    )]
    InfeasibleAssignment { k: usize, available: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
}
