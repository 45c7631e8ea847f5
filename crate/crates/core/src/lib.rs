//! Peer-grading aggregation.
//!
//! Estimators that turn many imperfect student grades into one score per
//! submission: cardinal baselines and Gaussian bias/reliability models fit
//! by EM ([`cardinal`]), rank-aggregation models over ballots ([`ordinal`]),
//! and estimators that use partial ground truth ([`supervised`]). The
//! [`synth`] and [`experiments`] modules generate artificial grading data and
//! run replicated benchmark protocols over it; [`metrics`] holds the error
//! functions every estimator is judged by.

pub mod cardinal;
pub mod data;
pub mod error;
pub mod experiments;
pub mod fitfile;
pub mod metrics;
pub mod ordinal;
pub mod supervised;
pub mod synth;

pub use data::{
    CardinalGrade, Dataset, DatasetBuilder, ExerciseId, Format, GradeRole, GraderId, OrdinalBallot,
    RoleSet, SubmissionId, TruthSet, TruthSource,
};
