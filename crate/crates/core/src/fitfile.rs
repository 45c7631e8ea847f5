//! The `fit.json` document: a fitted model plus the settings that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cardinal::{EmConfig, Hyperparams, ModelFit};
use crate::data::{ExerciseId, GraderId, RoleSet, SubmissionId};
use crate::error::{DataError, Location};
use crate::experiments::{Estimator, ReliabilityMode};
use crate::ordinal::{OrdinalConfig, OrdinalFit};
use crate::supervised::BiasScope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionSettings {
    /// Share of truth submissions used for training; `None` trains on all.
    pub train_fraction: Option<f64>,
    pub ta_reliability: f64,
    pub bias_scope: BiasScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentRow {
    pub exercise: ExerciseId,
    pub submission: SubmissionId,
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExerciseReliability {
    pub exercise: ExerciseId,
    pub grader: GraderId,
    pub reliability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub model: Estimator,
    pub roles: RoleSet,
    pub reliability_mode: ReliabilityMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<Hyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<EmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<OrdinalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervision: Option<SupervisionSettings>,
    /// Scores on the grade scale. Ordinal latents are mapped onto each
    /// exercise's grade mean and variance.
    pub fit: ModelFit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latent: Vec<LatentRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exercise_reliability: Vec<ExerciseReliability>,
}

impl FitFile {
    /// Copies the latents and per-exercise reliabilities of an ordinal fit.
    pub fn set_ordinal(&mut self, fit: &OrdinalFit) {
        self.latent = fit
            .latent
            .iter()
            .map(|((e, s), v)| LatentRow { exercise: e.clone(), submission: s.clone(), latent: *v })
            .collect();
        self.exercise_reliability = fit
            .reliability
            .iter()
            .map(|((e, g), r)| ExerciseReliability { exercise: e.clone(), grader: g.clone(), reliability: *r })
            .collect();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fit serializes");
        s.push('\n');
        s
    }

    pub fn parse_slice(bytes: &[u8]) -> Result<FitFile, DataError> {
        let file: FitFile = serde_json::from_slice(bytes)
            .map_err(|e| DataError::Schema { location: Location::Unknown, message: e.to_string() })?;
        let finite = file.fit.scores.values().chain(file.fit.bias.values()).chain(file.fit.reliability.values());
        if let Some(v) = finite.into_iter().find(|v| !v.is_finite()) {
            return Err(DataError::Schema { location: Location::Unknown, message: format!("non-finite value {v}") });
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<FitFile, DataError> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        Self::parse_slice(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_json()).map_err(|source| DataError::Io { path: path.display().to_string(), source })
    }
}
