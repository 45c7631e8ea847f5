//! Single-document JSON layout mirroring the CSV files:
//!
//! ```json
//! { "exercises": [{"exercise": "e1", "max_points": 10.0}],
//!   "groups":    [{"submission": "s1", "grader": "g1"}],
//!   "grades":    [{"exercise": "e1", "submission": "s1", "grader": "g2", "role": "peer", "value": 7.0}],
//!   "ballots":   [{"exercise": "e1", "grader": "g2", "position": 0, "submission": "s1"}],
//!   "exams":     [{"grader": "g2", "exam_grade": 81.0}] }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetBuilder, ExerciseId, GradeRole, GraderId, OrdinalBallot, SubmissionId};
use crate::data::CardinalGrade;
use crate::error::{DataError, Location};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExerciseRow {
    exercise: ExerciseId,
    max_points: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRow {
    submission: SubmissionId,
    grader: GraderId,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradeRow {
    exercise: ExerciseId,
    submission: SubmissionId,
    grader: GraderId,
    role: GradeRole,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallotRow {
    exercise: ExerciseId,
    grader: GraderId,
    position: usize,
    submission: SubmissionId,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExamRow {
    grader: GraderId,
    exam_grade: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    exercises: Vec<ExerciseRow>,
    #[serde(default)]
    groups: Vec<GroupRow>,
    grades: Vec<GradeRow>,
    #[serde(default)]
    ballots: Vec<BallotRow>,
    #[serde(default)]
    exams: Vec<ExamRow>,
}

fn schema(message: String) -> DataError {
    DataError::Schema { location: Location::Record { kind: "document", index: 0 }, message }
}

pub fn parse_slice(bytes: &[u8]) -> Result<Dataset, DataError> {
    let doc: Document = serde_json::from_slice(bytes)
        .map_err(|e| DataError::Schema { location: Location::Unknown, message: e.to_string() })?;
    let mut b = DatasetBuilder::new();
    for (index, r) in doc.exercises.into_iter().enumerate() {
        b.exercise_at(r.exercise, r.max_points, Location::Record { kind: "exercises", index });
    }
    for (index, r) in doc.grades.into_iter().enumerate() {
        let g = CardinalGrade {
            exercise: r.exercise,
            submission: r.submission,
            grader: r.grader,
            role: r.role,
            value: r.value,
        };
        b.grade_at(g, Location::Record { kind: "grades", index });
    }
    let mut ballots: BTreeMap<(ExerciseId, GraderId), (usize, BTreeMap<usize, Vec<SubmissionId>>)> =
        BTreeMap::new();
    for (index, r) in doc.ballots.into_iter().enumerate() {
        let entry = ballots.entry((r.exercise, r.grader)).or_insert_with(|| (index, BTreeMap::new()));
        entry.1.entry(r.position).or_default().push(r.submission);
    }
    for ((exercise, grader), (index, positions)) in ballots {
        if positions.keys().enumerate().any(|(i, p)| i != *p) {
            return Err(schema(format!(
                "ballots[{index}]: ballot of {grader} on {exercise}: positions must be contiguous from 0"
            )));
        }
        let ballot = OrdinalBallot { exercise, grader, ranking: positions.into_values().collect() };
        b.ballot_at(ballot, Location::Record { kind: "ballots", index });
    }
    for (index, r) in doc.groups.into_iter().enumerate() {
        b.member_at(r.submission, r.grader, Location::Record { kind: "groups", index });
    }
    for (index, r) in doc.exams.into_iter().enumerate() {
        b.exam_at(r.grader, r.exam_grade, Location::Record { kind: "exams", index });
    }
    b.build()
}

pub fn render(dataset: &Dataset) -> Vec<u8> {
    let doc = Document {
        exercises: dataset
            .exercises()
            .iter()
            .map(|(e, m)| ExerciseRow { exercise: e.clone(), max_points: *m })
            .collect(),
        groups: dataset
            .groups()
            .iter()
            .flat_map(|(s, members)| members.iter().map(|g| GroupRow { submission: s.clone(), grader: g.clone() }))
            .collect(),
        grades: dataset
            .grades()
            .iter()
            .map(|g| GradeRow {
                exercise: g.exercise.clone(),
                submission: g.submission.clone(),
                grader: g.grader.clone(),
                role: g.role,
                value: g.value,
            })
            .collect(),
        ballots: dataset
            .ballots()
            .iter()
            .flat_map(|b| {
                b.ranking.iter().enumerate().flat_map(move |(position, group)| {
                    group.iter().map(move |s| BallotRow {
                        exercise: b.exercise.clone(),
                        grader: b.grader.clone(),
                        position,
                        submission: s.clone(),
                    })
                })
            })
            .collect(),
        exams: dataset.exams().iter().map(|(g, x)| ExamRow { grader: g.clone(), exam_grade: *x }).collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("dataset serializes");
    out.push(b'\n');
    out
}

pub fn load_file(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_slice(&bytes)
}

pub fn save_file(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| DataError::Io { path: parent.display().to_string(), source })?;
    }
    fs::write(path, render(dataset)).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}
