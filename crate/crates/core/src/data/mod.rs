//! Grading data model.
//!
//! A [`Dataset`] holds exercises (with their score maxima), submissions, the
//! group of students behind each submission, cardinal grades by role, ordinal
//! ballots and optional exam grades. Values are immutable once built; every
//! constructor path goes through [`DatasetBuilder::build`], which checks the
//! membership and uniqueness rules and reports each violation with its
//! source location.

mod ballots;
pub mod csv_io;
pub mod json_io;
mod normalize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Location, Violation};

pub use ballots::induce_ballots;
pub use normalize::{normalize_scores, Normalization};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// A student or TA who reports grades.
    GraderId
);
id_type!(
    /// One handed-in solution. Unique across the whole dataset.
    SubmissionId
);
id_type!(ExerciseId);

/// Who produced a cardinal grade relative to the submission's group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GradeRole {
    #[serde(rename = "self")]
    SelfGrade,
    #[serde(rename = "peer")]
    PeerGrade,
    #[serde(rename = "ta")]
    TaGrade,
}

impl GradeRole {
    pub const ALL: [GradeRole; 3] = [GradeRole::SelfGrade, GradeRole::PeerGrade, GradeRole::TaGrade];

    pub fn as_str(self) -> &'static str {
        match self {
            GradeRole::SelfGrade => "self",
            GradeRole::PeerGrade => "peer",
            GradeRole::TaGrade => "ta",
        }
    }

    fn bit(self) -> u8 {
        match self {
            GradeRole::SelfGrade => 1,
            GradeRole::PeerGrade => 2,
            GradeRole::TaGrade => 4,
        }
    }
}

impl fmt::Display for GradeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradeRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "self" => Ok(GradeRole::SelfGrade),
            "peer" => Ok(GradeRole::PeerGrade),
            "ta" => Ok(GradeRole::TaGrade),
            other => Err(format!("unknown role {other:?} (expected self, peer or ta)")),
        }
    }
}

/// A set of grade roles, written `self+peer` or `self,peer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RoleSet(u8);

impl RoleSet {
    pub const PEER: RoleSet = RoleSet(2);
    pub const SELF: RoleSet = RoleSet(1);
    pub const SELF_PEER: RoleSet = RoleSet(3);
    pub const TA: RoleSet = RoleSet(4);

    pub fn empty() -> Self {
        RoleSet(0)
    }

    pub fn contains(self, role: GradeRole) -> bool {
        self.0 & role.bit() != 0
    }

    pub fn with(self, role: GradeRole) -> Self {
        RoleSet(self.0 | role.bit())
    }

    pub fn without(self, role: GradeRole) -> Self {
        RoleSet(self.0 & !role.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = GradeRole> {
        GradeRole::ALL.into_iter().filter(move |r| self.contains(*r))
    }
}

impl FromIterator<GradeRole> for RoleSet {
    fn from_iter<I: IntoIterator<Item = GradeRole>>(iter: I) -> Self {
        iter.into_iter().fold(RoleSet::empty(), RoleSet::with)
    }
}

impl Serialize for RoleSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoleSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for RoleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(GradeRole::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for RoleSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let set = s
            .split(['+', ','])
            .filter(|p| !p.trim().is_empty())
            .map(GradeRole::from_str)
            .collect::<Result<RoleSet, _>>()?;
        if set.is_empty() {
            return Err("empty role set".into());
        }
        Ok(set)
    }
}

/// One cardinal observation: `grader` scored `submission` with `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalGrade {
    pub exercise: ExerciseId,
    pub submission: SubmissionId,
    pub grader: GraderId,
    pub role: GradeRole,
    pub value: f64,
}

impl CardinalGrade {
    fn key(&self) -> (&ExerciseId, &SubmissionId, &GraderId, GradeRole) {
        (&self.exercise, &self.submission, &self.grader, self.role)
    }
}

/// A grader's ranking of submissions of one exercise, as tie-groups from
/// worst to best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalBallot {
    pub exercise: ExerciseId,
    pub grader: GraderId,
    pub ranking: Vec<Vec<SubmissionId>>,
}

impl OrdinalBallot {
    pub fn len(&self) -> usize {
        self.ranking.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_strict(&self) -> bool {
        self.ranking.iter().all(|g| g.len() == 1)
    }

    pub fn submissions(&self) -> impl Iterator<Item = &SubmissionId> {
        self.ranking.iter().flatten()
    }
}

/// Provenance of a [`TruthSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthSource {
    Ta,
    Synthetic,
}

/// Reference scores per (exercise, submission).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSet {
    pub scores: BTreeMap<(ExerciseId, SubmissionId), f64>,
    pub source: TruthSource,
}

impl TruthSet {
    pub fn new(source: TruthSource) -> Self {
        Self { scores: BTreeMap::new(), source }
    }

    pub fn get(&self, exercise: &ExerciseId, submission: &SubmissionId) -> Option<f64> {
        self.scores.get(&(exercise.clone(), submission.clone())).copied()
    }

    pub fn insert(&mut self, exercise: ExerciseId, submission: SubmissionId, score: f64) {
        self.scores.insert((exercise, submission), score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Truth restricted to one exercise.
    pub fn exercise(&self, exercise: &ExerciseId) -> BTreeMap<SubmissionId, f64> {
        self.scores
            .iter()
            .filter(|((e, _), _)| e == exercise)
            .map(|((_, s), v)| (s.clone(), *v))
            .collect()
    }
}

/// Default upper bound on group size (AD-shaped data: groups of up to three).
pub const DEFAULT_MAX_GROUP_SIZE: usize = 3;

/// Validated, immutable grading dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    exercises: BTreeMap<ExerciseId, f64>,
    submissions: BTreeMap<SubmissionId, ExerciseId>,
    groups: BTreeMap<SubmissionId, BTreeSet<GraderId>>,
    grades: Vec<CardinalGrade>,
    ballots: Vec<OrdinalBallot>,
    exams: BTreeMap<GraderId, f64>,
}

impl Dataset {
    pub fn builder() -> DatasetBuilder {
        DatasetBuilder::new()
    }

    /// Exercises with their declared score maxima.
    pub fn exercises(&self) -> &BTreeMap<ExerciseId, f64> {
        &self.exercises
    }

    pub fn exercise_ids(&self) -> impl Iterator<Item = &ExerciseId> {
        self.exercises.keys()
    }

    pub fn max_points(&self, exercise: &ExerciseId) -> Option<f64> {
        self.exercises.get(exercise).copied()
    }

    pub fn submissions(&self) -> &BTreeMap<SubmissionId, ExerciseId> {
        &self.submissions
    }

    pub fn exercise_of(&self, submission: &SubmissionId) -> Option<&ExerciseId> {
        self.submissions.get(submission)
    }

    pub fn submissions_of<'a>(
        &'a self,
        exercise: &'a ExerciseId,
    ) -> impl Iterator<Item = &'a SubmissionId> + 'a {
        self.submissions.iter().filter(move |(_, e)| *e == exercise).map(|(s, _)| s)
    }

    pub fn groups(&self) -> &BTreeMap<SubmissionId, BTreeSet<GraderId>> {
        &self.groups
    }

    pub fn group(&self, submission: &SubmissionId) -> Option<&BTreeSet<GraderId>> {
        self.groups.get(submission)
    }

    pub fn is_member(&self, grader: &GraderId, submission: &SubmissionId) -> bool {
        self.groups.get(submission).is_some_and(|g| g.contains(grader))
    }

    /// Cardinal grades, sorted by (exercise, submission, grader, role).
    pub fn grades(&self) -> &[CardinalGrade] {
        &self.grades
    }

    pub fn grades_with_roles(&self, roles: RoleSet) -> impl Iterator<Item = &CardinalGrade> {
        self.grades.iter().filter(move |g| roles.contains(g.role))
    }

    /// Ordinal ballots, sorted by (exercise, grader).
    pub fn ballots(&self) -> &[OrdinalBallot] {
        &self.ballots
    }

    pub fn exams(&self) -> &BTreeMap<GraderId, f64> {
        &self.exams
    }

    /// Every grader referenced anywhere in the dataset.
    pub fn graders(&self) -> BTreeSet<GraderId> {
        let mut out: BTreeSet<GraderId> = self.groups.values().flatten().cloned().collect();
        out.extend(self.grades.iter().map(|g| g.grader.clone()));
        out.extend(self.ballots.iter().map(|b| b.grader.clone()));
        out.extend(self.exams.keys().cloned());
        out
    }

    /// Truth built from TA grades (mean when a submission has several).
    pub fn ta_truth(&self) -> TruthSet {
        let mut acc: BTreeMap<(ExerciseId, SubmissionId), (f64, usize)> = BTreeMap::new();
        for g in self.grades.iter().filter(|g| g.role == GradeRole::TaGrade) {
            let e = acc.entry((g.exercise.clone(), g.submission.clone())).or_default();
            e.0 += g.value;
            e.1 += 1;
        }
        TruthSet {
            scores: acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            source: TruthSource::Ta,
        }
    }

    /// Copy with the given grades replacing the current ones. Used by
    /// transformations that keep ids and structure fixed.
    pub(crate) fn with_grades(&self, grades: Vec<CardinalGrade>) -> Dataset {
        Dataset { grades, ..self.clone() }
    }

    pub(crate) fn with_exercise_max(&self, exercises: BTreeMap<ExerciseId, f64>) -> Dataset {
        Dataset { exercises, ..self.clone() }
    }

    /// Rebuilds through the builder with a different ballot list.
    pub fn with_ballots(&self, ballots: Vec<OrdinalBallot>) -> Result<Dataset, DataError> {
        let mut b = DatasetBuilder::from_dataset(self);
        b.ballots.clear();
        for ballot in ballots {
            b.add_ballot(ballot);
        }
        b.build()
    }
}

/// On-disk dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// A directory holding one CSV file per record kind.
    Csv,
    /// A single JSON document.
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

/// Loads and validates a dataset. For [`Format::Csv`] `path` is a directory.
pub fn load_dataset(path: &std::path::Path, format: Format) -> Result<Dataset, DataError> {
    match format {
        Format::Csv => csv_io::load_dir(path),
        Format::Json => json_io::load_file(path),
    }
}

/// Writes a dataset with records in sorted order, so equal datasets produce
/// identical bytes.
pub fn save_dataset(dataset: &Dataset, path: &std::path::Path, format: Format) -> Result<(), DataError> {
    match format {
        Format::Csv => csv_io::save_dir(dataset, path),
        Format::Json => json_io::save_file(dataset, path),
    }
}

/// Accumulates records and validates them into a [`Dataset`].
#[derive(Debug, Clone)]
pub struct DatasetBuilder {
    max_group_size: usize,
    exercises: Vec<(ExerciseId, f64, Location)>,
    submissions: Vec<(SubmissionId, ExerciseId, Location)>,
    members: Vec<(SubmissionId, GraderId, Location)>,
    grades: Vec<(CardinalGrade, Location)>,
    ballots: Vec<(OrdinalBallot, Location)>,
    exams: Vec<(GraderId, f64, Location)>,
}

impl Default for DatasetBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self {
            max_group_size: DEFAULT_MAX_GROUP_SIZE,
            exercises: Vec::new(),
            submissions: Vec::new(),
            members: Vec::new(),
            grades: Vec::new(),
            ballots: Vec::new(),
            exams: Vec::new(),
        }
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        let mut b = Self::new();
        b.max_group_size = d.groups.values().map(BTreeSet::len).max().unwrap_or(1).max(DEFAULT_MAX_GROUP_SIZE);
        for (e, m) in &d.exercises {
            b.add_exercise(e.clone(), *m);
        }
        for (s, e) in &d.submissions {
            b.add_submission(s.clone(), e.clone());
        }
        for (s, members) in &d.groups {
            for g in members {
                b.add_member(s.clone(), g.clone());
            }
        }
        for g in &d.grades {
            b.add_grade(g.clone());
        }
        for ballot in &d.ballots {
            b.add_ballot(ballot.clone());
        }
        for (g, v) in &d.exams {
            b.add_exam(g.clone(), *v);
        }
        b
    }

    pub fn max_group_size(&mut self, n: usize) -> &mut Self {
        self.max_group_size = n;
        self
    }

    pub fn add_exercise(&mut self, id: impl Into<ExerciseId>, max_points: f64) -> &mut Self {
        let loc = Location::Record { kind: "exercises", index: self.exercises.len() };
        self.exercise_at(id.into(), max_points, loc)
    }

    pub fn add_submission(&mut self, id: impl Into<SubmissionId>, exercise: impl Into<ExerciseId>) -> &mut Self {
        let loc = Location::Record { kind: "submissions", index: self.submissions.len() };
        self.submissions.push((id.into(), exercise.into(), loc));
        self
    }

    pub fn add_member(&mut self, submission: impl Into<SubmissionId>, grader: impl Into<GraderId>) -> &mut Self {
        let loc = Location::Record { kind: "groups", index: self.members.len() };
        self.member_at(submission.into(), grader.into(), loc)
    }

    pub fn add_grade(&mut self, grade: CardinalGrade) -> &mut Self {
        let loc = Location::Record { kind: "grades", index: self.grades.len() };
        self.grade_at(grade, loc)
    }

    pub fn add_ballot(&mut self, ballot: OrdinalBallot) -> &mut Self {
        let loc = Location::Record { kind: "ballots", index: self.ballots.len() };
        self.ballot_at(ballot, loc)
    }

    pub fn add_exam(&mut self, grader: impl Into<GraderId>, grade: f64) -> &mut Self {
        let loc = Location::Record { kind: "exams", index: self.exams.len() };
        self.exam_at(grader.into(), grade, loc)
    }

    pub(crate) fn exercise_at(&mut self, id: ExerciseId, max: f64, loc: Location) -> &mut Self {
        self.exercises.push((id, max, loc));
        self
    }

    pub(crate) fn member_at(&mut self, s: SubmissionId, g: GraderId, loc: Location) -> &mut Self {
        self.members.push((s, g, loc));
        self
    }

    pub(crate) fn grade_at(&mut self, grade: CardinalGrade, loc: Location) -> &mut Self {
        self.grades.push((grade, loc));
        self
    }

    pub(crate) fn ballot_at(&mut self, ballot: OrdinalBallot, loc: Location) -> &mut Self {
        self.ballots.push((ballot, loc));
        self
    }

    pub(crate) fn exam_at(&mut self, g: GraderId, v: f64, loc: Location) -> &mut Self {
        self.exams.push((g, v, loc));
        self
    }

    /// Validates every record and produces the dataset, or all violations found.
    pub fn build(self) -> Result<Dataset, DataError> {
        let mut v: Vec<Violation> = Vec::new();
        let mut bad = |location: &Location, message: String| {
            v.push(Violation { location: location.clone(), message })
        };

        let mut exercises = BTreeMap::new();
        for (id, max, loc) in &self.exercises {
            if id.as_str().is_empty() {
                bad(loc, "empty exercise id".into());
            } else if !max.is_finite() || *max < 0.0 {
                bad(loc, format!("exercise {id}: max_points must be finite and non-negative, got {max}"));
            } else if exercises.insert(id.clone(), *max).is_some() {
                bad(loc, format!("duplicate exercise {id}"));
            }
        }

        let mut submissions: BTreeMap<SubmissionId, ExerciseId> = BTreeMap::new();
        let mut claim = |s: &SubmissionId, e: &ExerciseId, loc: &Location, bad: &mut dyn FnMut(&Location, String)| {
            if s.as_str().is_empty() {
                bad(loc, "empty submission id".into());
                return;
            }
            if !exercises.contains_key(e) {
                bad(loc, format!("unknown exercise {e:?}"));
                return;
            }
            match submissions.get(s) {
                Some(prev) if prev != e => {
                    bad(loc, format!("submission {s} belongs to exercise {prev}, not {e}"));
                }
                Some(_) => {}
                None => {
                    submissions.insert(s.clone(), e.clone());
                }
            }
        };
        for (s, e, loc) in &self.submissions {
            claim(s, e, loc, &mut bad);
        }
        for (g, loc) in &self.grades {
            claim(&g.submission, &g.exercise, loc, &mut bad);
        }
        for (b, loc) in &self.ballots {
            for s in b.submissions() {
                claim(s, &b.exercise, loc, &mut bad);
            }
        }

        let mut groups: BTreeMap<SubmissionId, BTreeSet<GraderId>> = BTreeMap::new();
        for (s, g, loc) in &self.members {
            if g.as_str().is_empty() {
                bad(loc, "empty grader id".into());
            } else if !submissions.contains_key(s) {
                bad(loc, format!("group record references unknown submission {s:?}"));
            } else if !groups.entry(s.clone()).or_default().insert(g.clone()) {
                bad(loc, format!("grader {g} listed twice in the group of {s}"));
            }
        }
        for (s, members) in &groups {
            if members.len() > self.max_group_size {
                let loc = self
                    .members
                    .iter()
                    .rev()
                    .find(|(ms, _, _)| ms == s)
                    .map(|(_, _, l)| l.clone())
                    .unwrap_or(Location::Unknown);
                bad(&loc, format!("group of {s} has {} members (max {})", members.len(), self.max_group_size));
            }
        }
        let member = |g: &GraderId, s: &SubmissionId| groups.get(s).is_some_and(|m| m.contains(g));

        let mut seen = BTreeSet::new();
        let mut grades = Vec::with_capacity(self.grades.len());
        for (g, loc) in &self.grades {
            if g.grader.as_str().is_empty() {
                bad(loc, "empty grader id".into());
                continue;
            }
            if !g.value.is_finite() {
                bad(loc, format!("non-finite grade value {}", g.value));
                continue;
            }
            if !submissions.get(&g.submission).is_some_and(|e| *e == g.exercise) {
                // already reported by `claim`
                continue;
            }
            match g.role {
                GradeRole::SelfGrade if !member(&g.grader, &g.submission) => {
                    bad(loc, format!("self grade by {} who is not in the group of {}", g.grader, g.submission));
                    continue;
                }
                GradeRole::PeerGrade if member(&g.grader, &g.submission) => {
                    bad(loc, format!("peer grade by {} who is a member of the group of {}", g.grader, g.submission));
                    continue;
                }
                _ => {}
            }
            if !seen.insert((g.exercise.clone(), g.submission.clone(), g.grader.clone(), g.role)) {
                bad(
                    loc,
                    format!("duplicate grade ({}, {}, {}, {})", g.exercise, g.submission, g.grader, g.role),
                );
                continue;
            }
            grades.push(g.clone());
        }
        grades.sort_by(|a, b| a.key().cmp(&b.key()));

        let mut ballot_keys = BTreeSet::new();
        let mut ballots = Vec::with_capacity(self.ballots.len());
        for (b, loc) in &self.ballots {
            if b.grader.as_str().is_empty() {
                bad(loc, "empty grader id".into());
                continue;
            }
            if b.ranking.iter().any(Vec::is_empty) {
                bad(loc, "ballot has an empty tie-group".into());
                continue;
            }
            let distinct: BTreeSet<&SubmissionId> = b.submissions().collect();
            if distinct.len() != b.len() {
                bad(loc, format!("ballot of {} on {} ranks a submission twice", b.grader, b.exercise));
                continue;
            }
            if b.len() < 2 {
                bad(loc, format!("ballot of {} on {} ranks fewer than 2 submissions", b.grader, b.exercise));
                continue;
            }
            if let Some(s) = b.submissions().find(|s| member(&b.grader, s)) {
                bad(loc, format!("ballot of {} ranks own group's submission {s}", b.grader));
                continue;
            }
            if !ballot_keys.insert((b.exercise.clone(), b.grader.clone())) {
                bad(loc, format!("duplicate ballot of {} on {}", b.grader, b.exercise));
                continue;
            }
            let mut b = b.clone();
            for group in &mut b.ranking {
                group.sort();
            }
            ballots.push(b);
        }
        ballots.sort_by(|a, b| (&a.exercise, &a.grader).cmp(&(&b.exercise, &b.grader)));

        let mut referenced: BTreeSet<&GraderId> = groups.values().flatten().collect();
        referenced.extend(grades.iter().map(|g| &g.grader));
        referenced.extend(ballots.iter().map(|b| &b.grader));
        let mut exams = BTreeMap::new();
        for (g, x, loc) in &self.exams {
            if !x.is_finite() || *x < 0.0 {
                bad(loc, format!("exam grade of {g} must be finite and non-negative, got {x}"));
            } else if !referenced.contains(g) {
                bad(loc, format!("exam grade for unknown grader {g:?}"));
            } else if exams.insert(g.clone(), *x).is_some() {
                bad(loc, format!("duplicate exam grade for {g}"));
            }
        }

        if !v.is_empty() {
            return Err(DataError::Invalid(v));
        }
        Ok(Dataset { exercises, submissions, groups, grades, ballots, exams })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grade(e: &str, s: &str, g: &str, role: GradeRole, value: f64) -> CardinalGrade {
        CardinalGrade { exercise: e.into(), submission: s.into(), grader: g.into(), role, value }
    }

    fn base() -> DatasetBuilder {
        let mut b = Dataset::builder();
        b.add_exercise("e1", 10.0);
        b.add_member("s1", "alice").add_member("s2", "bob");
        b.add_submission("s1", "e1").add_submission("s2", "e1");
        b
    }

    #[test]
    fn minimal_dataset_builds() {
        let mut b = base();
        b.add_grade(grade("e1", "s1", "bob", GradeRole::PeerGrade, 5.0));
        b.add_grade(grade("e1", "s2", "alice", GradeRole::PeerGrade, 7.0));
        let d = b.build().unwrap();
        assert_eq!(d.submissions().len(), 2);
        assert_eq!(d.graders().len(), 2);
    }

    #[test]
    fn peer_grade_by_member_is_rejected() {
        let mut b = base();
        b.add_grade(grade("e1", "s1", "alice", GradeRole::PeerGrade, 5.0));
        let err = b.build().unwrap_err();
        let v = err.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Location::Record { kind: "grades", index: 0 });
        assert!(v[0].message.contains("member"));
    }

    #[test]
    fn self_grade_by_non_member_is_rejected() {
        let mut b = base();
        b.add_grade(grade("e1", "s1", "bob", GradeRole::SelfGrade, 5.0));
        assert!(b.build().is_err());
    }

    #[test]
    fn duplicate_grade_is_an_error() {
        let mut b = base();
        b.add_grade(grade("e1", "s1", "bob", GradeRole::PeerGrade, 5.0));
        b.add_grade(grade("e1", "s1", "bob", GradeRole::PeerGrade, 6.0));
        let err = b.build().unwrap_err();
        assert!(err.to_string().contains("duplicate grade"));
    }

    #[test]
    fn dangling_references_are_errors() {
        let mut b = base();
        b.add_grade(grade("nope", "s9", "bob", GradeRole::PeerGrade, 5.0));
        b.add_member("s77", "carol");
        b.add_exam("zed", 3.0);
        let err = b.build().unwrap_err();
        assert_eq!(err.violations().len(), 3);
    }

    #[test]
    fn submission_in_two_exercises_is_an_error() {
        let mut b = base();
        b.add_exercise("e2", 1.0);
        b.add_grade(grade("e2", "s1", "bob", GradeRole::PeerGrade, 0.5));
        assert!(b.build().is_err());
    }

    #[test]
    fn oversized_group_is_rejected() {
        let mut b = base();
        b.add_member("s1", "x").add_member("s1", "y").add_member("s1", "z");
        assert!(b.clone().build().is_err());
        b.max_group_size(4);
        assert!(b.build().is_ok());
    }

    #[test]
    fn ballot_rules() {
        let mut b = base();
        b.add_member("s3", "carol").add_submission("s3", "e1");
        b.add_ballot(OrdinalBallot {
            exercise: "e1".into(),
            grader: "carol".into(),
            ranking: vec![vec!["s1".into()], vec!["s2".into()]],
        });
        assert!(b.clone().build().is_ok());
        b.add_ballot(OrdinalBallot {
            exercise: "e1".into(),
            grader: "alice".into(),
            ranking: vec![vec!["s1".into()], vec!["s2".into()]],
        });
        assert!(b.build().is_err());
    }

    #[test]
    fn negative_exam_rejected() {
        let mut b = base();
        b.add_exam("alice", -1.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn role_set_parsing() {
        let r: RoleSet = "self+peer".parse().unwrap();
        assert_eq!(r, RoleSet::SELF_PEER);
        assert_eq!(r.to_string(), "self+peer");
        assert_eq!("peer".parse::<RoleSet>().unwrap(), RoleSet::PEER);
        assert!("".parse::<RoleSet>().is_err());
        assert!("tutor".parse::<RoleSet>().is_err());
    }
}
