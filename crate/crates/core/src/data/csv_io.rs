//! CSV layout: one UTF-8 file per record kind, each with a header row.
//!
//! | file            | columns                                      |
//! |-----------------|----------------------------------------------|
//! | `exercises.csv` | `exercise,max_points`                        |
//! | `groups.csv`    | `submission,grader`                          |
//! | `grades.csv`    | `exercise,submission,grader,role,value`      |
//! | `ballots.csv`   | `exercise,grader,position,submission`        |
//! | `exams.csv`     | `grader,exam_grade`                          |
//! | `truth.csv`     | `exercise,submission,true_score`             |
//!
//! `role` is one of `self`, `peer`, `ta`. `position` is the 0-based tie-group
//! index within a ballot, worst first; rows sharing a position are tied.
//! A submission's exercise is taken from the grade and ballot rows that
//! reference it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    CardinalGrade, Dataset, DatasetBuilder, ExerciseId, GraderId, OrdinalBallot, SubmissionId,
    TruthSet, TruthSource,
};
use crate::error::{DataError, Location};

pub const EXERCISES_FILE: &str = "exercises.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const GRADES_FILE: &str = "grades.csv";
pub const BALLOTS_FILE: &str = "ballots.csv";
pub const EXAMS_FILE: &str = "exams.csv";
pub const TRUTH_FILE: &str = "truth.csv";

const EXERCISES_HEADER: [&str; 2] = ["exercise", "max_points"];
const GROUPS_HEADER: [&str; 2] = ["submission", "grader"];
const GRADES_HEADER: [&str; 5] = ["exercise", "submission", "grader", "role", "value"];
const BALLOTS_HEADER: [&str; 4] = ["exercise", "grader", "position", "submission"];
const EXAMS_HEADER: [&str; 2] = ["grader", "exam_grade"];
const TRUTH_HEADER: [&str; 3] = ["exercise", "submission", "true_score"];

/// Raw contents of the per-kind files. Missing optional files are `None`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CsvSources<'a> {
    pub exercises: &'a [u8],
    pub grades: &'a [u8],
    pub groups: Option<&'a [u8]>,
    pub ballots: Option<&'a [u8]>,
    pub exams: Option<&'a [u8]>,
}

fn schema(file: &'static str, line: u64, message: impl Into<String>) -> DataError {
    DataError::Schema { location: Location::Row { file, line }, message: message.into() }
}

/// Reads `file` and calls `row` with each record's fields and line number.
fn for_each_row<F>(file: &'static str, bytes: &[u8], header: &[&str], mut row: F) -> Result<(), DataError>
where
    F: FnMut(&csv::StringRecord, u64) -> Result<(), DataError>,
{
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let got = rdr.headers().map_err(|e| schema(file, 1, e.to_string()))?.clone();
    if got.len() != header.len() || got.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(schema(
            file,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                if record.len() != header.len() {
                    return Err(schema(file, line, format!("expected {} fields, found {}", header.len(), record.len())));
                }
                row(&record, line)?;
            }
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                return Err(schema(file, line, e.to_string()));
            }
        }
    }
    Ok(())
}

fn field<'r>(rec: &'r csv::StringRecord, i: usize, file: &'static str, line: u64, name: &str) -> Result<&'r str, DataError> {
    let v = rec.get(i).unwrap_or("");
    if v.is_empty() {
        return Err(schema(file, line, format!("empty {name}")));
    }
    Ok(v)
}

fn number(rec: &csv::StringRecord, i: usize, file: &'static str, line: u64, name: &str) -> Result<f64, DataError> {
    let raw = field(rec, i, file, line, name)?;
    let v: f64 = raw.parse().map_err(|_| schema(file, line, format!("{name}: not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(schema(file, line, format!("{name}: not finite: {raw:?}")));
    }
    Ok(v)
}

/// Parses the per-kind CSV contents into a validated dataset.
pub fn parse_sources(src: CsvSources<'_>) -> Result<Dataset, DataError> {
    let mut b = DatasetBuilder::new();

    for_each_row(EXERCISES_FILE, src.exercises, &EXERCISES_HEADER, |r, line| {
        let id = field(r, 0, EXERCISES_FILE, line, "exercise")?;
        let max = number(r, 1, EXERCISES_FILE, line, "max_points")?;
        b.exercise_at(id.into(), max, Location::Row { file: EXERCISES_FILE, line });
        Ok(())
    })?;

    for_each_row(GRADES_FILE, src.grades, &GRADES_HEADER, |r, line| {
        let role = field(r, 3, GRADES_FILE, line, "role")?.parse().map_err(|e: String| schema(GRADES_FILE, line, e))?;
        let grade = CardinalGrade {
            exercise: field(r, 0, GRADES_FILE, line, "exercise")?.into(),
            submission: field(r, 1, GRADES_FILE, line, "submission")?.into(),
            grader: field(r, 2, GRADES_FILE, line, "grader")?.into(),
            role,
            value: number(r, 4, GRADES_FILE, line, "value")?,
        };
        b.grade_at(grade, Location::Row { file: GRADES_FILE, line });
        Ok(())
    })?;

    if let Some(bytes) = src.ballots {
        // (exercise, grader) -> (first line, position -> members)
        type Rows = BTreeMap<(ExerciseId, GraderId), (u64, BTreeMap<usize, Vec<SubmissionId>>)>;
        let mut rows: Rows = BTreeMap::new();
        for_each_row(BALLOTS_FILE, bytes, &BALLOTS_HEADER, |r, line| {
            let e = field(r, 0, BALLOTS_FILE, line, "exercise")?;
            let g = field(r, 1, BALLOTS_FILE, line, "grader")?;
            let raw = field(r, 2, BALLOTS_FILE, line, "position")?;
            let pos: usize = raw
                .parse()
                .map_err(|_| schema(BALLOTS_FILE, line, format!("position: not a non-negative integer: {raw:?}")))?;
            let s = field(r, 3, BALLOTS_FILE, line, "submission")?;
            let entry = rows.entry((e.into(), g.into())).or_insert_with(|| (line, BTreeMap::new()));
            entry.1.entry(pos).or_default().push(s.into());
            Ok(())
        })?;
        for ((exercise, grader), (line, positions)) in rows {
            if positions.keys().enumerate().any(|(i, p)| i != *p) {
                return Err(schema(
                    BALLOTS_FILE,
                    line,
                    format!("ballot of {grader} on {exercise}: positions must be contiguous from 0"),
                ));
            }
            let ballot = OrdinalBallot { exercise, grader, ranking: positions.into_values().collect() };
            b.ballot_at(ballot, Location::Row { file: BALLOTS_FILE, line });
        }
    }

    if let Some(bytes) = src.groups {
        for_each_row(GROUPS_FILE, bytes, &GROUPS_HEADER, |r, line| {
            let s = field(r, 0, GROUPS_FILE, line, "submission")?;
            let g = field(r, 1, GROUPS_FILE, line, "grader")?;
            b.member_at(s.into(), g.into(), Location::Row { file: GROUPS_FILE, line });
            Ok(())
        })?;
    }

    if let Some(bytes) = src.exams {
        for_each_row(EXAMS_FILE, bytes, &EXAMS_HEADER, |r, line| {
            let g = field(r, 0, EXAMS_FILE, line, "grader")?;
            let x = number(r, 1, EXAMS_FILE, line, "exam_grade")?;
            b.exam_at(g.into(), x, Location::Row { file: EXAMS_FILE, line });
            Ok(())
        })?;
    }

    b.build()
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, DataError> {
    if path.exists() {
        read_file(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads a dataset directory. `exercises.csv` and `grades.csv` are required.
pub fn load_dir(dir: &Path) -> Result<Dataset, DataError> {
    let exercises = read_file(&dir.join(EXERCISES_FILE))?;
    let grades = read_file(&dir.join(GRADES_FILE))?;
    let groups = read_optional(&dir.join(GROUPS_FILE))?;
    let ballots = read_optional(&dir.join(BALLOTS_FILE))?;
    let exams = read_optional(&dir.join(EXAMS_FILE))?;
    parse_sources(CsvSources {
        exercises: &exercises,
        grades: &grades,
        groups: groups.as_deref(),
        ballots: ballots.as_deref(),
        exams: exams.as_deref(),
    })
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_err(path: &str, e: csv::Error) -> DataError {
    DataError::Io { path: path.to_owned(), source: std::io::Error::other(e) }
}

/// Serializes each record kind to its CSV text, in deterministic order.
pub fn render(dataset: &Dataset) -> Vec<(&'static str, Vec<u8>)> {
    fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
        w.into_inner().expect("in-memory writer")
    }
    let mut out = Vec::with_capacity(5);

    let mut w = writer(Vec::new());
    w.write_record(EXERCISES_HEADER).expect("in-memory");
    for (e, m) in dataset.exercises() {
        w.write_record([e.as_str(), &m.to_string()]).expect("in-memory");
    }
    out.push((EXERCISES_FILE, finish(w)));

    let mut w = writer(Vec::new());
    w.write_record(GROUPS_HEADER).expect("in-memory");
    for (s, members) in dataset.groups() {
        for g in members {
            w.write_record([s.as_str(), g.as_str()]).expect("in-memory");
        }
    }
    out.push((GROUPS_FILE, finish(w)));

    let mut w = writer(Vec::new());
    w.write_record(GRADES_HEADER).expect("in-memory");
    for g in dataset.grades() {
        w.write_record([
            g.exercise.as_str(),
            g.submission.as_str(),
            g.grader.as_str(),
            g.role.as_str(),
            &g.value.to_string(),
        ])
        .expect("in-memory");
    }
    out.push((GRADES_FILE, finish(w)));

    let mut w = writer(Vec::new());
    w.write_record(BALLOTS_HEADER).expect("in-memory");
    for b in dataset.ballots() {
        for (pos, group) in b.ranking.iter().enumerate() {
            for s in group {
                w.write_record([b.exercise.as_str(), b.grader.as_str(), &pos.to_string(), s.as_str()])
                    .expect("in-memory");
            }
        }
    }
    out.push((BALLOTS_FILE, finish(w)));

    let mut w = writer(Vec::new());
    w.write_record(EXAMS_HEADER).expect("in-memory");
    for (g, x) in dataset.exams() {
        w.write_record([g.as_str(), &x.to_string()]).expect("in-memory");
    }
    out.push((EXAMS_FILE, finish(w)));

    out
}

/// Writes all five record files into `dir` (created if missing).
pub fn save_dir(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.display().to_string(), source })?;
    for (name, bytes) in render(dataset) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    }
    Ok(())
}

pub fn parse_truth(bytes: &[u8], source: TruthSource) -> Result<TruthSet, DataError> {
    let mut truth = TruthSet::new(source);
    let mut seen = std::collections::BTreeSet::new();
    for_each_row(TRUTH_FILE, bytes, &TRUTH_HEADER, |r, line| {
        let e: ExerciseId = field(r, 0, TRUTH_FILE, line, "exercise")?.into();
        let s: SubmissionId = field(r, 1, TRUTH_FILE, line, "submission")?.into();
        let v = number(r, 2, TRUTH_FILE, line, "true_score")?;
        if !seen.insert(s.clone()) {
            return Err(schema(TRUTH_FILE, line, format!("duplicate truth for submission {s}")));
        }
        truth.insert(e, s, v);
        Ok(())
    })?;
    Ok(truth)
}

pub fn load_truth(path: &Path, source: TruthSource) -> Result<TruthSet, DataError> {
    parse_truth(&read_file(path)?, source)
}

pub fn write_truth<W: Write>(truth: &TruthSet, w: W) -> Result<(), DataError> {
    let mut w = writer(w);
    let wrap = |e| csv_err(TRUTH_FILE, e);
    w.write_record(TRUTH_HEADER).map_err(wrap)?;
    for ((e, s), v) in &truth.scores {
        w.write_record([e.as_str(), s.as_str(), &v.to_string()]).map_err(wrap)?;
    }
    w.flush().map_err(|source| DataError::Io { path: TRUTH_FILE.into(), source })
}

pub fn save_truth(truth: &TruthSet, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_truth(truth, &mut buf)?;
    fs::write(path, buf).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// Convenience for callers holding a reader rather than bytes.
pub fn read_all<R: Read>(mut r: R, path: &str) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|source| DataError::Io { path: path.into(), source })?;
    Ok(buf)
}
