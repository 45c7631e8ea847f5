use std::collections::BTreeMap;

use super::{Dataset, ExerciseId};
use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide every grade of an exercise by that exercise's declared maximum.
    UnitInterval,
    /// Shift and scale each exercise's grades to sample mean 0, sample variance 1.
    ZScore,
}

/// Rescales grades exercise by exercise. Ballots and exams are untouched.
///
/// Unit-interval mode also resets each exercise's maximum to 1, so applying it
/// twice is the identity.
pub fn normalize_scores(dataset: &Dataset, mode: Normalization) -> Result<Dataset, DataError> {
    match mode {
        Normalization::UnitInterval => {
            let mut maxima = BTreeMap::new();
            for (e, &m) in dataset.exercises() {
                if m <= 0.0 {
                    return Err(DataError::InvalidExercise(e.to_string()));
                }
                maxima.insert(e.clone(), 1.0);
            }
            let grades = dataset
                .grades()
                .iter()
                .map(|g| {
                    let m = dataset.exercises()[&g.exercise];
                    let mut g = g.clone();
                    if m != 1.0 {
                        g.value /= m;
                    }
                    g
                })
                .collect();
            Ok(dataset.with_grades(grades).with_exercise_max(maxima))
        }
        Normalization::ZScore => {
            let mut stats: BTreeMap<&ExerciseId, (f64, f64)> = BTreeMap::new();
            for e in dataset.exercise_ids() {
                let values: Vec<f64> =
                    dataset.grades().iter().filter(|g| &g.exercise == e).map(|g| g.value).collect();
                if values.len() < 2 {
                    return Err(DataError::DegenerateExercise(e.to_string()));
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                if var <= 0.0 {
                    return Err(DataError::DegenerateExercise(e.to_string()));
                }
                stats.insert(e, (mean, var.sqrt()));
            }
            let grades = dataset
                .grades()
                .iter()
                .map(|g| {
                    let (mean, sd) = stats[&g.exercise];
                    let mut g = g.clone();
                    g.value = (g.value - mean) / sd;
                    g
                })
                .collect();
            Ok(dataset.with_grades(grades))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CardinalGrade, GradeRole};
    use approx::assert_abs_diff_eq;

    fn dataset(max: f64, values: &[f64]) -> Dataset {
        let mut b = Dataset::builder();
        b.add_exercise("e", max);
        for (i, v) in values.iter().enumerate() {
            b.add_grade(CardinalGrade {
                exercise: "e".into(),
                submission: format!("s{i}").into(),
                grader: "g".into(),
                role: GradeRole::PeerGrade,
                value: *v,
            });
        }
        b.build().unwrap()
    }

    fn values(d: &Dataset) -> Vec<f64> {
        d.grades().iter().map(|g| g.value).collect()
    }

    #[test]
    fn divides_by_declared_maximum() {
        let d = normalize_scores(&dataset(10.0, &[5.0, 7.0, 10.0]), Normalization::UnitInterval).unwrap();
        assert_eq!(values(&d), vec![0.5, 0.7, 1.0]);
        assert_eq!(d.max_points(&"e".into()), Some(1.0));
    }

    #[test]
    fn unit_interval_is_idempotent() {
        let d = dataset(1.0, &[0.5, 1.0]);
        let n = normalize_scores(&d, Normalization::UnitInterval).unwrap();
        assert_eq!(n, d);
        let twice = normalize_scores(&dataset(7.0, &[3.0, 6.5]), Normalization::UnitInterval).unwrap();
        assert_eq!(normalize_scores(&twice, Normalization::UnitInterval).unwrap(), twice);
    }

    #[test]
    fn zero_maximum_is_rejected() {
        let err = normalize_scores(&dataset(0.0, &[0.0, 0.0]), Normalization::UnitInterval).unwrap_err();
        assert!(matches!(err, DataError::InvalidExercise(_)));
    }

    #[test]
    fn z_score_uses_sample_sd() {
        // mean 0.7, sample sd 0.2
        let d = normalize_scores(&dataset(1.0, &[0.5, 0.7, 0.9]), Normalization::ZScore).unwrap();
        let v = values(&d);
        assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn z_score_degenerate() {
        assert!(matches!(
            normalize_scores(&dataset(1.0, &[0.4, 0.4]), Normalization::ZScore),
            Err(DataError::DegenerateExercise(_))
        ));
        assert!(matches!(
            normalize_scores(&dataset(1.0, &[0.4]), Normalization::ZScore),
            Err(DataError::DegenerateExercise(_))
        ));
    }
}
