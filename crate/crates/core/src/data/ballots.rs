use std::collections::BTreeMap;

use super::{Dataset, ExerciseId, GraderId, OrdinalBallot, RoleSet, SubmissionId};

/// Turns each grader's cardinal grades on an exercise into a worst-to-best
/// ballot. Equal values share a tie-group. Graders with fewer than two graded
/// submissions on an exercise yield no ballot.
pub fn induce_ballots(dataset: &Dataset, roles: RoleSet) -> Vec<OrdinalBallot> {
    let mut by_key: BTreeMap<(&ExerciseId, &GraderId), BTreeMap<&SubmissionId, (f64, usize)>> =
        BTreeMap::new();
    for g in dataset.grades_with_roles(roles) {
        let slot = by_key.entry((&g.exercise, &g.grader)).or_default().entry(&g.submission).or_default();
        slot.0 += g.value;
        slot.1 += 1;
    }

    let mut out = Vec::new();
    for ((exercise, grader), subs) in by_key {
        if subs.len() < 2 {
            continue;
        }
        let mut items: Vec<(f64, &SubmissionId)> =
            subs.into_iter().map(|(s, (sum, n))| (sum / n as f64, s)).collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let mut ranking: Vec<Vec<SubmissionId>> = Vec::new();
        let mut last: Option<f64> = None;
        for (v, s) in items {
            if last == Some(v) {
                ranking.last_mut().expect("non-empty").push(s.clone());
            } else {
                ranking.push(vec![s.clone()]);
                last = Some(v);
            }
        }
        out.push(OrdinalBallot { exercise: exercise.clone(), grader: grader.clone(), ranking });
    }
    out
}
