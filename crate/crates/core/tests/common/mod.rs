//! Helpers shared by the integration tests.

use std::collections::{BTreeMap, BTreeSet};

use peergrade::{CardinalGrade, Dataset, ExerciseId, GradeRole, GraderId, OrdinalBallot, SubmissionId};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A random valid dataset exercising every record kind.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let mut b = Dataset::builder();
    let n_ex = rng.random_range(1..=4);
    let n_gr = rng.random_range(2..=12);
    let graders: Vec<GraderId> = (0..n_gr).map(|j| GraderId::from(format!("g{j}"))).collect();
    let value = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.random_range(0..4) {
            0 => rng.random_range(0..=10) as f64,
            1 => rng.random::<f64>(),
            2 => rng.random_range(-1.0..2.0) * 1e-7,
            _ => rng.random_range(-3.0..3.0),
        }
    };
    for e in 0..n_ex {
        let ex = ExerciseId::from(format!("ex{e}"));
        b.add_exercise(ex.clone(), [1.0, 10.0, 0.0, 7.5][rng.random_range(0..4)]);
        let n_sub = rng.random_range(1..=6);
        let subs: Vec<SubmissionId> = (0..n_sub).map(|i| SubmissionId::from(format!("ex{e}-s{i}"))).collect();
        let mut members: BTreeMap<&SubmissionId, BTreeSet<&GraderId>> = BTreeMap::new();
        for s in &subs {
            let group: BTreeSet<&GraderId> = {
                let size = rng.random_range(0..=2);
                graders.choose_multiple(rng, size).collect()
            };
            for g in &group {
                b.add_member(s.clone(), (*g).clone());
            }
            members.insert(s, group);
        }
        for s in &subs {
            let mut roles_used = false;
            for g in &graders {
                let member = members[s].contains(g);
                let role = if member { GradeRole::SelfGrade } else { [GradeRole::PeerGrade, GradeRole::TaGrade][rng.random_range(0..2)] };
                if rng.random_bool(0.4) || (!roles_used && g == graders.last().unwrap() && !member) {
                    b.add_grade(CardinalGrade { exercise: ex.clone(), submission: s.clone(), grader: g.clone(), role, value: value(rng) });
                    roles_used = true;
                }
            }
            if !roles_used {
                b.add_grade(CardinalGrade {
                    exercise: ex.clone(),
                    submission: s.clone(),
                    grader: "ta0".into(),
                    role: GradeRole::TaGrade,
                    value: value(rng),
                });
            }
        }
        for g in &graders {
            let eligible: Vec<&SubmissionId> = subs.iter().filter(|s| !members[s].contains(g)).collect();
            if eligible.len() >= 2 && rng.random_bool(0.3) {
                let mut pick: Vec<&SubmissionId> = {
                    let size = rng.random_range(2..=eligible.len());
                    eligible.choose_multiple(rng, size).copied().collect()
                };
                pick.shuffle(rng);
                let mut ranking: Vec<Vec<SubmissionId>> = Vec::new();
                for s in pick {
                    match ranking.last_mut() {
                        Some(group) if rng.random_bool(0.3) => group.push(s.clone()),
                        _ => ranking.push(vec![s.clone()]),
                    }
                }
                b.add_ballot(OrdinalBallot { exercise: ex.clone(), grader: g.clone(), ranking });
            }
        }
    }
    let seen: BTreeSet<GraderId> = {
        let probe = b.clone().build().expect("generated dataset is valid");
        probe.graders()
    };
    for g in &graders {
        if seen.contains(g) && rng.random_bool(0.5) {
            b.add_exam(g.clone(), rng.random_range(0.0..100.0));
        }
    }
    b.build().expect("generated dataset is valid")
}

