//! Synthetic grading data.
//!
//! Every grader gets a bias ~ N(0, bias_sd²) and a reliability drawn from a
//! Gamma prior; each observed grade is N(true + bias, 1/reliability). Graders
//! marked random ignore the submission and report Uniform[0, 1].
//!
//! The generator draws from three independent streams derived from the seed:
//! true scores, grader attributes, and (keyed additionally by k) assignment
//! plus grade noise. Changing only `grades_per_submission` therefore keeps the
//! same submissions and graders, which makes comparisons across k paired.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{
    CardinalGrade, Dataset, DatasetBuilder, ExerciseId, GradeRole, GraderId, SubmissionId, TruthSet, TruthSource,
};
use crate::error::SynthError;

/// Distribution of true scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruthModel {
    Normal { mean: f64, sd: f64 },
    Weibull { shape: f64, scale: f64 },
}

impl TruthModel {
    pub const STANDARD: TruthModel = TruthModel::Normal { mean: 0.5, sd: 1.0 / 6.0 };
    pub const SKEWED: TruthModel = TruthModel::Weibull { shape: 1.5, scale: 1.0 / 3.0 };
}

/// Gamma distribution in shape/rate form (mean = shape / rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Submissions per exercise (one per group).
    pub n_submissions: usize,
    pub n_graders: usize,
    pub n_exercises: usize,
    /// Peer grades per submission (k).
    pub grades_per_submission: usize,
    pub seed: u64,
    pub truth_model: TruthModel,
    pub bias_sd: f64,
    pub reliability_prior: GammaPrior,
    /// Replaces the drawn reliabilities with a constant.
    pub fixed_reliability: Option<f64>,
    /// The last `n_random_graders` graders report Uniform[0,1] noise.
    pub n_random_graders: usize,
    pub clip_to_unit: bool,
    /// Redraw bias and reliability for every exercise instead of once per grader.
    pub redraw_per_exercise: bool,
    /// Graders are spread round-robin over the groups, at most this many per group.
    pub max_group_size: usize,
    /// Every group member also grades their own submission.
    pub self_grades: bool,
    /// Extra offset applied to self grades on top of the grader's bias.
    pub self_bias: f64,
    /// Number of TAs; each submission gets one TA grade equal to its true score.
    pub n_tas: usize,
    /// Record each grader's planted reliability as their exam grade.
    pub exam_from_reliability: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_submissions: 100,
            n_graders: 100,
            n_exercises: 5,
            grades_per_submission: 6,
            seed: 0,
            truth_model: TruthModel::STANDARD,
            bias_sd: 1.0 / 8.0,
            reliability_prior: GammaPrior { shape: 3.0, rate: 1.0 / 30.0 },
            fixed_reliability: None,
            n_random_graders: 0,
            clip_to_unit: true,
            redraw_per_exercise: false,
            max_group_size: 1,
            self_grades: false,
            self_bias: 0.0,
            n_tas: 0,
            exam_from_reliability: false,
        }
    }
}

impl GeneratorConfig {
    /// 100 submissions, 100 graders, 5 exercises, normal truth, unclipped.
    pub fn fig1_left(k: usize, seed: u64) -> Self {
        Self { grades_per_submission: k, seed, clip_to_unit: false, ..Self::default() }
    }

    /// As [`Self::fig1_left`] with Weibull truth and 20 uniform-random graders.
    pub fn fig1_right(k: usize, seed: u64) -> Self {
        Self { truth_model: TruthModel::SKEWED, n_random_graders: 20, ..Self::fig1_left(k, seed) }
    }

    /// One exercise, k = 6.
    pub fn fig2_left(seed: u64) -> Self {
        Self { n_exercises: 1, ..Self::fig1_left(6, seed) }
    }

    pub fn fig2_right(seed: u64) -> Self {
        Self { n_exercises: 1, ..Self::fig1_right(6, seed) }
    }

    /// Course-shaped data: 79 groups of up to three among 219 students, 19
    /// exercises, self and peer grades, TA truth.
    pub fn ad_shaped(seed: u64) -> Self {
        Self {
            n_submissions: 79,
            n_graders: 219,
            n_exercises: 19,
            grades_per_submission: 6,
            seed,
            truth_model: TruthModel::Normal { mean: 0.65, sd: 0.25 },
            max_group_size: 3,
            self_grades: true,
            self_bias: 0.1,
            n_tas: 6,
            clip_to_unit: true,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.n_submissions == 0 || self.n_graders == 0 || self.n_exercises == 0 {
            return bad("n_submissions, n_graders and n_exercises must be positive");
        }
        if self.grades_per_submission == 0 {
            return bad("grades_per_submission must be at least 1");
        }
        if self.n_random_graders > self.n_graders {
            return bad("n_random_graders exceeds n_graders");
        }
        if self.max_group_size == 0 {
            return bad("max_group_size must be at least 1");
        }
        if !(self.bias_sd >= 0.0 && self.bias_sd.is_finite()) {
            return bad("bias_sd must be finite and non-negative");
        }
        let GammaPrior { shape, rate } = self.reliability_prior;
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return bad("reliability prior needs positive shape and rate");
        }
        if self.fixed_reliability.is_some_and(|r| !(r > 0.0)) {
            return bad("fixed_reliability must be positive");
        }
        match self.truth_model {
            TruthModel::Normal { sd, .. } if !(sd >= 0.0) => return bad("truth sd must be non-negative"),
            TruthModel::Weibull { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                return bad("Weibull shape and scale must be positive")
            }
            _ => {}
        }
        Ok(())
    }
}

/// A grader's generating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedGrader {
    pub bias: f64,
    pub reliability: f64,
    pub random: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: TruthSet,
    /// Grader parameters; with `redraw_per_exercise` these are the first
    /// exercise's draws.
    pub graders: BTreeMap<GraderId, PlantedGrader>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `base_seed`: `base_seed ^ splitmix64(index)`.
///
/// The splitmix64 finalizer is a bijection on `u64`, so distinct indices
/// always give distinct seeds for a fixed base.
pub fn replicate_seed(base_seed: u64, replicate_index: u64) -> u64 {
    base_seed ^ splitmix64(replicate_index)
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)))
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

pub fn exercise_id(e: usize, n: usize) -> ExerciseId {
    format!("x{e:0w$}", w = width(n)).into()
}

pub fn submission_id(e: usize, i: usize, n_ex: usize, n_sub: usize) -> SubmissionId {
    format!("x{e:0we$}-s{i:0ws$}", we = width(n_ex), ws = width(n_sub)).into()
}

pub fn grader_id(j: usize, n: usize) -> GraderId {
    format!("g{j:0w$}", w = width(n)).into()
}

fn draw_truth<R: Rng>(model: TruthModel, rng: &mut R) -> f64 {
    match model {
        TruthModel::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
        TruthModel::Weibull { shape, scale } => Weibull::new(scale, shape).expect("validated").sample(rng),
    }
}

fn draw_grader<R: Rng>(cfg: &GeneratorConfig, random: bool, rng: &mut R) -> PlantedGrader {
    let bias = if cfg.bias_sd > 0.0 { Normal::new(0.0, cfg.bias_sd).expect("validated").sample(rng) } else { 0.0 };
    let GammaPrior { shape, rate } = cfg.reliability_prior;
    let drawn = Gamma::new(shape, 1.0 / rate).expect("validated").sample(rng);
    PlantedGrader { bias, reliability: cfg.fixed_reliability.unwrap_or(drawn), random }
}

/// Generates a dataset, its true scores and the planted grader parameters.
pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticData, SynthError> {
    cfg.validate()?;
    let (n_sub, n_gr, n_ex, k) = (cfg.n_submissions, cfg.n_graders, cfg.n_exercises, cfg.grades_per_submission);

    // Grader j belongs to group j mod n_sub while that group has room.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
    for j in 0..n_gr.min(n_sub * cfg.max_group_size) {
        members[j % n_sub].push(j);
    }
    let largest = members.iter().map(Vec::len).max().unwrap_or(0);
    let available = n_gr - largest;
    if k > available {
        return Err(SynthError::InfeasibleAssignment { k, available });
    }

    let exercises: Vec<ExerciseId> = (0..n_ex).map(|e| exercise_id(e, n_ex)).collect();
    let graders: Vec<GraderId> = (0..n_gr).map(|j| grader_id(j, n_gr)).collect();
    let is_random = |j: usize| j >= n_gr - cfg.n_random_graders;

    let mut truth_rng = stream(cfg.seed, 1);
    let mut grader_rng = stream(cfg.seed, 2);
    let mut obs_rng = stream(cfg.seed, 3 ^ ((k as u64) << 32));

    let clip = |v: f64| if cfg.clip_to_unit { v.clamp(0.0, 1.0) } else { v };

    let mut truth = TruthSet::new(TruthSource::Synthetic);
    let mut true_scores: Vec<Vec<f64>> = Vec::with_capacity(n_ex);
    for (e, ex) in exercises.iter().enumerate() {
        let scores: Vec<f64> = (0..n_sub).map(|_| clip(draw_truth(cfg.truth_model, &mut truth_rng))).collect();
        for (i, &t) in scores.iter().enumerate() {
            truth.insert(ex.clone(), submission_id(e, i, n_ex, n_sub), t);
        }
        true_scores.push(scores);
    }

    let base: Vec<PlantedGrader> = (0..n_gr).map(|j| draw_grader(cfg, is_random(j), &mut grader_rng)).collect();
    let per_exercise: Vec<Vec<PlantedGrader>> = (0..n_ex)
        .map(|e| {
            if cfg.redraw_per_exercise && e > 0 {
                (0..n_gr).map(|j| draw_grader(cfg, is_random(j), &mut grader_rng)).collect()
            } else {
                base.clone()
            }
        })
        .collect();

    let mut b = DatasetBuilder::new();
    b.max_group_size(cfg.max_group_size);
    for ex in &exercises {
        b.add_exercise(ex.clone(), 1.0);
    }

    let unit = Uniform::new_inclusive(0.0, 1.0).expect("valid range");
    let noise = |p: &PlantedGrader, t: f64, offset: f64, rng: &mut ChaCha8Rng| -> f64 {
        if p.random {
            unit.sample(rng)
        } else {
            let sd = (1.0 / p.reliability).sqrt();
            clip(Normal::new(t + p.bias + offset, sd).expect("finite sd").sample(rng))
        }
    };

    let tas: Vec<GraderId> = (0..cfg.n_tas).map(|t| format!("ta{t}").into()).collect();

    for (e, ex) in exercises.iter().enumerate() {
        let params = &per_exercise[e];
        for (i, group) in members.iter().enumerate() {
            let sid = submission_id(e, i, n_ex, n_sub);
            b.add_submission(sid.clone(), ex.clone());
            for &j in group {
                b.add_member(sid.clone(), graders[j].clone());
            }
        }

        // Balanced assignment: each slot goes to the least-loaded eligible
        // grader, ties broken by a per-exercise random priority.
        let mut priority: Vec<usize> = (0..n_gr).collect();
        priority.shuffle(&mut obs_rng);
        let mut rank = vec![0usize; n_gr];
        for (r, &j) in priority.iter().enumerate() {
            rank[j] = r;
        }
        let mut order: Vec<usize> = (0..n_sub).collect();
        order.shuffle(&mut obs_rng);
        let mut load = vec![0usize; n_gr];
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
        for &i in &order {
            let group: BTreeSet<usize> = members[i].iter().copied().collect();
            let mut eligible: Vec<usize> = (0..n_gr).filter(|j| !group.contains(j)).collect();
            eligible.sort_by_key(|&j| (load[j], rank[j]));
            for &j in eligible.iter().take(k) {
                load[j] += 1;
                assigned[i].push(j);
            }
            // rotate priorities so ties do not always favour the same graders
            priority.rotate_left(1);
            for (r, &j) in priority.iter().enumerate() {
                rank[j] = r;
            }
        }

        for i in 0..n_sub {
            let sid = submission_id(e, i, n_ex, n_sub);
            let t = true_scores[e][i];
            assigned[i].sort_unstable();
            for &j in &assigned[i] {
                let value = noise(&params[j], t, 0.0, &mut obs_rng);
                b.add_grade(CardinalGrade {
                    exercise: ex.clone(),
                    submission: sid.clone(),
                    grader: graders[j].clone(),
                    role: GradeRole::PeerGrade,
                    value,
                });
            }
            if cfg.self_grades {
                for &j in &members[i] {
                    let value = noise(&params[j], t, cfg.self_bias, &mut obs_rng);
                    b.add_grade(CardinalGrade {
                        exercise: ex.clone(),
                        submission: sid.clone(),
                        grader: graders[j].clone(),
                        role: GradeRole::SelfGrade,
                        value,
                    });
                }
            }
            if !tas.is_empty() {
                let ta = &tas[obs_rng.random_range(0..tas.len())];
                b.add_grade(CardinalGrade {
                    exercise: ex.clone(),
                    submission: sid.clone(),
                    grader: ta.clone(),
                    role: GradeRole::TaGrade,
                    value: t,
                });
            }
        }
    }

    if cfg.exam_from_reliability {
        for (j, g) in graders.iter().enumerate() {
            let r = per_exercise.iter().map(|p| p[j].reliability).sum::<f64>() / n_ex as f64;
            b.add_exam(g.clone(), r);
        }
    }

    let dataset = b.build().map_err(|e| SynthError::Config(format!("generated data failed validation: {e}")))?;
    let planted = graders.into_iter().zip(base).collect();
    Ok(SyntheticData { dataset, truth, graders: planted })
}

/// Adds independent N(0, noise_sd²) noise to every true score.
pub fn perturb_truth(truth: &TruthSet, noise_sd: f64, seed: u64) -> TruthSet {
    if noise_sd <= 0.0 {
        return truth.clone();
    }
    let mut rng = stream(seed, 4);
    let normal = Normal::new(0.0, noise_sd).expect("positive sd");
    TruthSet {
        scores: truth.scores.iter().map(|(k, v)| (k.clone(), v + normal.sample(&mut rng))).collect(),
        source: truth.source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use crate::data::RoleSet;

    fn small(k: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig { n_submissions: 20, n_graders: 20, n_exercises: 2, ..GeneratorConfig::fig1_left(k, seed) }
    }

    #[test]
    fn replicate_seeds_are_distinct_and_stable() {
        let seeds: HashSet<u64> = (0..100).map(|i| replicate_seed(42, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(replicate_seed(42, 7), replicate_seed(42, 7));
        for s in [0u64, 1, u64::MAX, 0xDEAD_BEEF] {
            assert_ne!(replicate_seed(s, 0), replicate_seed(s, 1));
        }
    }

    #[test]
    fn exactly_k_peer_grades_and_balanced_loads() {
        for (n_sub, n_gr, k) in [(20, 20, 3), (30, 17, 4), (10, 25, 6)] {
            let cfg = GeneratorConfig { n_submissions: n_sub, n_graders: n_gr, ..small(k, 5) };
            let data = generate(&cfg).unwrap();
            let mut per_sub: BTreeMap<&SubmissionId, usize> = BTreeMap::new();
            let mut load: BTreeMap<(&ExerciseId, &GraderId), usize> = BTreeMap::new();
            for g in data.dataset.grades_with_roles(RoleSet::PEER) {
                *per_sub.entry(&g.submission).or_default() += 1;
                *load.entry((&g.exercise, &g.grader)).or_default() += 1;
                assert!(!data.dataset.is_member(&g.grader, &g.submission));
            }
            assert_eq!(per_sub.len(), n_sub * cfg.n_exercises);
            assert!(per_sub.values().all(|&c| c == k));
            let mean = (n_sub * k) as f64 / n_gr as f64;
            let slack = if (n_sub * k) % n_gr == 0 { 1.0 } else { 2.0 };
            for e in data.dataset.exercise_ids() {
                for g in data.dataset.graders() {
                    let l = load.get(&(e, &g)).copied().unwrap_or(0) as f64;
                    assert!((l - mean).abs() <= slack, "load {l} vs mean {mean}");
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small(3, 9)).unwrap();
        let b = generate(&small(3, 9)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&small(3, 10)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn truth_and_graders_shared_across_k() {
        let a = generate(&small(2, 3)).unwrap();
        let b = generate(&small(5, 3)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.graders, b.graders);
    }

    #[test]
    fn noise_free_limit() {
        let cfg = GeneratorConfig { bias_sd: 0.0, fixed_reliability: Some(1e9), ..small(1, 1) };
        let data = generate(&cfg).unwrap();
        for g in data.dataset.grades() {
            let t = data.truth.get(&g.exercise, &g.submission).unwrap();
            assert!((g.value - t).abs() < 1e-4);
        }
    }

    #[test]
    fn infeasible_assignment() {
        let cfg = GeneratorConfig { n_graders: 10, ..small(200, 1) };
        assert!(matches!(generate(&cfg), Err(SynthError::InfeasibleAssignment { k: 200, available: 9 })));
    }

    #[test]
    fn clipping_modes() {
        let wide = GeneratorConfig { truth_model: TruthModel::Normal { mean: 0.5, sd: 1.0 }, ..small(3, 2) };
        let unclipped = generate(&wide).unwrap();
        assert!(unclipped.dataset.grades().iter().any(|g| !(0.0..=1.0).contains(&g.value)));
        assert!(unclipped.truth.scores.values().any(|t| !(0.0..=1.0).contains(t)));
        let clipped = generate(&GeneratorConfig { clip_to_unit: true, ..wide }).unwrap();
        assert!(clipped.dataset.grades().iter().all(|g| (0.0..=1.0).contains(&g.value)));
        assert!(clipped.truth.scores.values().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn random_graders_report_unit_uniform() {
        let cfg = GeneratorConfig { n_random_graders: 5, ..small(4, 8) };
        let data = generate(&cfg).unwrap();
        let random: Vec<_> = data.graders.iter().filter(|(_, p)| p.random).map(|(g, _)| g.clone()).collect();
        assert_eq!(random.len(), 5);
        for g in data.dataset.grades().iter().filter(|g| random.contains(&g.grader)) {
            assert!((0.0..=1.0).contains(&g.value));
        }
    }

    #[test]
    fn perturb_truth_identity_and_determinism() {
        let t = generate(&small(1, 4)).unwrap().truth;
        assert_eq!(perturb_truth(&t, 0.0, 1), t);
        assert_eq!(perturb_truth(&t, 0.1, 1), perturb_truth(&t, 0.1, 1));
        assert_ne!(perturb_truth(&t, 0.1, 1), perturb_truth(&t, 0.1, 2));
    }

    #[test]
    fn course_shaped_groups_and_roles() {
        let data = generate(&GeneratorConfig::ad_shaped(1)).unwrap();
        let d = &data.dataset;
        assert_eq!(d.exercises().len(), 19);
        assert_eq!(d.submissions().len(), 79 * 19);
        assert!(d.groups().values().all(|g| (1..=3).contains(&g.len())));
        let ta = d.ta_truth();
        assert_eq!(ta.scores, data.truth.scores);
        assert!(d.grades().iter().any(|g| g.role == GradeRole::SelfGrade));
    }
}
