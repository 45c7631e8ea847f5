use std::collections::BTreeSet;

use peergrade::cardinal::{self, EmConfig, Hyperparams};
use peergrade::data::{induce_ballots, load_dataset, save_dataset};
use peergrade::metrics::{kendall_tau_error, per_exercise_errors, Metric};
use peergrade::ordinal::{self, LatentPrior, OrdinalConfig};
use peergrade::supervised::{self, TrainTestSplit};
use peergrade::synth::{generate, replicate_seed, GeneratorConfig};
use peergrade::{Format, RoleSet};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn smt_anchors_tighten_with_ta_reliability() {
    let levels = [10.0, 100.0, 1000.0];
    let mut errors = vec![Vec::new(); levels.len()];
    for r in 0..7 {
        let cfg = GeneratorConfig { n_submissions: 40, n_graders: 40, n_exercises: 2, ..GeneratorConfig::fig1_left(4, replicate_seed(5, r)) };
        let data = generate(&cfg).unwrap();
        let split = TrainTestSplit::stratified(data.truth.scores.keys().cloned(), 0.5, r).unwrap();
        for (slot, &ta) in levels.iter().enumerate() {
            let fit = supervised::smt_fit(&data.dataset, &data.truth, &split.train, RoleSet::PEER, &Hyperparams::default(), ta, &EmConfig::default())
                .unwrap();
            let anchored = fit.restrict(|e, s| split.train.contains(&(e.clone(), s.clone())));
            let errs = per_exercise_errors(&anchored.scores, &data.truth, Metric::L2).unwrap();
            errors[slot].push(errs.values.values().sum::<f64>() / errs.values.len() as f64);
        }
    }
    let medians: Vec<f64> = errors.into_iter().map(median).collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn shifting_the_prior_mean_keeps_the_order() {
    let data = generate(&GeneratorConfig::fig2_left(3)).unwrap();
    let ballots = induce_ballots(&data.dataset, RoleSet::PEER);
    let e = data.dataset.exercise_ids().next().unwrap().clone();
    for fit in [ordinal::bt_fit, ordinal::thurstone_fit] {
        let base = OrdinalConfig::default();
        let a = fit(&ballots, &base).unwrap().exercise_latent(&e);
        let shifted = OrdinalConfig { prior: LatentPrior { mean: base.prior.mean + 3.0, ..base.prior }, ..base };
        let b = fit(&ballots, &shifted).unwrap().exercise_latent(&e);
        assert_eq!(kendall_tau_error(&a, &b).unwrap(), 0.0);
        for (s, v) in &a {
            assert!((b[s] - v - 3.0).abs() < 1e-6, "latent of {s} moved by {}", b[s] - v);
        }
    }
}

#[test]
fn stored_datasets_fit_like_fresh_ones() {
    let data = generate(&GeneratorConfig { n_submissions: 30, n_graders: 30, n_exercises: 2, ..GeneratorConfig::ad_shaped(4) }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for (format, path) in [(Format::Csv, tmp.path().join("d")), (Format::Json, tmp.path().join("d.json"))] {
        save_dataset(&data.dataset, &path, format).unwrap();
        let back = load_dataset(&path, format).unwrap();
        let (h, em) = (Hyperparams::default(), EmConfig::default());
        let fresh = cardinal::umt_fit(&data.dataset, RoleSet::SELF_PEER, &h, &em).unwrap();
        let loaded = cardinal::umt_fit(&back, RoleSet::SELF_PEER, &h, &em).unwrap();
        assert_eq!(fresh, loaded);
    }
}

#[test]
fn model_based_fits_beat_the_mean_on_model_data() {
    let data = generate(&GeneratorConfig::fig1_left(5, 11)).unwrap();
    let (h, em) = (Hyperparams::default(), EmConfig::default());
    let err = |fit: cardinal::ModelFit| {
        let e = per_exercise_errors(&fit.scores, &data.truth, Metric::L2).unwrap();
        e.values.values().sum::<f64>() / e.values.len() as f64
    };
    let mean = err(cardinal::mean_estimate(&data.dataset, RoleSet::PEER).unwrap());
    let umt = err(cardinal::umt_fit(&data.dataset, RoleSet::PEER, &h, &em).unwrap());
    let ust = err(cardinal::merge_exercise_fits(&cardinal::ust_fit_all(&data.dataset, RoleSet::PEER, &h, &em).unwrap()));
    assert!(umt < mean && ust < mean, "mean {mean} ust {ust} umt {umt}");
}

#[test]
fn sn_is_scored_on_held_out_submissions_only() {
    let data = generate(&GeneratorConfig { n_exercises: 2, n_submissions: 30, n_graders: 30, ..GeneratorConfig::fig1_left(4, 2) }).unwrap();
    let split = TrainTestSplit::stratified(data.truth.scores.keys().cloned(), 0.5, 9).unwrap();
    let fit = supervised::sn_estimate(&data.dataset, &data.truth, &split, RoleSet::PEER, supervised::BiasScope::Global).unwrap();
    let keys: BTreeSet<_> = fit.scores.keys().cloned().collect();
    assert_eq!(keys, split.test);
}
