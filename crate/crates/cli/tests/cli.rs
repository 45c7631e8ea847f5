use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peergrade::data::{csv_io, load_dataset, save_dataset};
use peergrade::fitfile::FitFile;
use peergrade::synth::GeneratorConfig;
use peergrade::{CardinalGrade, Dataset, Format, GradeRole, TruthSet, TruthSource};
use serde_json::Value;

fn peergrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peergrade")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two peers grading three submissions; peer means equal the TA grades.
fn tiny(dir: &Path) -> PathBuf {
    let mut b = Dataset::builder();
    b.add_exercise("e1", 1.0);
    let rows = [
        ("a", "g1", GradeRole::PeerGrade, 0.25),
        ("b", "g1", GradeRole::PeerGrade, 0.5),
        ("c", "g1", GradeRole::PeerGrade, 0.125),
        ("a", "g2", GradeRole::PeerGrade, 0.75),
        ("b", "g2", GradeRole::PeerGrade, 1.0),
        ("c", "g2", GradeRole::PeerGrade, 0.375),
        ("a", "t1", GradeRole::TaGrade, 0.5),
        ("b", "t1", GradeRole::TaGrade, 0.75),
        ("c", "t1", GradeRole::TaGrade, 0.25),
    ];
    for (sub, grader, role, value) in rows {
        b.add_grade(CardinalGrade { exercise: "e1".into(), submission: sub.into(), grader: grader.into(), role, value });
    }
    let d = b.build().unwrap();
    let path = dir.join("tiny");
    save_dataset(&d, &path, Format::Csv).unwrap();
    csv_io::save_truth(&d.ta_truth(), &dir.join("truth.csv")).unwrap();
    path
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_loadable_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = peergrade(&["generate", "--protocol", "fig1-left", "--k", "6", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));

    let d = load_dataset(&a, Format::Csv).unwrap();
    let truth = csv_io::load_truth(&a.join("truth.csv"), TruthSource::Synthetic).unwrap();
    assert_eq!(truth.len(), d.submissions().len());
    let cfg: GeneratorConfig = serde_json::from_slice(&std::fs::read(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg, GeneratorConfig::fig1_left(6, 7));
    assert_eq!(d.grades().len(), 6 * d.submissions().len());
}

#[test]
fn generate_json_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let o = peergrade(&["generate", "--protocol", "fig2-left", "--format", "json", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = load_dataset(&tmp.path().join("dataset.json"), Format::Json).unwrap();
    assert_eq!(d.exercises().len(), 1);
}

#[test]
fn generate_infeasible_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = peergrade(&["generate", "--k", "200", "--graders", "10", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("infeasible assignment"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(peergrade(&["experiment", "--protocol", "fig7"]).status.code(), Some(2));
    assert_eq!(peergrade(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(peergrade(&["fit", "--model", "mean"]).status.code(), Some(2));
    assert_eq!(peergrade(&["bogus"]).status.code(), Some(2));
}

#[test]
fn fit_mean_matches_hand_means() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny(tmp.path());
    let out = tmp.path().join("fit.json");
    let o = peergrade(&["fit", "--data", s(&data), "--model", "mean", "--roles", "peer", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged: true"));
    let f = FitFile::load(&out).unwrap();
    let got: Vec<f64> = f.fit.scores.values().copied().collect();
    assert_eq!(got, vec![0.5, 0.75, 0.25]);
}

#[test]
fn bt_on_self_grades_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ad");
    let o = peergrade(&["generate", "--protocol", "real-data-eval", "--exercises", "2", "--out", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = peergrade(&["fit", "--data", s(&dir), "--model", "bt", "--roles", "self", "--out", s(&tmp.path().join("f.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("self grades induce no rankings"), "{}", stderr(&o));
}

#[test]
fn hyperparameters_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(peergrade(&["generate", "--submissions", "20", "--graders", "20", "--exercises", "1", "--out", s(&data)]).status.success());
    let h = tmp.path().join("h.json");
    std::fs::write(&h, r#"{"bias_var": 0.01, "rel_shape": 4.0}"#).unwrap();
    let out = tmp.path().join("fit.json");
    let o = peergrade(&["fit", "--data", s(&data), "--model", "umt", "--hyper-file", s(&h), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["hyper"]["bias_var"], 0.01);
    assert_eq!(v["hyper"]["rel_shape"], 4.0);
    assert_eq!(v["hyper"]["score_prior"]["kind"], "empirical");

    std::fs::write(&h, r#"{"bias_var": -1}"#).unwrap();
    let o = peergrade(&["fit", "--data", s(&data), "--model", "umt", "--hyper-file", s(&h), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_model_fits_course_shaped_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ad");
    let cfg = tmp.path().join("g.json");
    std::fs::write(&cfg, r#"{"exam_from_reliability": true}"#).unwrap();
    let o = peergrade(&["generate", "--protocol", "real-data-eval", "--exercises", "2", "--generator-file", s(&cfg), "--out", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = dir.join("truth.csv");
    for model in ["mean", "median", "ust", "umt", "borda", "bt", "thurstone", "pl", "sn", "smt", "exam-direct", "exam-hybrid"] {
        let out = tmp.path().join(format!("{model}.json"));
        let mut args = vec!["fit", "--data", s(&dir), "--model", model, "--roles", "self,peer", "--out", s(&out)];
        if matches!(model, "sn" | "smt") {
            args.extend(["--truth", s(&truth), "--train-fraction", "0.5"]);
        }
        let o = peergrade(&args);
        assert!(o.status.success(), "{model}: {}", stderr(&o));
        let f = FitFile::load(&out).unwrap();
        assert!(!f.fit.scores.is_empty(), "{model}");
        assert!(f.fit.scores.values().all(|v| v.is_finite()), "{model}");
    }
}

#[test]
fn evaluate_perfect_fit_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny(tmp.path());
    let fit = tmp.path().join("fit.json");
    assert!(peergrade(&["fit", "--data", s(&data), "--model", "mean", "--out", s(&fit)]).status.success());
    let o = peergrade(&["evaluate", "--fit", s(&fit), "--truth", s(&tmp.path().join("truth.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "exercise,metric,value\nall,l2,0\nall,kendall,0\n");
}

#[test]
fn evaluate_rejects_mismatched_submissions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny(tmp.path());
    let fit = tmp.path().join("fit.json");
    assert!(peergrade(&["fit", "--data", s(&data), "--model", "mean", "--out", s(&fit)]).status.success());
    let mut t = TruthSet::new(TruthSource::Ta);
    t.insert("e1".into(), "a".into(), 0.5);
    t.insert("e1".into(), "z".into(), 0.5);
    let truth = tmp.path().join("other.csv");
    csv_io::save_truth(&t, &truth).unwrap();
    let o = peergrade(&["evaluate", "--fit", s(&fit), "--truth", s(&truth)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_per_exercise_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(peergrade(&["generate", "--submissions", "15", "--graders", "15", "--exercises", "3", "--out", s(&data)]).status.success());
    let fit = tmp.path().join("fit.json");
    assert!(peergrade(&["fit", "--data", s(&data), "--model", "median", "--out", s(&fit)]).status.success());
    let table = tmp.path().join("m.csv");
    let o = peergrade(&[
        "evaluate", "--fit", s(&fit), "--truth", s(&data.join("truth.csv")), "--metric", "kendall", "--per-exercise", "--out", s(&table),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 3);
    assert_eq!(std::fs::read_to_string(&table).unwrap(), stdout(&o));
}

#[test]
fn experiment_csv_is_reproducible_across_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let out = tmp.path().join(name);
        let o = peergrade(&[
            "experiment", "--protocol", "fig1-left", "--replicates", "3", "--seed", "1", "--k", "2,5", "--jobs", jobs, "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(read_dir_bytes(&out));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let csv = String::from_utf8(outputs[0].iter().find(|(n, _)| n == "report.csv").unwrap().1.clone()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), peergrade::experiments::REPORT_HEADER);
}

#[test]
fn config_file_fills_missing_flags_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    let out = tmp.path().join("e");
    std::fs::write(&cfg, format!(r#"{{"protocol": "fig2-left", "replicates": 2, "seed": 9, "out": "{}"}}"#, s(&out))).unwrap();
    let o = peergrade(&["--config", s(&cfg), "experiment", "--replicates", "1", "--estimators", "mean,borda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: Value = serde_json::from_slice(&std::fs::read(out.join("report_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["replicates"], 1);
    assert_eq!(meta["base_seed"], 9);
    assert_eq!(meta["spec"]["protocol"], "fig2-left");

    std::fs::write(&cfg, r#"{"replicatez": 2}"#).unwrap();
    let o = peergrade(&["--config", s(&cfg), "experiment", "--protocol", "fig2-left"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_tiny_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny(tmp.path());
    let o = peergrade(&["analyze", "--data", s(&data), "--format", "json", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("analysis.json")).unwrap()).unwrap();
    let graders = v["graders"].as_array().unwrap();
    assert_eq!(graders.len(), 2);
    let g1 = &graders[0];
    assert_eq!(g1["grader"], "g1");
    // own grade minus the other peer's grade: -1/2, -1/2, -1/4
    approx::assert_abs_diff_eq!(g1["peer_relative_bias"].as_f64().unwrap(), -5.0 / 12.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(g1["peer_relative_variance"].as_f64().unwrap(), 1.0 / 48.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(g1["truth_bias"].as_f64().unwrap(), -0.625 / 3.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(g1["mean_given_grade"].as_f64().unwrap(), 0.875 / 3.0, epsilon = 1e-12);
    assert_eq!(g1["support"], 3);
    assert!(g1["exam"].is_null());
    for key in ["r_exam_homework", "r_exam_bias", "r_exam_deviation"] {
        assert!(v["correlations"][key].is_null(), "{key}");
    }

    let o = peergrade(&["analyze", "--data", s(&data), "--format", "csv", "--out", s(tmp.path())]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("analysis.csv")).unwrap();
    assert!(csv.starts_with("section,id,statistic,value\n"));
    assert!(csv.contains("grader,g1,support,3\n"));
}
