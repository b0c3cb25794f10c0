use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_vacalc");

const SPEC: &str = r#"
causes = ["injury", "cardio", "other"]
n_hospital = 600
n_population = 600
hospital_pd = [0.5, 0.3, 0.2]
population_pd = [0.2, 0.3, 0.5]
conditionals = [
  [0.8, 0.2, 0.6, 0.3, 0.7, 0.4, 0.5, 0.2],
  [0.3, 0.7, 0.2, 0.6, 0.4, 0.8, 0.3, 0.5],
  [0.5, 0.4, 0.3, 0.8, 0.2, 0.3, 0.7, 0.6],
]
missing_rate = 0.05
violation = 0.0
"#;

fn vacalc(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vacalc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn simulated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    ok(dir.path(), &["simulate", "--spec", "spec.toml", "--seed", "11", "--out-dir", "sim", "--members", "10"]);
    dir
}

fn read(dir: &Path, p: &str) -> Vec<u8> {
    fs::read(dir.join(p)).unwrap_or_else(|e| panic!("{p}: {e}"))
}

const PAIR: [&str; 4] = ["--hospital", "sim/hospital.csv", "--population", "sim/population.csv"];

#[test]
fn same_seed_same_bytes() {
    let dir = simulated();
    let d = dir.path();
    for out in ["a", "b"] {
        let mut args = vec!["estimate", "--seed", "7", "--bootstrap", "50", "--n-subsets", "30", "--out-dir", out];
        args.extend(PAIR);
        ok(d, &args);
    }
    for f in ["estimate.csv", "estimate.txt", "manifest.toml"] {
        assert_eq!(read(d, &format!("a/{f}")), read(d, &format!("b/{f}")), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = simulated();
    let d = dir.path();
    for (t, out) in [("1", "t1"), ("4", "t4")] {
        let mut args = vec!["--threads", t, "estimate", "--seed", "3", "--bootstrap", "50", "--out-dir", out];
        args.extend(PAIR);
        ok(d, &args);
        let mut args = vec!["--threads", t, "classify", "--seed", "3", "--members", "10", "--out-dir", out];
        args.extend(PAIR);
        ok(d, &args);
    }
    for f in ["estimate.csv", "posteriors.csv"] {
        assert_eq!(read(d, &format!("t1/{f}")), read(d, &format!("t4/{f}")), "{f}");
    }
}

#[test]
fn population_labels_need_validation_mode() {
    let dir = simulated();
    let d = dir.path();
    let args = ["estimate", "--seed", "1", "--hospital", "sim/hospital.csv", "--population", "sim/population_truth.csv"];
    let out = vacalc(d, &[&args[..], &["--out-dir", "x"]].concat());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("population_truth.csv") && err.contains("validation"), "{err}");
    ok(d, &[&args[..], &["--out-dir", "x", "--validation-mode"]].concat());
}

#[test]
fn fixed_cause_is_honored() {
    let dir = simulated();
    let d = dir.path();
    let mut args = vec!["estimate", "--seed", "2", "--fix-cause", "injury=0.1", "--out-dir", "fx"];
    args.extend(PAIR);
    ok(d, &args);
    let csv = String::from_utf8(read(d, "fx/estimate.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("injury,")).unwrap();
    let p: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(p, 0.1);
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let mut bad = vec!["estimate", "--seed", "2", "--fix-cause", "nosuch=0.1", "--out-dir", "fx"];
    bad.extend(PAIR);
    assert_eq!(vacalc(d, &bad).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(vacalc(d, &["estimate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(vacalc(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(vacalc(d, &["simulate", "--out-dir", "o"]).status.code(), Some(2));
    assert_eq!(vacalc(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = vacalc(dir.path(), &["estimate", "--seed", "1", "--hospital", "nope.csv", "--population", "nope.csv", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn parse_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("h.csv"), "cause,s1,s2\na,1,0\nb,0,7\n").unwrap();
    let out = vacalc(d, &["estimate", "--seed", "1", "--hospital", "h.csv", "--population", "h.csv", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("h.csv") && err.contains("line 3"), "{err}");
}

#[test]
fn manifest_replays_the_run() {
    let dir = simulated();
    let d = dir.path();
    let mut args = vec!["estimate", "--seed", "5", "--subset-size", "4", "--n-subsets", "25", "--out-dir", "m1"];
    args.extend(PAIR);
    ok(d, &args);
    ok(d, &["estimate", "--config", "m1/manifest.toml", "--out-dir", "m2"]);
    assert_eq!(read(d, "m1/estimate.csv"), read(d, "m2/estimate.csv"));
    // explicit flags win over the manifest
    ok(d, &["estimate", "--config", "m1/manifest.toml", "--seed", "6", "--out-dir", "m3"]);
    assert_ne!(read(d, "m1/estimate.csv"), read(d, "m3/estimate.csv"));
    // a manifest for another command is refused
    assert_eq!(vacalc(d, &["baseline", "--config", "m1/manifest.toml", "--out-dir", "m4"]).status.code(), Some(2));
}

#[test]
fn select_b_writes_scores() {
    let dir = simulated();
    let d = dir.path();
    let mut args = vec!["estimate", "--seed", "4", "--select-B", "2,4,6", "--folds", "3", "--n-subsets", "20", "--out-dir", "s"];
    args.extend(PAIR);
    ok(d, &args);
    let table = String::from_utf8(read(d, "s/select_b.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let manifest = String::from_utf8(read(d, "s/manifest.toml")).unwrap();
    assert!(manifest.contains("selected_subset_size"));
}

#[test]
fn refuses_to_overwrite_inputs() {
    let dir = simulated();
    let d = dir.path();
    fs::copy(d.join("sim/hospital.csv"), d.join("sim/estimate.csv")).unwrap();
    let out = vacalc(d, &["estimate", "--seed", "1", "--hospital", "sim/estimate.csv", "--population", "sim/population.csv", "--out-dir", "sim"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(read(d, "sim/estimate.csv"), read(d, "sim/hospital.csv"));
}

#[test]
fn baseline_has_one_row_per_cause() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--preset", "china-shaped", "--seed", "1", "--out-dir", "cn"]);
    assert!(!d.join("cn/population.csv").exists());
    let out = ["baseline", "--seed", "1", "--hospital", "cn/hospital.csv", "--population", "cn/hospital.csv"];
    ok(d, &[&out[..], &["--validation-mode", "--out-dir", "bl"]].concat());
    let tsv = String::from_utf8(read(d, "bl/baseline.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 1 + 13 + 1);
    assert!(lines[14].starts_with("sum\t"));
}

#[test]
fn validate_and_classify_outputs() {
    let dir = simulated();
    let d = dir.path();
    ok(d, &["validate", "--hospital", "sim/hospital.csv", "--protocol", "split", "--seed", "9", "--bootstrap", "50", "--out-dir", "v"]);
    for f in ["validation.txt", "scatter.csv", "difference.csv", "manifest.toml"] {
        assert!(d.join("v").join(f).exists(), "{f}");
    }
    let mut args = vec!["classify", "--seed", "9", "--members", "10", "--out-dir", "c"];
    args.extend(PAIR);
    ok(d, &args);
    let post = String::from_utf8(read(d, "c/posteriors.csv")).unwrap();
    assert_eq!(post.lines().count(), 601);
    assert!(post.lines().next().unwrap().ends_with(",map_cause,fallback"));
    // a supplied distribution is used as is
    ok(d, &[&["classify", "--seed", "9", "--members", "10", "--p-hat", "c/p_hat.csv", "--out-dir", "c2"][..], &PAIR].concat());
    assert_eq!(read(d, "c/posteriors.csv"), read(d, "c2/posteriors.csv"));
}
