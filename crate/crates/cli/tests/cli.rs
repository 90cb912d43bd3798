use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blbvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blbvs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--simulate",
        "default",
        "--n",
        "600",
        "--r",
        "8",
        "--lambda",
        "0.02",
        "--seed",
        "5",
        "--out",
    ];
    let out = out.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    blbvs(&args)
}

fn validator() -> jsonschema::Validator {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(path: &Path) {
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let v = validator();
    let errors: Vec<String> = v.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", path.display());
}

#[test]
fn reports_match_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path(), &["--method", "both", "--bootvs-r", "12"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for method in ["blbvs", "bootvs"] {
        let sub = dir.path().join(method);
        assert_valid(&sub.join("report.json"));
        let props = fs::read_to_string(sub.join("proportions.csv")).unwrap();
        assert!(props.starts_with("group,p_g,selected\n"));
        assert_eq!(props.lines().count(), 9);
        let traj = fs::read_to_string(sub.join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("seconds,metric,value\n"));
    }
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap())
            .unwrap();
    assert!(cmp["same_selection"].is_boolean());

    let tuned = tempfile::tempdir().unwrap();
    let out = blbvs(&[
        "run",
        "--simulate",
        "default",
        "--n",
        "300",
        "--r",
        "4",
        "--tune-per-subset",
        "--path-len",
        "8",
        "--folds",
        "3",
        "--truth",
        "3",
        "--lambda-rule",
        "1se",
        "--out",
        tuned.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_valid(&tuned.path().join("report.json"));
    let traj = fs::read_to_string(tuned.path().join("trajectory.csv")).unwrap();
    assert!(traj.contains(",rd,"));
}

#[test]
fn printed_schema_is_the_published_one() {
    let out = blbvs(&["schema"]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        include_str!("../schema/report.schema.json")
    );
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        small_run(dir.path(), &["--gamma", "1.5"]).status.code(),
        Some(1)
    );
    assert_eq!(
        small_run(dir.path(), &["--cutoff", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        small_run(dir.path(), &["--workers", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(blbvs(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(blbvs(&["run"]).status.code(), Some(1));
    assert!(!dir.path().join("report.json").exists());
    assert_eq!(blbvs(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(
        blbvs(&["run", "--input", missing.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,y\n1,0\n,1\n").unwrap();
    let res = blbvs(&["run", "--input", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing value"));

    fs::write(&bad, "a,y\n").unwrap();
    assert_eq!(
        blbvs(&["run", "--input", bad.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    fs::write(&bad, "a,y\n1,0\n2,1\n").unwrap();
    let res = blbvs(&[
        "run",
        "--input",
        bad.to_str().unwrap(),
        "--response",
        "z",
        "--out",
        out,
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn reports_do_not_depend_on_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "3"), (&c, "3")] {
        let out = small_run(
            dir.path(),
            &["--method", "both", "--bootvs-r", "15", "--workers", workers],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "blbvs/report.json",
        "bootvs/report.json",
        "blbvs/proportions.csv",
        "comparison.json",
    ] {
        let first = fs::read(a.path().join(file)).unwrap();
        assert_eq!(first, fs::read(b.path().join(file)).unwrap(), "{file}");
        assert_eq!(first, fs::read(c.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn categorical_csv_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("grade,size,noise,y\n");
    let grades = ["a", "b", "c", "d"];
    for i in 0..400 {
        let g = grades[i % 4];
        let size = (i % 7) as f64 - 3.0;
        let noise = ((i * 37) % 11) as f64 / 5.0 - 1.0;
        let y = u8::from(g == "c" || g == "d" || (i % 5 == 0));
        csv.push_str(&format!("{g},{size},{noise},{y}\n"));
    }
    let input = dir.path().join("data.csv");
    fs::write(&input, csv).unwrap();
    let out = dir.path().join("out");
    let res = blbvs(&[
        "run",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--reference",
        "grade=b",
        "--gamma",
        "0.8",
        "--r",
        "6",
        "--lambda",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["group_sizes"], serde_json::json!([3, 1, 1]));
    assert!(report["selected"]
        .as_array()
        .unwrap()
        .contains(&serde_json::json!(1)));
    assert_valid(&out.join("report.json"));
}

#[test]
fn simulate_writes_a_readable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim");
    let res = blbvs(&[
        "simulate",
        "--n",
        "250",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let out = dir.path().join("out");
    let res = blbvs(&[
        "run",
        "--input",
        data.join("data.csv").to_str().unwrap(),
        "--groups",
        data.join("groups.csv").to_str().unwrap(),
        "--r",
        "4",
        "--lambda",
        "0.02",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["group_sizes"],
        serde_json::json!([5, 4, 6, 5, 5, 3, 3, 4])
    );
}
