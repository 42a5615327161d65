use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trajsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajsim"))
        .args(args)
        .output()
        .expect("run trajsim")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn series(dir: &Path, name: &str, values: &[f64]) -> String {
    let path = dir.join(name);
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

/// Distance per variant from `align --variant all`.
fn distances(text: &str) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut variant = String::new();
    for line in text.lines() {
        let (key, value) = line.split_once('\t').unwrap();
        match key {
            "variant" => variant = value.to_owned(),
            "distance" => out.push((variant.clone(), value.parse().unwrap())),
            _ => {}
        }
    }
    out
}

#[test]
fn align_worked_examples() {
    let dir = tempfile::tempdir().unwrap();
    let a = series(dir.path(), "a", &[0.0, 1.0, 2.0]);
    let b = series(dir.path(), "b", &[5.0, 0.0, 1.0, 2.0, 7.0]);
    let text = stdout(&trajsim(&["align", &a, &b, "--variant", "all"]));
    let got = distances(&text);
    let want = [("subsequence", 0.0), ("prefix", 25.0), ("suffix", 25.0), ("global", 50.0)];
    for (name, d) in want {
        let (_, value) = got.iter().find(|(v, _)| v == name).unwrap();
        assert_eq!(*value, d, "{name}");
    }

    let sub = stdout(&trajsim(&["align", &a, &b]));
    assert!(sub.contains("matched\tb[2..4]"), "{sub}");
    assert!(sub.contains("path\t(1,2) (2,3) (3,4)"), "{sub}");
}

#[test]
fn align_identical_is_zero_and_variants_nest() {
    let dir = tempfile::tempdir().unwrap();
    let a = series(dir.path(), "a", &[0.5, 2.0, 1.0]);
    let b = series(dir.path(), "b", &[3.0, 0.0, 1.5, 1.0, 4.0]);
    for d in distances(&stdout(&trajsim(&["align", &a, &a, "--variant", "all"]))) {
        assert_eq!(d.1, 0.0, "{}", d.0);
    }
    let d: std::collections::HashMap<_, _> =
        distances(&stdout(&trajsim(&["align", &a, &b, "--variant", "all"]))).into_iter().collect();
    assert!(d["subsequence"] <= d["prefix"] && d["prefix"] <= d["global"]);
    assert!(d["subsequence"] <= d["suffix"] && d["suffix"] <= d["global"]);
}

#[test]
fn errors_exit_nonzero_with_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = trajsim(&["evaluate", "--cohort", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("trajsim: error: "));

    // Every patient stays MCI, so there is one class at most.
    let cohort = dir.path().join("flat.jsonl");
    let mut text = String::new();
    for p in 0..4 {
        for m in [0, 12, 24, 36, 72] {
            text.push_str(&format!(
                "{{\"patient_id\":\"P{p}\",\"month\":{m},\"diagnosis\":\"MCI\",\"features\":{{\"MRI\":[{p}.0]}}}}\n"
            ));
        }
    }
    fs::write(&cohort, text).unwrap();
    let out = trajsim(&["evaluate", "--cohort", cohort.to_str().unwrap(), "--methods", "snapshot"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("trajsim: error: "));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.jsonl");
    let two = dir.path().join("two.jsonl");
    for path in [&one, &two] {
        let text = stdout(&trajsim(&["simulate", "--out", path.to_str().unwrap(), "--patients", "40", "--seed", "3"]));
        assert!(text.lines().any(|l| l.contains("\"record\":\"summary\"")));
    }
    assert_eq!(fs::read(&one).unwrap(), fs::read(&two).unwrap());
}

#[test]
fn evaluate_single_method_rerun_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("c.jsonl");
    stdout(&trajsim(&["simulate", "--out", cohort.to_str().unwrap(), "--patients", "60", "--seed", "5"]));
    let cache = dir.path().join("cache");
    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        stdout(&trajsim(&[
            "evaluate",
            "--cohort",
            cohort.to_str().unwrap(),
            "--methods",
            "global",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]));
        fs::read(out_dir.join("records.jsonl")).unwrap()
    };
    let first = run("first");
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
    // The second run reads its distances from the cache.
    assert_eq!(first, run("second"));
    let report = fs::read_to_string(dir.path().join("first/report.txt")).unwrap();
    assert!(report.contains("global"));
    assert!(!report.contains("subsequence"));
}
