use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lemma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lemma"))
        .args(args)
        .env_remove("LEMMA_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lemma(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_dataset(root: &Path, name: &str) -> std::path::PathBuf {
    let dir = root.join(name);
    let d = dir.to_str().unwrap();
    ok(&["gen", "--count", "10", "--seed", "7", "--out", d]);
    ok(&["demo", "--instances", &format!("{d}/instances.jsonl"), "--out", &format!("{d}/ds"), "--seed", "7"]);
    dir
}

#[test]
fn gen_and_demo_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_dataset(tmp.path(), "a");
    let b = small_dataset(tmp.path(), "b");
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.keys().any(|k| k.ends_with(".ppm")));
    assert!(fa.keys().any(|k| k.ends_with("splits.json")));
    assert_eq!(fa, fb);
    let lines = fs::read_to_string(a.join("instances.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 80);
}

#[test]
fn eval_alloc_and_render_on_a_small_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = small_dataset(tmp.path(), "d");
    let ds = dir.join("ds");
    let report = tmp.path().join("report.json");
    let table = ok(&[
        "eval",
        "--data",
        ds.to_str().unwrap(),
        "--policy",
        "oracle",
        "--split",
        "train",
        "--runs",
        "2",
        "--out",
        report.to_str().unwrap(),
    ]);
    let mut lines = table.lines();
    assert!(lines.next().unwrap().trim_end().ends_with("Avg"));
    assert!(lines.next().unwrap().trim_end().ends_with("100.00 ±   0.00"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["policy"], "oracle");

    let instances = dir.join("instances.jsonl");
    for solver in ["exact", "greedy"] {
        let out = ok(&["alloc", "--instance", instances.to_str().unwrap(), "--index", "60", "--solver", solver]);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["task_type"], "hook");
        assert_eq!(v["subtasks"].as_array().unwrap().len(), 4);
        assert!(v["utility"].as_f64().unwrap() > 3.0);
    }

    let svg = tmp.path().join("scene.svg");
    ok(&[
        "render",
        "--episode",
        ds.join("pass").join("episodes.jsonl").to_str().unwrap(),
        "--step",
        "1",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let out = lemma(&[
        "render",
        "--episode",
        ds.join("pass").join("episodes.jsonl").to_str().unwrap(),
        "--step",
        "99",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_comes_from_the_environment_unless_given() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out_dir = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lemma"));
        cmd.args(["gen", "--task", "pass", "--count", "3", "--out", out_dir.to_str().unwrap()]);
        cmd.env_remove("LEMMA_SEED");
        if let Some(s) = env {
            cmd.env("LEMMA_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(out_dir.join("instances.jsonl")).unwrap()
    };
    let from_env = run("env", Some("5"), None);
    assert_eq!(from_env, run("flag", None, Some("5")));
    assert_ne!(from_env, run("default", None, None));
    assert_eq!(run("both", Some("5"), Some("0")), run("zero", None, None));
}

#[test]
fn exit_codes_separate_bad_input_from_io() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(lemma(&["gen", "--task", "moon", "--out", out]).status.code(), Some(2));
    assert_eq!(lemma(&["eval", "--data", "/nonexistent/lemma"]).status.code(), Some(3));
    assert_eq!(lemma(&["--world", "/nonexistent/world.toml", "gen", "--out", out]).status.code(), Some(3));
    let bad = tmp.path().join("world.toml");
    fs::write(&bad, "version = 1\nnot_a_field = 3\n").unwrap();
    assert_eq!(
        lemma(&["--world", bad.to_str().unwrap(), "gen", "--out", out]).status.code(),
        Some(2)
    );
    let junk = tmp.path().join("junk.jsonl");
    fs::write(&junk, "{ not json\n").unwrap();
    assert_eq!(lemma(&["alloc", "--instance", junk.to_str().unwrap()]).status.code(), Some(2));
}
