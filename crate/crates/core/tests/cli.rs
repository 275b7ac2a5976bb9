use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy_undirected.txt")
}

fn ltm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltm-lcip"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ltm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_plan_validate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let edges = toy();
    ok(&["stats", "--edges", s(&edges), "--undirected", "--out", s(&d.join("s"))]);
    let stats = json(&d.join("s/statistics.json"));
    assert_eq!(stats["summary"]["n"], 60);
    assert_eq!(stats["summary"]["edges"], 228);
    assert_eq!(stats["config"]["network"]["undirected"], true);

    ok(&[
        "plan",
        "--stats",
        s(&d.join("s/statistics.json")),
        "--lp-dump",
        "--compare-seeding",
        "--out",
        s(&d.join("p")),
    ]);
    let plan = json(&d.join("p/plan.json"));
    let seeding = json(&d.join("p/plan_seeding.json"));
    assert!(plan["cost"].as_f64().unwrap() > 0.0);
    assert!(seeding["cost"].as_f64().unwrap() >= plan["cost"].as_f64().unwrap() - 1e-12);
    assert!(plan["audit"]["original_margin"].as_f64().unwrap() > 0.0);
    assert_eq!(plan["config"]["plan"]["eps"], 0.1);
    let lp = fs::read_to_string(d.join("p/model.lp")).unwrap();
    assert!(lp.contains("Minimize") && lp.contains("Subject To") && lp.ends_with("End\n"));
    for curve in ["curve_initial.csv", "curve_planned.csv", "curve_seeding.csv"] {
        let text = fs::read_to_string(d.join("p").join(curve)).unwrap();
        assert!(text.starts_with("z,psi,phi,phi_minus_z\n"), "{curve}");
    }

    ok(&[
        "validate",
        "--plan",
        s(&d.join("p/plan.json")),
        "--stats",
        s(&d.join("s/statistics.json")),
        "--mc-n",
        "2000",
        "--replicates",
        "3",
        "--seed",
        "5",
        "--out",
        s(&d.join("v")),
    ]);
    let val = json(&d.join("v/validate.json"));
    assert_eq!(val["monte_carlo"]["runs"].as_array().unwrap().len(), 3);
    assert_eq!(val["monte_carlo"]["seed"], 5);
    let traj = fs::read_to_string(d.join("v/trajectory_replicate_2.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,Y,Z,y_recursion,z_recursion");
}

#[test]
fn zero_thresholds_give_null_plan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let th = d.join("zero.txt");
    fs::write(&th, (0..60).map(|i| format!("{i} 0\n")).collect::<String>()).unwrap();
    let rule = format!("file:{}", s(&th));
    ok(&[
        "plan",
        "--edges",
        s(&toy()),
        "--undirected",
        "--threshold-rule",
        &rule,
        "--out",
        s(d),
    ]);
    assert_eq!(json(&d.join("plan.json"))["cost"], 0.0);
}

#[test]
fn zero_replicates_give_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["stats", "--edges", s(&toy()), "--undirected", "--out", s(d)]);
    ok(&["plan", "--stats", s(&d.join("statistics.json")), "--out", s(d)]);
    ok(&[
        "validate",
        "--plan",
        s(&d.join("plan.json")),
        "--stats",
        s(&d.join("statistics.json")),
        "--out",
        s(d),
    ]);
    let val = json(&d.join("validate.json"));
    assert!(val["monte_carlo"]["runs"].as_array().unwrap().is_empty());
    assert!(val["monte_carlo"]["success_rate"].is_null());
}

#[test]
fn exit_codes_are_stage_specific() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ltm(&["plan", "--no-such-flag"]).status.code(), Some(2));

    let empty = d.join("empty.txt");
    fs::write(&empty, "# nothing\n").unwrap();
    let out = ltm(&["stats", "--edges", s(&empty), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no edges"));

    let bad = d.join("bad.txt");
    fs::write(&bad, "1 2\n3\n").unwrap();
    let out = ltm(&["stats", "--edges", s(&bad), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    // Seeding every node still leaves Delta = 0.9 out of reach.
    let out = ltm(&[
        "plan",
        "--edges",
        s(&toy()),
        "--undirected",
        "--delta",
        "0.9",
        "--out",
        s(d),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn environment_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_ltm-lcip"))
        .args(["plan", "--out", s(d)])
        .env("LTM_EDGES", toy())
        .env("LTM_UNDIRECTED", "true")
        .env("LTM_EPS", "0.2")
        .env("LTM_GRID_N", "40")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan = json(&d.join("plan.json"));
    assert_eq!(plan["eps"], 0.2);
    assert_eq!(plan["config"]["plan"]["grid_n"], 40);
}

fn bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in fs::read_dir(&p).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn experiment_bundle_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "experiment",
            "--edges",
            s(&toy()),
            "--undirected",
            "--threshold-rule",
            "uniform-random",
            "--instances",
            "3",
            "--eps",
            "0.3",
            "--replicates",
            "2",
            "--mc-n",
            "1000",
            "--seed",
            "11",
            "--out",
            s(&out),
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    let files = bundle(&a);
    assert!(files.iter().any(|(f, _)| f.ends_with("trajectory_network.csv")));
    assert_eq!(files, bundle(&b));

    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["instances"].as_array().unwrap().len(), 3);
    assert_eq!(summary["instances"][2]["threshold_seed"], 13);
    assert!(summary["final_fraction"]["mean"].is_number());
}

#[test]
fn epinions_preset_runs_on_toy_network() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["experiment", "--preset", "epinions", "--edges", s(&toy()), "--out", s(d)]);
    let summary = json(&d.join("summary.json"));
    assert_eq!(summary["config"]["plan"]["eps"], 0.1);
    assert!(summary["instances"][0]["seeding_cost"].is_number());
    let traj = fs::read_to_string(d.join("trajectory_network.csv")).unwrap();
    assert!(traj.starts_with("t,Y,Z,y_recursion,z_recursion\n"));
}
