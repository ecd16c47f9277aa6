use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use coroute_core::bilevel::{solve_bilevel_with, Budget, Method};
use coroute_core::env::trace::{replay, TraceEntry};
use coroute_core::env::EnvConfig;
use coroute_core::eval::{evaluate_suite, MethodKind, MethodSpec, ReplanEvent, ReplanPayload, Trigger};
use coroute_core::io::{load_scenario, load_trace, save_checkpoint, save_events, save_scenario, TraceFile};
use coroute_core::policy::{PolicyConfig, PolicyParams};
use coroute_core::scenario::{generate_scenario, Distribution2D, TaskKind, TaskPoint, TeamConfig};
use tempfile::TempDir;

fn coroute(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coroute")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = coroute(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn scenario_file(dir: &Path, aerial: usize, ground: usize, seed: u64) {
    let s = generate_scenario(aerial, ground, Distribution2D::Uniform, TeamConfig::default(), seed).unwrap();
    save_scenario(&dir.join("s.json"), &s).unwrap();
}

#[test]
fn generate_matches_library() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate", "--aerial", "7", "--ground", "3", "--dist", "rayleigh", "--seed", "11", "--uavs", "2", "--out", "g.json"]);
    let lib = generate_scenario(7, 3, Distribution2D::Rayleigh, TeamConfig::new(2, 1), 11).unwrap();
    assert_eq!(load_scenario(&dir.path().join("g.json")).unwrap(), lib);

    let o = ok(dir.path(), &["generate", "--aerial", "7", "--ground", "3", "--dist", "rayleigh", "--seed", "11", "--uavs", "2"]);
    assert_eq!(std::fs::read(dir.path().join("g.json")).unwrap(), o.stdout);
}

#[test]
fn solve_matches_library_and_validates() {
    let dir = TempDir::new().unwrap();
    scenario_file(dir.path(), 6, 2, 4);
    ok(dir.path(), &["solve", "--scenario", "s.json", "--method", "tabu", "--iterations", "300", "--seed", "9", "--trace", "t.jsonl", "--report", "r.json"]);

    let s = load_scenario(&dir.path().join("s.json")).unwrap();
    let team = s.team;
    let lib = solve_bilevel_with(&s, team, Method::Tabu, Budget::iterations(300), 9, EnvConfig::default()).unwrap();
    let trace = load_trace(&dir.path().join("t.jsonl")).unwrap();
    assert_eq!(trace, TraceFile::new(team, EnvConfig::default(), &lib.route));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["makespan_s"].as_f64().unwrap(), lib.route.makespan_s);
    assert!(!report["legs"].as_array().unwrap().is_empty());

    let o = ok(dir.path(), &["validate", "--scenario", "s.json", "--trace", "t.jsonl"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["violations"].as_array().unwrap().is_empty());
    assert_eq!(v["status"], "success");

    ok(dir.path(), &["plot", "--scenario", "s.json", "--trace", "t.jsonl", "--out", "p.svg"]);
    assert!(std::fs::read_to_string(dir.path().join("p.svg")).unwrap().contains("<polyline"));
}

#[test]
fn validate_rejects_tampered_trace() {
    let dir = TempDir::new().unwrap();
    scenario_file(dir.path(), 5, 2, 8);
    ok(dir.path(), &["solve", "--scenario", "s.json", "--method", "gls", "--iterations", "200", "--trace", "t.jsonl"]);
    let path = dir.path().join("t.jsonl");
    let mut trace = load_trace(&path).unwrap();
    if let Some(TraceEntry::Step(r)) = trace.entries.iter_mut().find(|e| matches!(e, TraceEntry::Step(_))) {
        r.clock_s += 250.0;
    }
    coroute_core::io::save_trace(&path, &trace).unwrap();

    let o = coroute(dir.path(), &["validate", "--scenario", "s.json", "--trace", "t.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!v["violations"].as_array().unwrap().is_empty());
    assert!(stderr(&o).starts_with("error[failure]"), "{}", stderr(&o));

    let o = coroute(dir.path(), &["plot", "--scenario", "s.json", "--trace", "t.jsonl", "--out", "p.svg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[contract-violation]"), "{}", stderr(&o));
}

#[test]
fn usage_and_error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = coroute(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"));

    let o = coroute(dir.path(), &["solve", "--scenario", "s.json"]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(coroute(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(coroute(dir.path(), &["--version"]).status.code(), Some(0));

    let o = coroute(dir.path(), &["solve", "--scenario", "missing.json", "--method", "gls", "--trace", "t"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]: missing.json"), "{}", stderr(&o));

    scenario_file(dir.path(), 3, 1, 0);
    let o = coroute(dir.path(), &["solve", "--scenario", "s.json", "--method", "drl_greedy", "--trace", "t"]);
    assert_eq!(o.status.code(), Some(1));
    let o = coroute(dir.path(), &["solve", "--scenario", "s.json", "--method", "drl_sample0", "--trace", "t"]);
    assert_eq!(o.status.code(), Some(1));

    let o = coroute(dir.path(), &["generate", "--aerial", "0", "--ground", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[validation]") || stderr(&o).starts_with("error[generation-failure]"), "{}", stderr(&o));
}

#[test]
fn evaluate_is_deterministic_and_matches_library() {
    let dir = TempDir::new().unwrap();
    let policy = PolicyParams::init(PolicyConfig::tiny(), 1).unwrap();
    save_checkpoint(&dir.path().join("c.ckpt"), &policy, &serde_json::json!({})).unwrap();
    let args = |threads: &'static str, tag: &str| -> Vec<String> {
        [
            "--threads", threads, "evaluate", "--methods", "gls,drl_sample4,oracle", "--checkpoint", "c.ckpt",
            "--instances", "3", "--aerial", "4", "--ground", "2", "--seed", "50", "--teams", "1x1",
            "--iterations", "150", "--omit-timing",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain(["--out", &format!("{tag}.json"), "--csv", &format!("{tag}.csv"), "--matrix", &format!("{tag}.m.csv")].map(String::from))
        .collect()
    };
    for (threads, tag) in [("1", "a"), ("1", "b"), ("4", "c")] {
        let a = args(threads, tag);
        ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for ext in ["json", "csv", "m.csv"] {
        let read = |tag: &str| std::fs::read(dir.path().join(format!("{tag}.{ext}"))).unwrap();
        assert_eq!(read("a"), read("b"), "{ext} differs between identical runs");
        assert_eq!(read("a"), read("c"), "{ext} depends on thread count");
    }

    let instances: Vec<_> =
        (0..3).map(|i| generate_scenario(4, 2, Distribution2D::Uniform, TeamConfig::default(), 50 + i).unwrap()).collect();
    let p = Arc::new(policy);
    let methods = [
        MethodSpec { budget: Budget::iterations(150), ..MethodSpec::new(MethodKind::Gls) },
        MethodSpec { policy: Some(p), ..MethodSpec::new(MethodKind::DrlSample(4)) },
        MethodSpec::new(MethodKind::Oracle),
    ];
    let lib = evaluate_suite(&methods, &instances, TeamConfig::new(1, 1)).unwrap();
    let cli: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    let cli_obj: Vec<Vec<f64>> = cli[0]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|c| c["objective_min"].as_f64().unwrap()).collect())
        .collect();
    assert_eq!(cli_obj, lib.objectives());
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str| {
        ok(dir.path(), &[
            "--threads", "2", "train", "--net", "tiny", "--epochs", "2", "--batches", "2", "--batch-size", "4",
            "--out", &format!("{tag}.ckpt"), "--log", &format!("{tag}.csv"), "--omit-timing", "--every-epoch",
        ]);
    };
    run("a");
    run("b");
    for f in ["a.ckpt", "a.csv", "a.ckpt.epoch1"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(String::from_utf8(read("a.csv")).unwrap().lines().count(), 5);

    scenario_file(dir.path(), 4, 1, 2);
    // A barely trained policy may fail the mission; the trace must still be legal.
    let solved = coroute(dir.path(), &["solve", "--scenario", "s.json", "--method", "drl_greedy", "--checkpoint", "a.ckpt", "--trace", "t.jsonl"]);
    let o = coroute(dir.path(), &["validate", "--scenario", "s.json", "--trace", "t.jsonl"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["violations"].as_array().unwrap().is_empty());
    assert_eq!(o.status.code(), solved.status.code());
}

#[test]
fn replan_with_events_file() {
    let dir = TempDir::new().unwrap();
    let team = TeamConfig::new(2, 1);
    let s = generate_scenario(6, 2, Distribution2D::Uniform, team, 5).unwrap();
    save_scenario(&dir.path().join("s.json"), &s).unwrap();
    save_checkpoint(&dir.path().join("c.ckpt"), &PolicyParams::init(PolicyConfig::tiny(), 3).unwrap(), &serde_json::json!({}))
        .unwrap();
    let d = s.depot();
    let added = vec![TaskPoint { id: s.tasks.len(), x: d.x + 600.0, y: d.y + 400.0, kind: TaskKind::Aerial }];
    let events = [ReplanEvent { trigger: Trigger::Recharge(1), payload: ReplanPayload::AddTasks(added) }];
    save_events(&dir.path().join("e.json"), &events).unwrap();

    let o = coroute(dir.path(), &[
        "replan", "--scenario", "s.json", "--checkpoint", "c.ckpt", "--method", "drl_sample8", "--events", "e.json",
        "--trace", "t.jsonl", "--report", "r.json",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["events"][0]["applied"], true);
    assert_eq!(report["tasks"], s.tasks.len() + 1);
    let trace = load_trace(&dir.path().join("t.jsonl")).unwrap();
    let replayed = replay(&s, team, trace.header.config, &trace.entries).unwrap();
    assert_eq!(replayed.status, trace.header.status);
    assert_eq!(o.status.success(), replayed.is_success(), "{}", stderr(&o));
}
