use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use djc::check::RuleId;
use djc::mutate::{candidates, Subject};
use djc::run::{run_random, RunConfig};
use djc::syntax::load;
use tempfile::TempDir;

fn programs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/programs")
}

fn djcsim(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_djcsim"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("DJCSIM_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prog(name: &str) -> String {
    programs().join(name).display().to_string()
}

#[test]
fn run_writes_trace_and_exits_clean() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = djcsim(&["run", &prog("counter.djc"), "--seed", "1", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("total=100"), "{}", stdout(&o));
    let c = djcsim(&["check", trace.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0));
    assert!(stdout(&c).is_empty());
}

#[test]
fn deadlock_exits_three() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = djcsim(&["run", &prog("deadlock.djc"), "--seed", "3", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("deadlock"));
}

#[test]
fn budget_exhaustion_exits_four() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = djcsim(&["run", &prog("counter.djc"), "--budget", "20", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
}

#[test]
fn many_cores_many_threads() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = djcsim(&["run", &prog("spawn512.djc"), "--cores", "512", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("threads: 513 (finished=513)"), "{}", stdout(&o));
}

#[test]
fn input_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.djc");
    std::fs::write(&bad, "class Main { run(): Unit = nope }").unwrap();
    assert_eq!(djcsim(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(djcsim(&["run", "/nonexistent.djc"]).status.code(), Some(2));
    assert_eq!(djcsim(&["run", &prog("trivial.djc"), "--cores", "513"]).status.code(), Some(2));
    assert_eq!(djcsim(&["run", &prog("trivial.djc"), "--policy", "lazy"]).status.code(), Some(2));
}

#[test]
fn replayed_schedule_gives_identical_trace_file() {
    let dir = TempDir::new().unwrap();
    let (a, b, s) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"), dir.path().join("s.txt"));
    let o = djcsim(&[
        "run",
        &prog("counter.djc"),
        "--cores",
        "3",
        "--seed",
        "9",
        "--implicit",
        "0.2",
        "--migrate",
        "0.05",
        "--trace",
        a.to_str().unwrap(),
        "--schedule-out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let replay = format!("replay:{}", s.display());
    let o = djcsim(&["run", &prog("counter.djc"), "--cores", "3", "--schedule", &replay, "--trace", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn check_names_the_broken_rule() {
    let p = load(&std::fs::read_to_string(programs().join("counter.djc")).unwrap()).unwrap();
    let r = run_random(&p, &RunConfig { checkpoints: true, ..RunConfig::default() }, 0).unwrap();
    let subject = Subject { name: "counter".into(), trace: r.trace, checkpoints: r.checkpoints.unwrap() };
    let m = candidates(RuleId::Wf(5), &subject).into_iter().next().expect("a WF-5 mutant");
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("m.jsonl");
    std::fs::write(&t, m.trace.to_jsonl()).unwrap();
    let o = djcsim(&["check", t.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with(r#"{"rule":"WF-5","uids":["#)), "{}", stdout(&o));
    let only = djcsim(&["check", t.to_str().unwrap(), "--rules", "WF-1,WF-2"]);
    assert_eq!(only.status.code(), Some(0), "{}", stdout(&only));
}

#[test]
fn check_refuses_state_rules_without_checkpoints() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.jsonl");
    djcsim(&["run", &prog("trivial.djc"), "--trace", t.to_str().unwrap()]);
    let o = djcsim(&["check", t.to_str().unwrap(), "--rules", "WF-5,WFH-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run with --checkpoints"));
}

#[test]
fn explore_finds_both_racy_outcomes() {
    let o = djcsim(&["explore", &prog("racy.djc")]);
    assert_eq!(o.status.code(), Some(0));
    let finals = stdout(&o).lines().filter(|l| l.starts_with("final x")).count();
    assert!(finals >= 2, "{}", stdout(&o));
}

#[test]
fn compare_counts_writebacks() {
    let o = djcsim(&["compare", &prog("crit5.djc"), "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("policy,seed,writebacks,fetches,invalidations,bulkRuns,syncActions"));
    let wb: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(wb, ["5", "1"]);
}

#[test]
fn syncmgr_grants_in_script_order() {
    let o = djcsim(&["syncmgr", &prog("fifo.script"), "--managers", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let grants: Vec<String> =
        stdout(&o).lines().filter(|l| l.starts_with("grant")).map(|l| l.split_whitespace().nth(3).unwrap().to_string()).collect();
    assert_eq!(grants, ["t1", "t2", "t3"]);
}

#[test]
fn environment_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_djcsim"))
        .args(["run", &prog("counter.djc"), "--trace", t.to_str().unwrap()])
        .env("DJCSIM_CORES", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let trace = std::fs::read_to_string(&t).unwrap();
    assert!(trace.lines().all(|l| l.contains(r#""core":0"#)), "actions off core 0");
    let o = Command::new(env!("CARGO_BIN_EXE_djcsim")).args(["run", &prog("counter.djc")]).env("DJCSIM_CORES", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
