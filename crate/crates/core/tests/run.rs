use djc::run::{parse_decisions, decisions_to_string, replay, run_random, Outcome, RunConfig};
use djc::syntax::load;
use djc::trace::Kind;

fn program(name: &str) -> djc::syntax::Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trivial_main_starts_and_finishes() {
    let r = run_random(&program("trivial.djc"), &RunConfig::default(), 0).unwrap();
    assert_eq!(r.outcome, Outcome::Completed);
    let kinds: Vec<Kind> = r.trace.actions.iter().map(|a| a.kind).collect();
    assert_eq!(kinds, vec![Kind::S, Kind::Fi]);
}

#[test]
fn counter_reaches_total() {
    for seed in 0..5 {
        let r = run_random(&program("counter.djc"), &RunConfig::default(), seed).unwrap();
        assert_eq!(r.outcome, Outcome::Completed, "seed {seed}");
        assert_eq!(r.final_heap().get(0, "total"), Some("100"), "seed {seed}");
    }
}

#[test]
fn deadlock_names_both_threads() {
    let r = run_random(&program("deadlock.djc"), &RunConfig::default(), 3).unwrap();
    let Outcome::Deadlock(blocked) = r.outcome else { panic!("{:?}", r.outcome) };
    assert_eq!(blocked.len(), 2, "{blocked:?}");
}

#[test]
fn replay_reproduces_trace() {
    let p = program("counter.djc");
    let cfg = RunConfig { implicit_noise: 0.1, migrate_noise: 0.05, cores: 3, ..RunConfig::default() };
    let a = run_random(&p, &cfg, 11).unwrap();
    let ds = parse_decisions(&decisions_to_string(&a.decisions)).unwrap();
    let b = replay(&p, &cfg, &ds).unwrap();
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
}
