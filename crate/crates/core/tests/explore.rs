use std::collections::BTreeSet;

use djc::check::sc::{is_drf, sc_outcomes, Drf};
use djc::check::{check_all, RuleSet};
use djc::exec::Exec;
use djc::explore::{explore, Exploration, ExploreOpts, Limits};
use djc::syntax::{load, Program};

fn program(name: &str) -> Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const NO_MIGRATE: ExploreOpts = ExploreOpts { implicit: true, migrate: false };

fn cache(p: &Program, cores: usize, opts: ExploreOpts) -> Exploration {
    explore(p, cores, 16, opts, Limits::default(), Exec::default()).unwrap()
}

fn values(x: &Exploration, r: u32, f: &str) -> BTreeSet<String> {
    x.finals().map(|h| h.get(r, f).unwrap().to_string()).collect()
}

#[test]
fn single_thread_has_one_outcome() {
    let x = cache(&program("trivial.djc"), 2, ExploreOpts::default());
    assert_eq!(x.finals().count(), 1);
    assert!(!x.search.partial);
}

#[test]
fn racy_writers_reach_both_values() {
    let x = cache(&program("racy.djc"), 2, NO_MIGRATE);
    assert_eq!(values(&x, 1, "v"), BTreeSet::from(["1".to_string(), "2".to_string()]));
}

#[test]
fn guarded_increments_always_total_two() {
    let x = cache(&program("drf/guarded2.djc"), 2, NO_MIGRATE);
    assert_eq!(values(&x, 1, "v"), BTreeSet::from(["2".to_string()]));
}

#[test]
fn store_buffering_escapes_sequential_consistency() {
    let p = program("store_buffer.djc");
    assert!(matches!(is_drf(&p, Limits::default(), Exec::default()), Some(Drf::Race(_))));
    let sc = sc_outcomes(&p, Limits::default(), Exec::default()).unwrap();
    let x = cache(&p, 2, NO_MIGRATE);
    let both_zero = |h: &djc::machine::FinalHeap| h.get(2, "r") == Some("0") && h.get(3, "r") == Some("0");
    assert!(!sc.finals.iter().any(both_zero));
    let weak: Vec<_> = x.finals().filter(|h| !sc.finals.contains(*h)).collect();
    assert!(!weak.is_empty() && weak.iter().all(|h| both_zero(h)), "{weak:?}");
}

#[test]
fn migrating_runs_stay_sequentially_consistent_when_drf() {
    for name in ["drf/join_result.djc", "drf/spawn_pass.djc", "drf/handshake.djc"] {
        let p = program(name);
        let sc = sc_outcomes(&p, Limits::default(), Exec::default()).unwrap();
        let x = cache(&p, 2, ExploreOpts::default());
        assert!(!x.search.partial, "{name}");
        for h in x.finals() {
            assert!(sc.finals.contains(h), "{name}: {h}");
        }
    }
}

#[test]
fn representatives_replay_to_clean_traces() {
    let p = program("racy.djc");
    let x = cache(&p, 2, NO_MIGRATE);
    for h in x.finals() {
        let r = x.representative(h).unwrap().unwrap();
        assert_eq!(&r.final_heap(), h);
        assert!(check_all(&r.trace, None, &RuleSet::all()).is_clean());
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let p = program("drf/last_writer.djc");
    let a = explore(&p, 2, 16, NO_MIGRATE, Limits::default(), Exec::Sequential).unwrap();
    let b = explore(&p, 2, 16, NO_MIGRATE, Limits::default(), Exec::Parallel).unwrap();
    assert_eq!(a.search.states, b.search.states);
    assert_eq!(a.search.finals, b.search.finals);
}

#[test]
fn limits_mark_partial() {
    let x = explore(&program("drf/guarded2.djc"), 2, 16, NO_MIGRATE, Limits { max_depth: 10, max_states: 1000 }, Exec::default())
        .unwrap();
    assert!(x.search.partial);
}
