use djc::exec::Exec;
use djc::policy::{compare, run_with_policy, Policy};
use djc::run::{Outcome, RunConfig};
use djc::syntax::load;
use djc::trace::Kind;

fn program(name: &str) -> djc::syntax::Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn writebacks(name: &str, p: Policy) -> usize {
    run_with_policy(&program(name), &RunConfig::default(), p, 0).unwrap().metrics.writebacks
}

#[test]
fn critical_section_of_five_writes() {
    assert_eq!(writebacks("crit5.djc", Policy::Eager), 5);
    assert_eq!(writebacks("crit5.djc", Policy::Buffered(16)), 1);
    assert_eq!(writebacks("crit5.djc", Policy::Buffered(5)), 1);
}

#[test]
fn single_write_costs_one_writeback_either_way() {
    assert_eq!(writebacks("single_write.djc", Policy::Eager), 1);
    assert_eq!(writebacks("single_write.djc", Policy::Buffered(16)), 1);
}

#[test]
fn buffer_overflow_writes_back_then_release_drains() {
    let r = run_with_policy(&program("wide20.djc"), &RunConfig::default(), Policy::Buffered(16), 0).unwrap();
    let acts: Vec<_> = r.result.trace.actions.iter().filter(|a| !a.prologue).collect();
    let unlock = acts.iter().position(|a| a.kind == Kind::U).unwrap();
    let seventeenth_write = acts.iter().enumerate().filter(|(_, a)| a.kind == Kind::W).nth(16).unwrap().0;
    let before = acts[..seventeenth_write].iter().filter(|a| a.kind == Kind::B).count();
    let at_release = acts[seventeenth_write..unlock].iter().filter(|a| a.kind == Kind::B).count();
    assert_eq!((before, at_release), (16, 4));
    assert_eq!(r.metrics.writebacks, 20);
    assert_eq!(r.metrics.bulk_runs, 2);
}

#[test]
fn eager_keeps_at_most_one_buffered_write() {
    let p = program("counter.djc");
    let cfg = RunConfig { checkpoints: true, ..RunConfig::default() };
    let r = run_with_policy(&p, &cfg, Policy::Eager, 4).unwrap();
    for cp in r.result.checkpoints.unwrap() {
        assert!(cp.state.cores.iter().all(|c| c.buffer.len() <= 1), "step {}", cp.step);
    }
}

#[test]
fn policies_agree_on_heaps_and_eager_never_writes_back_less() {
    let seeds: Vec<u64> = (0..8).collect();
    for name in ["counter.djc", "crit5.djc", "wide20.djc", "drf/pipeline.djc", "drf/handshake.djc"] {
        let c = compare(&program(name), &RunConfig::default(), &[Policy::Eager, Policy::Buffered(16), Policy::Buffered(2)], &seeds, Exec::default())
            .unwrap();
        assert_eq!(c.rows.len(), 3 * seeds.len());
        assert!(c.heaps_agree.iter().all(|(_, ok)| *ok), "{name}: {:?}", c.heaps_agree);
        assert!(c.outcomes.iter().all(|o| o.2 == Outcome::Completed), "{name}");
        for s in &seeds {
            let wb = |p: &str| c.rows.iter().find(|r| r.policy == p && r.seed == *s).unwrap().metrics.writebacks;
            assert!(wb("eager") >= wb("buffered:16"), "{name} seed {s}");
        }
    }
}
