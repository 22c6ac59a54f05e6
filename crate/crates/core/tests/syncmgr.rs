use djc::run::{run_random, RunConfig};
use djc::syncmgr::{intervals, overlaps, simulate, Arrival, Event, LogEntry, Op};
use djc::syntax::load;
use djc::trace::{Kind, Target};

fn program(name: &str) -> djc::syntax::Program {
    load(&std::fs::read_to_string(format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()).unwrap()
}

/// Lock and unlock actions of a trace, in synchronization order, replayed
/// as manager requests: grants come back in the same order and never
/// overlap.
#[test]
fn monitor_actions_replay_through_the_managers() {
    for name in ["counter.djc", "drf/last_writer.djc", "drf/nested_monitor.djc", "drf/two_monitors.djc"] {
        let p = program(name);
        for seed in 0..10 {
            let cfg = RunConfig { cores: 3, ..RunConfig::default() };
            let r = run_random(&p, &cfg, seed).unwrap();
            let mut events = Vec::new();
            let mut locks = Vec::new();
            for a in &r.trace.actions {
                let Target::Obj(m) = a.target else { continue };
                let op = match a.kind {
                    Kind::L => Op::Enter,
                    Kind::U => Op::Exit,
                    _ => continue,
                };
                if op == Op::Enter {
                    locks.push((m, a.thread));
                }
                events.push(Event { thread: a.thread, op, object: m });
            }
            for managers in [1, 2, 3] {
                let sim = simulate(&events, managers, Arrival::Script);
                assert_eq!(sim.faults(), 0, "{name} seed {seed}\n{}", sim.log_text());
                assert!(sim.stalled.is_empty());
                assert_eq!(sim.grants(), locks, "{name} seed {seed} managers {managers}");
                assert!(overlaps(&intervals(&sim.log)).is_empty());
                assert!(sim.log.iter().all(|e| !matches!(e, LogEntry::Fault { .. })));
            }
        }
    }
}
