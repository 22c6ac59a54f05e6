use djc::check::RuleId;
use djc::mutate::{find, Subject};
use djc::run::{run_random, RunConfig};
use djc::syntax::load;

fn subjects() -> Vec<Subject> {
    let names = ["racy.djc", "crit5.djc", "store_buffer.djc", "deadlock.djc", "drf/handshake.djc", "drf/interrupt_signal.djc", "drf/join_result.djc", "drf/guarded2.djc", "drf/last_writer.djc", "single_write.djc", "read_own.djc", "drf/volatile_only.djc", "drf/dekker.djc"];
    let cfgs = [
        RunConfig { checkpoints: true, cores: 2, implicit_noise: 0.3, migrate_noise: 0.1, ..RunConfig::default() },
        RunConfig { checkpoints: true, cores: 3, capacity: 2, implicit_noise: 0.2, ..RunConfig::default() },
    ];
    let mut out = Vec::new();
    for n in names {
        let p = load(&std::fs::read_to_string(format!("{}/programs/{n}", env!("CARGO_MANIFEST_DIR"))).unwrap()).unwrap();
        for (ci, cfg) in cfgs.iter().enumerate() {
            for seed in 0..3 {
                let r = run_random(&p, cfg, seed).unwrap();
                out.push(Subject { name: format!("{n} cfg{ci} seed{seed}"), trace: r.trace, checkpoints: r.checkpoints.unwrap() });
            }
        }
    }
    out
}

#[test]
fn every_rule_has_a_detected_mutant() {
    let subs = subjects();
    let mut missing = Vec::new();
    for rule in RuleId::all() {
        match find(rule, &subs) {
            Some(d) => println!("{rule}: isolated={} {:?} [{}] {}", d.isolated(), d.report.rules(), d.subject, d.mutant.what),
            None => missing.push(rule),
        }
    }
    assert!(missing.is_empty(), "no mutant for {missing:?}");
}

