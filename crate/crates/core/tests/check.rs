use djc::check::{check_all, RuleSet};
use djc::run::{run_random, RunConfig};
use djc::syntax::load;

fn program(name: &str) -> djc::syntax::Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn configs() -> Vec<RunConfig> {
    vec![
        RunConfig { checkpoints: true, ..RunConfig::default() },
        RunConfig { checkpoints: true, cores: 2, capacity: 2, ..RunConfig::default() },
        RunConfig { checkpoints: true, cores: 3, implicit_noise: 0.4, migrate_noise: 0.2, ..RunConfig::default() },
        RunConfig { checkpoints: true, cores: 1, eager: true, implicit_noise: 0.1, ..RunConfig::default() },
    ]
}

#[test]
fn sample_programs_produce_clean_traces() {
    for name in ["trivial.djc", "counter.djc", "crit5.djc", "racy.djc", "deadlock.djc"] {
        let p = program(name);
        for (i, cfg) in configs().iter().enumerate() {
            for seed in 0..12 {
                let r = run_random(&p, cfg, seed).unwrap();
                let rep = check_all(&r.trace, r.checkpoints.as_deref(), &RuleSet::all());
                assert!(rep.is_clean(), "{name} cfg {i} seed {seed}:\n{}", rep.to_jsonl());
            }
        }
    }
}
