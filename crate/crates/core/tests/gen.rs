use djc::check::{check_all, RuleSet};
use djc::gen::{generate, op_count, GenConfig};
use djc::run::{run_random, Outcome, RunConfig};
use djc::syntax::{parse_program, program_to_string, validate_program};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_programs_stay_in_bounds(seed in any::<u64>()) {
        let p = generate(seed, &GenConfig::default());
        prop_assert!(validate_program(&p).is_ok());
        prop_assert!(p.classes.len() <= 4);
        prop_assert!(p.classes.iter().filter(|c| c.is_thread()).count() <= 3);
        prop_assert!(op_count(&p) <= 40);
        prop_assert_eq!(parse_program(&program_to_string(&p)).unwrap(), p);
    }

    #[test]
    fn generated_runs_are_well_formed(seed in any::<u64>(), run_seed in 0u64..1000) {
        let p = generate(seed, &GenConfig::default());
        let cfg = RunConfig { cores: 3, checkpoints: true, implicit_noise: 0.2, migrate_noise: 0.05, ..RunConfig::default() };
        let r = run_random(&p, &cfg, run_seed).unwrap();
        prop_assert!(r.outcome != Outcome::Budget);
        let rep = check_all(&r.trace, r.checkpoints.as_deref(), &RuleSet::all());
        prop_assert!(rep.is_clean(), "{}\n{}", program_to_string(&p), rep.to_jsonl());
    }
}

#[test]
fn most_generated_programs_complete() {
    let cfg = RunConfig::default();
    let mut done = 0;
    let mut threads = 0;
    for seed in 0..200 {
        let p = generate(seed, &GenConfig::default());
        threads += p.classes.iter().filter(|c| c.is_thread()).count();
        let r = run_random(&p, &cfg, seed).unwrap();
        if r.outcome == Outcome::Completed {
            done += 1;
        }
    }
    println!("{done}/200 completed, {threads} thread classes");
    assert!(done >= 150, "{done}/200 completed");
    assert!(threads >= 300, "{threads} thread classes over 200 programs");
}
