//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout.

use std::collections::{BTreeMap, HashMap};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use djc::check::sc::{is_drf, sc_outcomes, Drf};
use djc::check::{check_all, RuleId, RuleSet};
use djc::exec::Exec;
use djc::explore::{explore, ExploreOpts, Limits};
use djc::gen::{generate, GenConfig};
use djc::mutate::{find, Subject};
use djc::policy::{compare, run_with_policy, Policy};
use djc::run::{decisions_to_string, parse_decisions, replay, run_random, Outcome, RunConfig};
use djc::syncmgr::{simulate, Arrival, Event, LogEntry, Op};
use djc::syntax::{load, Program};
use djc::trace::{Kind, Trace, Uid};

const PROGRAMS: usize = 500;
const SEEDS: u64 = 10;
const WFH_SUBSET: usize = 50;

fn program(name: &str) -> Program {
    let path = format!("{}/programs/{name}", env!("CARGO_MANIFEST_DIR"));
    load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn corpus() -> Vec<Program> {
    (0..PROGRAMS as u64).map(|s| generate(s, &GenConfig::default())).collect()
}

fn corpus_config() -> RunConfig {
    RunConfig { cores: 3, implicit_noise: 0.2, migrate_noise: 0.05, ..RunConfig::default() }
}

fn c1(corpus: &[Program]) -> Verdict {
    let jobs: Vec<(usize, u64)> = (0..corpus.len()).flat_map(|i| (0..SEEDS).map(move |s| (i, s))).collect();
    let results = Exec::default().map(&jobs, |&(i, seed)| {
        let cfg = RunConfig { checkpoints: i < WFH_SUBSET, ..corpus_config() };
        let r = run_random(&corpus[i], &cfg, seed).unwrap();
        let rep = check_all(&r.trace, r.checkpoints.as_deref(), &RuleSet::all());
        (rep.violations.len(), r.outcome == Outcome::Budget)
    });
    let violations: usize = results.iter().map(|r| r.0).sum();
    let budget = results.iter().filter(|r| r.1).count();
    verdict(
        violations == 0 && budget == 0,
        format!("{} runs, {} with checkpoints, {violations} violation(s), {budget} over budget", jobs.len(), WFH_SUBSET * SEEDS as usize),
    )
}

fn c2() -> Verdict {
    let dir = format!("{}/programs/drf", env!("CARGO_MANIFEST_DIR"));
    let mut names: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let mut bad = Vec::new();
    let mut finals = 0;
    for n in &names {
        let p = program(&format!("drf/{n}"));
        let sc = sc_outcomes(&p, Limits::default(), Exec::default()).unwrap();
        let x = explore(&p, 2, 16, ExploreOpts { implicit: true, migrate: false }, Limits::default(), Exec::default()).unwrap();
        if sc.partial || x.search.partial {
            bad.push(format!("{n} partial"));
        }
        for h in x.finals() {
            finals += 1;
            if !sc.finals.contains(h) {
                bad.push(format!("{n}: {h}"));
            }
        }
    }
    verdict(names.len() >= 20 && bad.is_empty(), format!("{} programs, {finals} final heap(s), outside SC: {bad:?}", names.len()))
}

fn subjects() -> Vec<Subject> {
    let names = [
        "racy.djc",
        "crit5.djc",
        "store_buffer.djc",
        "deadlock.djc",
        "drf/handshake.djc",
        "drf/interrupt_signal.djc",
        "drf/join_result.djc",
        "drf/guarded2.djc",
        "drf/last_writer.djc",
        "single_write.djc",
        "read_own.djc",
        "drf/volatile_only.djc",
        "drf/dekker.djc",
    ];
    let cfgs = [
        RunConfig { checkpoints: true, cores: 2, implicit_noise: 0.3, migrate_noise: 0.1, ..RunConfig::default() },
        RunConfig { checkpoints: true, cores: 3, capacity: 2, implicit_noise: 0.2, ..RunConfig::default() },
    ];
    let mut out = Vec::new();
    for n in names {
        let p = program(n);
        for (ci, cfg) in cfgs.iter().enumerate() {
            for seed in 0..3 {
                let r = run_random(&p, cfg, seed).unwrap();
                out.push(Subject { name: format!("{n} cfg{ci} seed{seed}"), trace: r.trace, checkpoints: r.checkpoints.unwrap() });
            }
        }
    }
    out
}

fn c3() -> Verdict {
    let subs = subjects();
    let rules = RuleId::all();
    let mut flagged = 0;
    let mut isolated = 0;
    let mut missing = Vec::new();
    for &rule in &rules {
        match find(rule, &subs) {
            Some(d) if d.flagged() => {
                flagged += 1;
                isolated += d.isolated() as usize;
            }
            _ => missing.push(rule.to_string()),
        }
    }
    verdict(
        flagged == rules.len(),
        format!("{flagged}/{} rules flagged by a targeted mutant, {isolated} in isolation, missing {missing:?}", rules.len()),
    )
}

fn c4() -> Verdict {
    let p = program("counter.djc");
    let seeds: Vec<u64> = (0..100).collect();
    let totals = Exec::default().map(&seeds, |&s| run_random(&p, &RunConfig::default(), s).unwrap().final_heap().get(0, "total").map(str::to_string));
    let wrong: Vec<_> = seeds.iter().zip(&totals).filter(|(_, t)| t.as_deref() != Some("100")).map(|(s, t)| (*s, t.clone())).collect();
    verdict(wrong.is_empty(), format!("100 seeds, wrong totals {wrong:?}"))
}

/// At most one holder per monitor at any point of the log.
fn exclusive(log: &[LogEntry]) -> bool {
    let mut holder: HashMap<u32, u32> = HashMap::new();
    for e in log {
        match e {
            LogEntry::Grant { object, thread, .. } => {
                if holder.insert(*object, *thread).is_some() {
                    return false;
                }
            }
            LogEntry::Release { object, thread, .. } if holder.remove(object) != Some(*thread) => return false,
            _ => {}
        }
    }
    true
}

fn c5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..100 {
        let mut order: Vec<u32> = (1..=10).collect();
        order.shuffle(&mut rng);
        let mut events: Vec<Event> = order.iter().map(|&t| Event { thread: t, op: Op::Enter, object: 7 }).collect();
        events.extend(order.iter().map(|&t| Event { thread: t, op: Op::Exit, object: 7 }));
        let sim = simulate(&events, 1, Arrival::Script);
        let granted: Vec<u32> = sim.grants().into_iter().map(|g| g.1).collect();
        if granted != order || sim.faults() > 0 || !sim.stalled.is_empty() || !exclusive(&sim.log) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("100 permutations of 10 contenders, {failures} out of order or overlapping"))
}

/// Walks the trace in flattened order: prologue by uid, then by position.
fn volatile_counterexamples(t: &Trace) -> usize {
    let mut acts: Vec<_> = t.actions.iter().collect();
    acts.sort_by_key(|a| if a.prologue { (0, a.uid, 0) } else { (1, a.step, a.ord as u64) });
    let mut latest: BTreeMap<(u32, Arc<str>), Uid> = BTreeMap::new();
    let mut bad = 0;
    for a in acts {
        let Some((r, f)) = a.var() else { continue };
        let key = (r, Arc::<str>::from(f));
        match a.kind {
            Kind::Vw => {
                latest.insert(key, a.uid);
            }
            Kind::In if a.vol => {
                latest.insert(key, a.uid);
            }
            Kind::Vr if a.prov.w != latest.get(&key).copied() => bad += 1,
            _ => {}
        }
    }
    bad
}

fn c6(corpus: &[Program]) -> Verdict {
    let jobs: Vec<(usize, u64)> = (0..corpus.len()).flat_map(|i| (0..SEEDS).map(move |s| (i, s))).collect();
    let counts = Exec::default().map(&jobs, |&(i, seed)| {
        let r = run_random(&corpus[i], &corpus_config(), seed).unwrap();
        (r.trace.count(Kind::Vr), volatile_counterexamples(&r.trace))
    });
    let reads: usize = counts.iter().map(|c| c.0).sum();
    let bad: usize = counts.iter().map(|c| c.1).sum();
    verdict(bad == 0 && reads > 0, format!("{reads} volatile reads over {} runs, {bad} counterexample(s)", jobs.len()))
}

/// The 100% claims cover data-race-free programs: a racy read can see a
/// different value under each policy and take another branch. Heaps are
/// compared on completed runs, since a blocked heap still holds buffers.
fn c7(corpus: &[Program]) -> Verdict {
    let crit = program("crit5.djc");
    let eager = run_with_policy(&crit, &RunConfig::default(), Policy::Eager, 0).unwrap().metrics.writebacks;
    let buffered = run_with_policy(&crit, &RunConfig::default(), Policy::Buffered(16), 0).unwrap().metrics.writebacks;
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let policies = [Policy::Eager, Policy::Buffered(16)];
    let per_program = Exec::default().map(corpus, |p| {
        let drf = is_drf(p, Limits::default(), Exec::Sequential) == Some(Drf::Free);
        let c = compare(p, &RunConfig::default(), &policies, &seeds, Exec::Sequential).unwrap();
        seeds
            .iter()
            .map(|&s| {
                let wb = |name: &str| c.rows.iter().find(|r| r.policy == name && r.seed == s).unwrap().metrics.writebacks;
                let completed = c.outcomes.iter().filter(|o| o.1 == s).all(|o| o.2 == Outcome::Completed);
                let agree = c.heaps_agree.iter().any(|h| h.0 == s && h.1);
                (drf, wb("eager") >= wb("buffered:16"), completed, agree)
            })
            .collect::<Vec<_>>()
    });
    let runs: Vec<_> = per_program.into_iter().flatten().collect();
    let drf: Vec<_> = runs.iter().filter(|r| r.0).collect();
    let ge = drf.iter().filter(|r| r.1).count();
    let completed: Vec<_> = drf.iter().filter(|r| r.2).collect();
    let agree = completed.iter().filter(|r| r.3).count();
    let racy_ge = runs.iter().filter(|r| !r.0 && r.1).count();
    verdict(
        eager == 5 && buffered == 1 && ge == drf.len() && agree == completed.len() && !drf.is_empty(),
        format!(
            "crit5 eager={eager} buffered={buffered}; data-race-free runs: eager>=buffered on {ge}/{}, heaps agree on {agree}/{} completed; racy runs: eager>=buffered on {racy_ge}/{}",
            drf.len(),
            completed.len(),
            runs.len() - drf.len()
        ),
    )
}

fn c8() -> Verdict {
    let p = program("spawn512.djc");
    let cfg = RunConfig { cores: 512, width: 512, ..RunConfig::default() };
    let t0 = Instant::now();
    let r = run_random(&p, &cfg, 0).unwrap();
    let rep = check_all(&r.trace, None, &RuleSet::all());
    let took = t0.elapsed();
    let started = r.trace.count(Kind::S);
    verdict(
        r.outcome == Outcome::Completed && rep.is_clean() && started == 513 && took < Duration::from_secs(60),
        format!("{started} threads started on 512 cores, {} violation(s), {:.1}s", rep.violations.len(), took.as_secs_f64()),
    )
}

fn c9() -> Verdict {
    let cases = [
        ("counter.djc", RunConfig::default(), 1),
        ("counter.djc", RunConfig { cores: 2, implicit_noise: 0.3, ..RunConfig::default() }, 2),
        ("crit5.djc", RunConfig { eager: true, ..RunConfig::default() }, 3),
        ("racy.djc", RunConfig { cores: 1, ..RunConfig::default() }, 4),
        ("store_buffer.djc", RunConfig { cores: 2, migrate_noise: 0.2, ..RunConfig::default() }, 5),
        ("deadlock.djc", RunConfig::default(), 6),
        ("drf/handshake.djc", RunConfig { cores: 3, capacity: 1, ..RunConfig::default() }, 7),
        ("drf/pipeline.djc", RunConfig { mode: djc::step::Mode::Fine, ..RunConfig::default() }, 8),
        ("drf/interrupt_signal.djc", RunConfig { cores: 4, implicit_noise: 0.5, migrate_noise: 0.1, ..RunConfig::default() }, 9),
        ("wide20.djc", RunConfig { capacity: 4, ..RunConfig::default() }, 10),
    ];
    let dir = std::env::temp_dir().join(format!("djc-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut differ = Vec::new();
    for (i, (name, cfg, seed)) in cases.iter().enumerate() {
        let p = program(name);
        let a = run_random(&p, cfg, *seed).unwrap();
        let schedule = dir.join(format!("{i}.schedule"));
        std::fs::write(&schedule, decisions_to_string(&a.decisions)).unwrap();
        let ds = parse_decisions(&std::fs::read_to_string(&schedule).unwrap()).unwrap();
        let b = replay(&p, cfg, &ds).unwrap();
        let (fa, fb) = (dir.join(format!("{i}.a.jsonl")), dir.join(format!("{i}.b.jsonl")));
        std::fs::write(&fa, a.trace.to_jsonl()).unwrap();
        std::fs::write(&fb, b.trace.to_jsonl()).unwrap();
        if std::fs::read(&fa).unwrap() != std::fs::read(&fb).unwrap() {
            differ.push(*name);
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    verdict(differ.is_empty(), format!("{} configs replayed, differing: {differ:?}", cases.len()))
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let corpus = corpus();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("well-formed random runs", Box::new(|| c1(&corpus))),
        ("DRF implies SC", Box::new(c2)),
        ("every rule caught by a mutant", Box::new(c3)),
        ("guarded counter reaches 100", Box::new(c4)),
        ("monitor grants in arrival order", Box::new(c5)),
        ("volatile reads see the latest write", Box::new(|| c6(&corpus))),
        ("eager vs buffered write-backs", Box::new(|| c7(&corpus))),
        ("512 threads on 512 cores", Box::new(c8)),
        ("replay is byte-identical", Box::new(c9)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f();
        failed += !v.ok as usize;
        println!("{} criterion {}: {name} ({}) [{:.1}s]", if v.ok { "PASS" } else { "FAIL" }, i + 1, v.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/{} passed in {:.1}s", criteria.len() - failed, criteria.len(), t0.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
