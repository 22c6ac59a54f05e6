use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use djc::check::{check, check_all, RuleId, RuleSet, UnknownRule};
use djc::exec::Exec;
use djc::explore::{explore, ExploreOpts, Limits};
use djc::policy::{compare, Policy, PolicyParseError};
use djc::run::{parse_decisions, replay, run_random, Outcome, RunConfig, RunError, RunResult};
use djc::step::Mode;
use djc::syncmgr::{intervals, overlaps, parse_script, simulate, Arrival, Event, Op};
use djc::syntax::{load, Program};
use djc::trace::{Kind, Target, Trace};

const CLEAN: u8 = 0;
const VIOLATIONS: u8 = 1;
const INPUT: u8 = 2;
const DEADLOCK: u8 = 3;
const PARTIAL: u8 = 4;

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error(transparent)]
    Rules(#[from] UnknownRule),
    #[error(transparent)]
    Policy(#[from] PolicyParseError),
    #[error("bad schedule `{0}`: expected random, replay:<path> or exhaustive:<depth>")]
    Schedule(String),
    #[error("state rules ({0}) need machine checkpoints, which trace files do not carry: run with --checkpoints")]
    NeedsCheckpoints(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Run(RunError::Fault(_)) => VIOLATIONS,
            _ => INPUT,
        }
    }
}

#[derive(Parser)]
#[command(name = "djcsim", version, about = "Simulate, check and explore DJC programs on a non-cache-coherent many-core")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program and write its trace.
    Run(RunArgs),
    /// Check a trace file against the well-formedness rules.
    Check(CheckArgs),
    /// Enumerate the final heaps reachable under every interleaving.
    Explore(ExploreArgs),
    /// Feed a client script through the synchronization managers.
    Syncmgr(SyncArgs),
    /// Compare write-back policies on one program, as CSV.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StepMode {
    Macro,
    Fine,
}

#[derive(Args)]
struct MachineArgs {
    #[arg(long, env = "DJCSIM_CORES", default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=512))]
    cores: u32,
    /// Write-back buffer threshold.
    #[arg(long, env = "DJCSIM_WB_THRESHOLD", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    wb_threshold: u32,
    /// `eager` or `buffered:<n>`; overrides --wb-threshold.
    #[arg(long, env = "DJCSIM_POLICY")]
    policy: Option<Policy>,
}

impl MachineArgs {
    fn config(&self) -> RunConfig {
        let base = RunConfig {
            cores: self.cores as usize,
            width: self.cores as usize,
            capacity: self.wb_threshold as usize,
            ..RunConfig::default()
        };
        match self.policy {
            Some(p) => p.apply(&base),
            None => base,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    program: PathBuf,
    #[command(flatten)]
    machine: MachineArgs,
    #[arg(long, env = "DJCSIM_MANAGERS", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    managers: u32,
    #[arg(long, env = "DJCSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// `random`, `replay:<path>` or `exhaustive:<depth>`.
    #[arg(long, env = "DJCSIM_SCHEDULE", default_value = "random")]
    schedule: String,
    /// Record machine states and check the state rules as well.
    #[arg(long, env = "DJCSIM_CHECKPOINTS")]
    checkpoints: bool,
    /// Trace output; defaults to the program path with extension `trace.jsonl`.
    #[arg(long, env = "DJCSIM_TRACE")]
    trace: Option<PathBuf>,
    /// Schedule output, replayable with `--schedule replay:<path>`.
    #[arg(long, env = "DJCSIM_SCHEDULE_OUT")]
    schedule_out: Option<PathBuf>,
    #[arg(long, value_enum, env = "DJCSIM_MODE", default_value = "macro")]
    mode: StepMode,
    /// Probability per step of a spontaneous write-back, fetch or invalidation.
    #[arg(long, env = "DJCSIM_IMPLICIT", default_value_t = 0.0)]
    implicit: f64,
    /// Probability per step of a thread migration.
    #[arg(long, env = "DJCSIM_MIGRATE", default_value_t = 0.0)]
    migrate: f64,
    #[arg(long, env = "DJCSIM_BUDGET", default_value_t = djc::run::DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct CheckArgs {
    trace: PathBuf,
    /// Comma-separated rule ids, e.g. `WF-5,WF-16`; all trace rules by default.
    #[arg(long, env = "DJCSIM_RULES")]
    rules: Option<String>,
}

#[derive(Args)]
struct ExploreArgs {
    program: PathBuf,
    #[arg(long, env = "DJCSIM_CORES", default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=512))]
    cores: u32,
    #[arg(long, env = "DJCSIM_WB_THRESHOLD", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    wb_threshold: u32,
    #[arg(long, env = "DJCSIM_DEPTH", default_value_t = Limits::default().max_depth)]
    depth: usize,
    #[arg(long, env = "DJCSIM_MAX_STATES", default_value_t = Limits::default().max_states)]
    max_states: usize,
    /// Leave out spontaneous write-backs, fetches and invalidations.
    #[arg(long)]
    no_implicit: bool,
    /// Include thread migrations.
    #[arg(long)]
    migrate: bool,
    /// Also enumerate sequentially consistent outcomes and compare.
    #[arg(long)]
    sc: bool,
}

#[derive(Args)]
struct SyncArgs {
    script: PathBuf,
    #[arg(long, env = "DJCSIM_MANAGERS", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    managers: u32,
    /// Interleave clients in a seeded random order instead of script order.
    #[arg(long, env = "DJCSIM_SHUFFLE")]
    shuffle: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    program: PathBuf,
    #[arg(long, env = "DJCSIM_CORES", default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=512))]
    cores: u32,
    /// Buffered thresholds compared against eager write-back.
    #[arg(long, env = "DJCSIM_THRESHOLDS", value_delimiter = ',', default_value = "16")]
    thresholds: Vec<usize>,
    #[arg(long, env = "DJCSIM_SEEDS", default_value_t = 10)]
    seeds: u64,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn program(path: &Path) -> Result<Program, CliError> {
    load(&read(path)?).map_err(|e| CliError::Input { path: path.into(), msg: e.to_string() })
}

fn rules(list: Option<&str>) -> Result<RuleSet, CliError> {
    Ok(match list {
        Some(s) => RuleSet::parse(s)?,
        None => RuleSet::all(),
    })
}

fn summary(r: &RunResult, program: &Program) {
    println!("outcome: {}", r.outcome.name());
    println!("steps: {}", r.steps);
    let mut kinds: BTreeMap<Kind, usize> = BTreeMap::new();
    for a in &r.trace.actions {
        *kinds.entry(a.kind).or_default() += 1;
    }
    let counts: Vec<String> = kinds.iter().map(|(k, n)| format!("{k}={n}")).collect();
    println!("actions: {} ({})", r.trace.actions.len(), counts.join(" "));
    let threads: Vec<(usize, &str, &str)> = r
        .state
        .heap
        .iter()
        .enumerate()
        .filter_map(|(i, o)| Some((i, program.classes[o.class as usize].name.as_str(), o.life?.name())))
        .collect();
    if threads.len() <= 16 {
        for (i, class, life) in &threads {
            println!("thread r{i} {class}: {life}");
        }
    } else {
        let mut lives: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, _, life) in &threads {
            *lives.entry(life).or_default() += 1;
        }
        let lives: Vec<String> = lives.iter().map(|(l, n)| format!("{l}={n}")).collect();
        println!("threads: {} ({})", threads.len(), lives.join(" "));
    }
    if let Outcome::Deadlock(blocked) = &r.outcome {
        for (t, why) in blocked {
            println!("blocked r{t}: {why}");
        }
    }
    let fh = r.final_heap();
    if fh.cells.len() <= 64 {
        println!("final: {fh}");
    } else {
        println!("final: {} cell(s), {}", fh.cells.len(), if fh.complete { "complete" } else { "blocked" });
    }
}

/// Replays the run's monitor actions through the managers; the grants
/// must come back in lock order.
fn manager_check(trace: &Trace, managers: usize) -> Result<usize, String> {
    let mut events = Vec::new();
    let mut locks = Vec::new();
    for a in &trace.actions {
        let (Target::Obj(m), Some(op)) = (&a.target, match a.kind {
            Kind::L => Some(Op::Enter),
            Kind::U => Some(Op::Exit),
            _ => None,
        }) else {
            continue;
        };
        if op == Op::Enter {
            locks.push((*m, a.thread));
        }
        events.push(Event { thread: a.thread, op, object: *m });
    }
    let sim = simulate(&events, managers, Arrival::Script);
    if sim.faults() > 0 || sim.grants() != locks || !overlaps(&intervals(&sim.log)).is_empty() {
        return Err(sim.log_text());
    }
    Ok(locks.len())
}

fn cmd_run(a: &RunArgs) -> Result<u8, CliError> {
    let p = program(&a.program)?;
    let cfg = RunConfig {
        checkpoints: a.checkpoints,
        mode: match a.mode {
            StepMode::Macro => Mode::Macro,
            StepMode::Fine => Mode::Fine,
        },
        implicit_noise: a.implicit,
        migrate_noise: a.migrate,
        budget: a.budget,
        ..a.machine.config()
    };
    let r = match a.schedule.split_once(':') {
        None if a.schedule == "random" => run_random(&p, &cfg, a.seed)?,
        Some(("replay", path)) => {
            let path = Path::new(path);
            let ds = parse_decisions(&read(path)?).map_err(|e| CliError::Input { path: path.into(), msg: e.to_string() })?;
            replay(&p, &cfg, &ds)?
        }
        Some(("exhaustive", depth)) => {
            let depth = depth.parse().map_err(|_| CliError::Schedule(a.schedule.clone()))?;
            return explore_program(&p, cfg.cores, cfg.capacity, ExploreOpts::default(), Limits { max_depth: depth, ..Limits::default() }, false);
        }
        _ => return Err(CliError::Schedule(a.schedule.clone())),
    };
    let trace_path = a.trace.clone().unwrap_or_else(|| a.program.with_extension("trace.jsonl"));
    write(&trace_path, &r.trace.to_jsonl())?;
    if let Some(s) = &a.schedule_out {
        write(s, &djc::run::decisions_to_string(&r.decisions))?;
    }
    summary(&r, &p);
    println!("trace: {}", trace_path.display());
    let rep = check_all(&r.trace, r.checkpoints.as_deref(), &RuleSet::all());
    print!("{}", rep.to_jsonl());
    match manager_check(&r.trace, a.managers as usize) {
        Ok(n) => println!("managers: {n} grant(s) across {} manager(s) in lock order", a.managers),
        Err(log) => {
            println!("managers: grants diverge from the trace\n{log}");
            return Ok(VIOLATIONS);
        }
    }
    Ok(match r.outcome {
        _ if !rep.is_clean() => VIOLATIONS,
        Outcome::Completed => CLEAN,
        Outcome::Deadlock(_) => DEADLOCK,
        Outcome::Budget => PARTIAL,
    })
}

fn cmd_check(a: &CheckArgs) -> Result<u8, CliError> {
    let rs = rules(a.rules.as_deref())?;
    let state: Vec<String> = RuleId::all().into_iter().filter(|r| r.is_state_rule() && rs.has(*r)).map(|r| r.to_string()).collect();
    // State rules are skipped by default but refused when asked for.
    if a.rules.is_some() && !state.is_empty() {
        return Err(CliError::NeedsCheckpoints(state.join(",")));
    }
    let trace = Trace::from_jsonl(&read(&a.trace)?).map_err(|e| CliError::Input { path: a.trace.clone(), msg: e.to_string() })?;
    let rep = check(&trace, &rs);
    print!("{}", rep.to_jsonl());
    Ok(if rep.is_clean() { CLEAN } else { VIOLATIONS })
}

fn explore_program(p: &Program, cores: usize, capacity: usize, opts: ExploreOpts, limits: Limits, sc: bool) -> Result<u8, CliError> {
    let ex = explore(p, cores, capacity, opts, limits, Exec::default())?;
    let s = &ex.search;
    println!("states: {} depth: {}{}", s.states, s.depth, if s.partial { " (partial)" } else { "" });
    for (fh, n) in &s.finals {
        println!("final x{n}: {fh}");
    }
    let mut code = if s.partial { PARTIAL } else { CLEAN };
    if let Some((v, _)) = &s.violation {
        println!("violation: {v}");
        code = VIOLATIONS;
    }
    if sc {
        match djc::check::sc::sc_outcomes(p, limits, Exec::default()) {
            Some(o) => {
                let extra: Vec<_> = s.finals.keys().filter(|f| f.complete && !o.finals.contains(f)).collect();
                println!("sc finals: {}{}", o.finals.len(), if o.partial { " (partial)" } else { "" });
                for f in &extra {
                    println!("not sc: {f}");
                }
                if o.partial {
                    code = code.max(PARTIAL);
                }
            }
            None => println!("sc finals: unavailable"),
        }
        match djc::check::sc::is_drf(p, limits, Exec::default()) {
            Some(djc::check::sc::Drf::Free) => println!("drf: yes"),
            Some(djc::check::sc::Drf::Race(r)) => println!("drf: no ({r})"),
            _ => println!("drf: unknown"),
        }
    }
    Ok(code)
}

fn cmd_explore(a: &ExploreArgs) -> Result<u8, CliError> {
    let p = program(&a.program)?;
    let opts = ExploreOpts { implicit: !a.no_implicit, migrate: a.migrate };
    let limits = Limits { max_depth: a.depth, max_states: a.max_states };
    explore_program(&p, a.cores as usize, a.wb_threshold as usize, opts, limits, a.sc)
}

fn cmd_syncmgr(a: &SyncArgs) -> Result<u8, CliError> {
    let events = parse_script(&read(&a.script)?).map_err(|e| CliError::Input { path: a.script.clone(), msg: e.to_string() })?;
    let arrival = a.shuffle.map_or(Arrival::Script, Arrival::Shuffled);
    let sim = simulate(&events, a.managers as usize, arrival);
    print!("{}", sim.log_text());
    Ok(if sim.faults() > 0 {
        VIOLATIONS
    } else if !sim.stalled.is_empty() {
        eprintln!("stalled: {:?}", sim.stalled);
        DEADLOCK
    } else {
        CLEAN
    })
}

fn cmd_compare(a: &CompareArgs) -> Result<u8, CliError> {
    let p = program(&a.program)?;
    let cfg = RunConfig { cores: a.cores as usize, width: a.cores as usize, ..RunConfig::default() };
    let mut policies = vec![Policy::Eager];
    for &t in &a.thresholds {
        policies.push(format!("buffered:{t}").parse()?);
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let c = compare(&p, &cfg, &policies, &seeds, Exec::default())?;
    print!("{}", c.to_csv());
    for (s, ok) in &c.heaps_agree {
        if !ok {
            eprintln!("seed {s}: policies reached different final heaps");
        }
    }
    Ok(CLEAN)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Explore(a) => cmd_explore(a),
        Cmd::Syncmgr(a) => cmd_syncmgr(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("djcsim: {e}");
            ExitCode::from(e.code())
        }
    }
}
