//! Write-back policies compared by operation counts under identical
//! program-level schedules.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::machine::{Code, FinalHeap};
use crate::run::{Choice, Machine, Outcome, RunConfig, RunError, RunResult};
use crate::step::Mode;
use crate::syntax::Program;
use crate::trace::{Kind, Target, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Every write is written back at once.
    Eager,
    /// Dirty data stays buffered until a release or until the buffer holds
    /// `threshold` variables.
    Buffered(usize),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Eager => f.write_str("eager"),
            Policy::Buffered(n) => write!(f, "buffered:{n}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad policy `{0}`: expected `eager` or `buffered:<n>` with n >= 1")]
pub struct PolicyParseError(String);

impl FromStr for Policy {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Policy, PolicyParseError> {
        let bad = || PolicyParseError(s.to_string());
        match s.split_once(':') {
            None if s == "eager" => Ok(Policy::Eager),
            Some(("buffered", n)) => match n.parse() {
                Ok(n) if n >= 1 => Ok(Policy::Buffered(n)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl Policy {
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        match self {
            Policy::Eager => RunConfig { eager: true, ..cfg.clone() },
            Policy::Buffered(n) => RunConfig { eager: false, capacity: n, ..cfg.clone() },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpMetrics {
    pub writebacks: usize,
    pub fetches: usize,
    pub invalidations: usize,
    pub bulk_runs: usize,
    pub sync_actions: usize,
}

/// Counts over non-prologue actions. A bulk run is a maximal stretch of
/// two or more consecutive write-backs on one object whose field indices
/// ascend by one.
pub fn metrics(trace: &Trace, field_index: impl Fn(u32, &str) -> Option<usize>) -> OpMetrics {
    let mut m = OpMetrics::default();
    let mut run: Option<(u32, usize, usize)> = None;
    for a in trace.actions.iter().filter(|a| !a.prologue) {
        match a.kind {
            Kind::B => m.writebacks += 1,
            Kind::F => m.fetches += 1,
            Kind::I => m.invalidations += 1,
            k if k.is_sync() => m.sync_actions += 1,
            _ => {}
        }
        let here = match (a.kind, &a.target) {
            (Kind::B, Target::Var(r, f)) => field_index(*r, f).map(|i| (*r, i)),
            _ => None,
        };
        run = match (run, here) {
            (Some((r0, i0, n)), Some((r, i))) if r0 == r && i == i0 + 1 => Some((r, i, n + 1)),
            (prev, next) => {
                if prev.is_some_and(|p| p.2 >= 2) {
                    m.bulk_runs += 1;
                }
                next.map(|(r, i)| (r, i, 1))
            }
        };
    }
    if run.is_some_and(|p| p.2 >= 2) {
        m.bulk_runs += 1;
    }
    m
}

/// Runs one thread step per transition, choosing uniformly among ready
/// threads. The choices depend only on program-level state, so a seed
/// fixes the same schedule under every policy for data-race-free programs.
pub fn run_scheduled(code: Arc<Code>, cfg: &RunConfig, seed: u64) -> Result<RunResult, RunError> {
    let cfg = RunConfig { mode: Mode::Macro, width: 1, implicit_noise: 0.0, migrate_noise: 0.0, ..cfg.clone() };
    let mut m = Machine::boot_code(code, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while m.step < cfg.budget {
        let (ready, _) = m.survey();
        let mut threads: Vec<_> = ready.iter().map(|(ti, _)| (m.state.threads[*ti].thread, *ti)).collect();
        threads.sort();
        let Some(&(_, ti)) = threads.choose(&mut rng) else { break };
        m.transition(&[Choice::Thread(ti)])?;
    }
    Ok(m.finish())
}

#[derive(Debug)]
pub struct PolicyRun {
    pub result: RunResult,
    pub metrics: OpMetrics,
}

pub fn run_with_policy(program: &Program, cfg: &RunConfig, policy: Policy, seed: u64) -> Result<PolicyRun, RunError> {
    run_code_with_policy(Code::new(program.clone()), cfg, policy, seed)
}

fn run_code_with_policy(code: Arc<Code>, cfg: &RunConfig, policy: Policy, seed: u64) -> Result<PolicyRun, RunError> {
    let result = run_scheduled(code.clone(), &policy.apply(cfg), seed)?;
    let metrics = metrics(&result.trace, |r, f| {
        let class = result.state.heap.get(r as usize)?.class;
        code.classes[class as usize].fields.iter().position(|x| &**x == f)
    });
    Ok(PolicyRun { result, metrics })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub policy: String,
    pub seed: u64,
    pub metrics: OpMetrics,
}

pub const CSV_HEADER: [&str; 7] = ["policy", "seed", "writebacks", "fetches", "invalidations", "bulkRuns", "syncActions"];

#[derive(Clone, Debug)]
pub struct Comparison {
    pub rows: Vec<Row>,
    /// Per seed: whether every policy reached the same final heap.
    pub heaps_agree: Vec<(u64, bool)>,
    pub outcomes: Vec<(Policy, u64, Outcome, FinalHeap)>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let m = &r.metrics;
            let nums = [m.writebacks, m.fetches, m.invalidations, m.bulk_runs, m.sync_actions];
            let mut rec = vec![r.policy.clone(), r.seed.to_string()];
            rec.extend(nums.iter().map(usize::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }
}

/// Every policy against every seed, one row each, policies outermost.
pub fn compare(program: &Program, cfg: &RunConfig, policies: &[Policy], seeds: &[u64], exec: Exec) -> Result<Comparison, RunError> {
    let code = Code::new(program.clone());
    let jobs: Vec<(Policy, u64)> = policies.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let runs = exec.map(&jobs, |&(p, s)| run_code_with_policy(code.clone(), cfg, p, s));
    let mut rows = Vec::with_capacity(jobs.len());
    let mut outcomes = Vec::with_capacity(jobs.len());
    for (&(p, s), r) in jobs.iter().zip(runs) {
        let r = r?;
        rows.push(Row { policy: p.to_string(), seed: s, metrics: r.metrics });
        outcomes.push((p, s, r.result.outcome.clone(), r.result.final_heap()));
    }
    let heaps_agree = seeds
        .iter()
        .map(|&s| {
            let mut hs = outcomes.iter().filter(|o| o.1 == s).map(|o| &o.3);
            let first = hs.next();
            (s, hs.all(|h| Some(h) == first))
        })
        .collect();
    Ok(Comparison { rows, heaps_agree, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in [Policy::Eager, Policy::Buffered(16), Policy::Buffered(1)] {
            assert_eq!(p.to_string().parse::<Policy>(), Ok(p));
        }
        assert!("buffered:0".parse::<Policy>().is_err());
        assert!("lazy".parse::<Policy>().is_err());
    }

    #[test]
    fn csv_header_and_shape() {
        let c = Comparison {
            rows: vec![Row { policy: "eager".into(), seed: 3, metrics: OpMetrics { writebacks: 5, bulk_runs: 0, ..OpMetrics::default() } }],
            heaps_agree: vec![],
            outcomes: vec![],
        };
        assert_eq!(c.to_csv(), "policy,seed,writebacks,fetches,invalidations,bulkRuns,syncActions\neager,3,5,0,0,0,0\n");
    }
}
