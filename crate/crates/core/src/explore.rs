//! Exhaustive breadth-first enumeration of interleavings with state-hash
//! deduplication. Each transition steps a single core, which covers every
//! ParG composition up to reordering of independent steps.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::exec::Exec;
use crate::machine::{Body, Code, FinalHeap, MachineState, Recorder};
use crate::run::{Choice, Machine, RunConfig, RunError, RunResult};
use crate::step::{self, Mode};
use crate::syntax::Program;
use crate::trace::CoreId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    /// Maximum number of transitions on any path.
    pub max_depth: usize,
    pub max_states: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_depth: 10_000, max_states: 2_000_000 }
    }
}

/// A transition system to enumerate.
pub trait Space: Sync {
    type State: Clone + Send + Sync;
    type Move: Clone + Send + Sync;

    fn fingerprint(&self, s: &Self::State) -> u128;
    /// `None` for terminal states.
    fn successors(&self, s: &Self::State) -> Option<Vec<(Self::Move, Self::State)>>;
    fn outcome(&self, s: &Self::State) -> FinalHeap;
    /// A property violation observed on reaching `s`.
    fn violation(&self, _s: &Self::State) -> Option<String> {
        None
    }
}

#[derive(Debug)]
pub struct Search<M> {
    /// Each distinct final heap with the first node that reached it.
    pub finals: BTreeMap<FinalHeap, usize>,
    pub states: usize,
    pub depth: usize,
    /// A limit cut the enumeration short.
    pub partial: bool,
    pub violation: Option<(String, usize)>,
    nodes: Vec<(usize, Option<M>)>,
}

impl<M: Clone> Search<M> {
    /// Moves from the initial state to `node`.
    pub fn path(&self, mut node: usize) -> Vec<M> {
        let mut out = Vec::new();
        while let (parent, Some(m)) = &self.nodes[node] {
            out.push(m.clone());
            node = *parent;
        }
        out.reverse();
        out
    }
}

pub fn search<S: Space>(space: &S, init: S::State, limits: Limits, exec: Exec) -> Search<S::Move> {
    let mut seen: HashSet<u128> = HashSet::new();
    seen.insert(space.fingerprint(&init));
    let mut out = Search {
        finals: BTreeMap::new(),
        states: 1,
        depth: 0,
        partial: false,
        violation: None,
        nodes: vec![(0, None)],
    };
    if let Some(v) = space.violation(&init) {
        out.violation = Some((v, 0));
        return out;
    }
    let mut frontier: Vec<(usize, S::State)> = vec![(0, init)];
    while !frontier.is_empty() {
        if out.depth >= limits.max_depth {
            out.partial = true;
            break;
        }
        let expanded = exec.map(&frontier, |(_, s)| match space.successors(s) {
            None => Err(space.outcome(s)),
            Some(succ) => Ok(succ.into_iter().map(|(m, t)| (space.fingerprint(&t), m, t)).collect::<Vec<_>>()),
        });
        let mut next = Vec::new();
        for ((node, _), e) in frontier.iter().zip(expanded) {
            match e {
                Err(fh) => {
                    out.finals.entry(fh).or_insert(*node);
                }
                Ok(succ) => {
                    for (fp, m, t) in succ {
                        if !seen.insert(fp) {
                            continue;
                        }
                        out.nodes.push((*node, Some(m)));
                        let id = out.nodes.len() - 1;
                        if out.violation.is_none() {
                            if let Some(v) = space.violation(&t) {
                                out.violation = Some((v, id));
                            }
                        }
                        next.push((id, t));
                    }
                }
            }
        }
        out.states = out.nodes.len();
        out.depth += 1;
        if out.violation.is_some() {
            out.partial = !next.is_empty();
            break;
        }
        if out.states > limits.max_states {
            out.partial = true;
            break;
        }
        frontier = next;
    }
    out
}

/// Which nondeterminism of the cache machine to enumerate beyond thread
/// interleaving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExploreOpts {
    /// Spontaneous write-backs, refetches and invalidations.
    pub implicit: bool,
    pub migrate: bool,
}

impl Default for ExploreOpts {
    fn default() -> Self {
        ExploreOpts { implicit: true, migrate: true }
    }
}

/// The cache machine in fine-grained mode.
pub struct CacheSpace {
    pub opts: ExploreOpts,
}

impl Space for CacheSpace {
    type State = MachineState;
    type Move = Choice;

    fn fingerprint(&self, s: &MachineState) -> u128 {
        s.fingerprint()
    }

    fn successors(&self, s: &MachineState) -> Option<Vec<(Choice, MachineState)>> {
        let mut moves = Vec::new();
        for ti in 0..s.threads.len() {
            if step::next_micro(s, ti).is_ok() {
                moves.push(Choice::Thread(ti));
            }
        }
        if moves.is_empty() {
            return None;
        }
        if self.opts.implicit {
            for c in 0..s.cores.len() as CoreId {
                let Some(owner) = step::core_owner(s, c) else { continue };
                for imp in step::spontaneous(s, c) {
                    moves.push(Choice::Implicit { core: c, thread: owner, step: imp });
                }
            }
        }
        if self.opts.migrate {
            for ti in 0..s.threads.len() {
                if !matches!(s.threads[ti].body, Body::Run(_)) {
                    continue;
                }
                for dest in 0..s.cores.len() as CoreId {
                    if step::can_migrate(s, ti, dest) {
                        moves.push(Choice::Migrate { thread: ti, dest });
                    }
                }
            }
        }
        let out = moves
            .into_iter()
            .filter_map(|m| {
                let mut t = s.clone();
                let mut rec = Recorder::new(0);
                let ok = match m {
                    Choice::Thread(ti) => step::step(&mut t, ti, Mode::Fine, &mut rec).is_ok(),
                    Choice::Implicit { core, thread, step: imp } => t.apply_implicit(core, thread, imp, &mut rec).is_ok(),
                    Choice::Migrate { thread, dest } => step::migrate(&mut t, thread, dest, &mut rec).is_ok(),
                };
                ok.then_some((m, t))
            })
            .collect();
        Some(out)
    }

    fn outcome(&self, s: &MachineState) -> FinalHeap {
        s.final_heap()
    }
}

#[derive(Debug)]
pub struct Exploration {
    pub search: Search<Choice>,
    code: Arc<Code>,
    cfg: RunConfig,
}

impl Exploration {
    pub fn finals(&self) -> impl Iterator<Item = &FinalHeap> {
        self.search.finals.keys()
    }

    /// Replays the first path found to `fh`, with full trace and provenance.
    pub fn representative(&self, fh: &FinalHeap) -> Option<Result<RunResult, RunError>> {
        let &node = self.search.finals.get(fh)?;
        Some(self.replay_node(node))
    }

    pub fn replay_node(&self, node: usize) -> Result<RunResult, RunError> {
        let mut m = Machine::boot_code(self.code.clone(), &self.cfg)?;
        for c in self.search.path(node) {
            m.transition(&[c])?;
        }
        Ok(m.finish())
    }
}

/// Default core count for exploration: one per thread is rarely needed, so
/// keep the space small.
pub const EXPLORE_CORES: usize = 2;

pub fn explore(program: &Program, cores: usize, capacity: usize, opts: ExploreOpts, limits: Limits, exec: Exec) -> Result<Exploration, RunError> {
    let cfg = RunConfig { cores, capacity, mode: Mode::Fine, ..RunConfig::default() };
    let code = Code::new(program.clone());
    let m = Machine::boot_code(code.clone(), &cfg)?;
    let search = search(&CacheSpace { opts }, m.state, limits, exec);
    Ok(Exploration { search, code, cfg })
}
