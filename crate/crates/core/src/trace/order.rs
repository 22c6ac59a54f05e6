//! Program order, synchronization order, synchronizes-with and
//! happens-before over a flattened trace.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use super::{Action, Kind, Target, Trace, Uid};
use crate::syntax::Ref;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SwKind {
    InitStart,
    Volatile,
    Monitor,
    SpawnStart,
    FinishJoin,
    Interrupt,
    /// Write-back to fetch; kept out of happens-before.
    Cache,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwEdge {
    pub from: Uid,
    pub to: Uid,
    pub kind: SwKind,
}

impl SwEdge {
    pub fn cache_edge(&self) -> bool {
        self.kind == SwKind::Cache
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrderError {
    #[error("happens-before has a cycle through {0} action(s)")]
    Cycle(usize),
    #[error("duplicate uid {0}")]
    DuplicateUid(Uid),
}

/// Orders derived from one trace. Indices are positions in `trace.actions`.
pub struct Orders<'t> {
    pub trace: &'t Trace,
    pub index: HashMap<Uid, usize>,
    thread_ix: Vec<usize>,
    nthreads: usize,
    /// Vector clocks, `nthreads` entries per action.
    clocks: Vec<u32>,
    sw: Vec<(usize, usize, SwKind)>,
}

impl<'t> Orders<'t> {
    pub fn new(trace: &'t Trace) -> Result<Orders<'t>, OrderError> {
        let acts = &trace.actions;
        let mut index = HashMap::with_capacity(acts.len());
        for (i, a) in acts.iter().enumerate() {
            if index.insert(a.uid, i).is_some() {
                return Err(OrderError::DuplicateUid(a.uid));
            }
        }
        let mut threads: HashMap<Ref, usize> = HashMap::new();
        let thread_ix: Vec<usize> = acts
            .iter()
            .map(|a| {
                let n = threads.len();
                *threads.entry(a.thread).or_insert(n)
            })
            .collect();
        let nthreads = threads.len().max(1);
        let sw = sync_edges(acts);
        let clocks = vector_clocks(acts, &thread_ix, nthreads, &sw)?;
        Ok(Orders { trace, index, thread_ix, nthreads, clocks, sw })
    }

    pub fn action(&self, uid: Uid) -> Option<&'t Action> {
        self.index.get(&uid).map(|&i| &self.trace.actions[i])
    }

    pub fn pos(&self, uid: Uid) -> Option<usize> {
        self.index.get(&uid).copied()
    }

    /// Same thread, earlier in the flattened trace.
    pub fn po(&self, x: usize, y: usize) -> bool {
        x < y && self.trace.actions[x].thread == self.trace.actions[y].thread
    }

    /// Synchronization actions in synchronization order.
    pub fn so(&self) -> Vec<usize> {
        (0..self.trace.actions.len()).filter(|&i| self.trace.actions[i].kind.is_sync()).collect()
    }

    fn clock(&self, i: usize) -> &[u32] {
        &self.clocks[i * self.nthreads..(i + 1) * self.nthreads]
    }

    /// Happens-before between positions.
    pub fn hb(&self, x: usize, y: usize) -> bool {
        if x == y {
            return false;
        }
        let t = self.thread_ix[x];
        self.clock(x)[t] <= self.clock(y)[t]
    }

    pub fn hb_uid(&self, x: Uid, y: Uid) -> bool {
        match (self.pos(x), self.pos(y)) {
            (Some(a), Some(b)) => self.hb(a, b),
            _ => false,
        }
    }

    /// All synchronizes-with pairs, including the cache edges.
    pub fn sw(&self) -> Vec<SwEdge> {
        let acts = &self.trace.actions;
        let mut out: Vec<SwEdge> = self
            .sw
            .iter()
            .map(|&(f, t, kind)| SwEdge { from: acts[f].uid, to: acts[t].uid, kind })
            .collect();
        let starts: Vec<Uid> = acts.iter().filter(|a| a.kind == Kind::S).map(|a| a.uid).collect();
        for a in acts.iter().filter(|a| a.kind == Kind::In) {
            for &s in &starts {
                out.push(SwEdge { from: a.uid, to: s, kind: SwKind::InitStart });
            }
        }
        for (i, a) in acts.iter().enumerate() {
            if a.kind == Kind::F {
                for (_, b) in &a.prov.bf {
                    if self.index.contains_key(b) {
                        out.push(SwEdge { from: *b, to: acts[i].uid, kind: SwKind::Cache });
                    }
                }
            }
        }
        out.sort();
        out
    }
}

fn same_var(a: &Action, b: &Action) -> bool {
    matches!((&a.target, &b.target), (Target::Var(r, f), Target::Var(s, g)) if r == s && f == g)
}

/// Release-acquire pairs other than initialization and cache edges.
fn sync_edges(acts: &[Action]) -> Vec<(usize, usize, SwKind)> {
    let mut out = Vec::new();
    let mut last_vw: HashMap<(Ref, &str), usize> = HashMap::new();
    let mut last_unlock: HashMap<Ref, usize> = HashMap::new();
    let mut spawn: HashMap<Ref, usize> = HashMap::new();
    let mut finish: HashMap<Ref, usize> = HashMap::new();
    let mut interrupts: HashMap<Ref, Vec<usize>> = HashMap::new();
    for (i, a) in acts.iter().enumerate() {
        match (a.kind, &a.target) {
            (Kind::Vw, Target::Var(r, f)) => {
                last_vw.insert((*r, f), i);
            }
            (Kind::In, Target::Var(r, f)) => {
                last_vw.remove(&(*r, &**f));
            }
            (Kind::Vr, Target::Var(r, f)) => {
                if let Some(&w) = last_vw.get(&(*r, &**f)) {
                    debug_assert!(same_var(&acts[w], a));
                    out.push((w, i, SwKind::Volatile));
                }
            }
            (Kind::U, Target::Obj(m)) => {
                last_unlock.insert(*m, i);
            }
            (Kind::L, Target::Obj(m)) => {
                if let Some(u) = last_unlock.remove(m) {
                    out.push((u, i, SwKind::Monitor));
                }
            }
            (Kind::Sp, Target::Obj(t)) => {
                spawn.insert(*t, i);
            }
            (Kind::S, _) => {
                if let Some(&sp) = spawn.get(&a.thread) {
                    out.push((sp, i, SwKind::SpawnStart));
                }
            }
            (Kind::Fi, _) => {
                finish.insert(a.thread, i);
            }
            (Kind::J, Target::Obj(t)) => {
                if let Some(&fi) = finish.get(t) {
                    out.push((fi, i, SwKind::FinishJoin));
                }
            }
            (Kind::Ir, Target::Obj(t)) => interrupts.entry(*t).or_default().push(i),
            (Kind::Ird, Target::Obj(t)) => {
                for &ir in interrupts.get(t).into_iter().flatten() {
                    out.push((ir, i, SwKind::Interrupt));
                }
            }
            _ => {}
        }
    }
    out
}

/// Vector clocks over po, the synchronizes-with edges and the
/// initialization-to-start edges, in topological order.
fn vector_clocks(
    acts: &[Action],
    thread_ix: &[usize],
    nthreads: usize,
    sw: &[(usize, usize, SwKind)],
) -> Result<Vec<u32>, OrderError> {
    let n = acts.len();
    // Node `n` stands between every prologue action and every start.
    let hub = n;
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut indeg = vec![0u32; n + 1];
    let mut edge = |a: usize, b: usize, succ: &mut Vec<Vec<usize>>| {
        succ[a].push(b);
        indeg[b] += 1;
    };
    let mut last: Vec<Option<usize>> = vec![None; nthreads];
    for (i, a) in acts.iter().enumerate() {
        let t = thread_ix[i];
        if let Some(p) = last[t] {
            edge(p, i, &mut succ);
        }
        last[t] = Some(i);
        if a.prologue {
            edge(i, hub, &mut succ);
        }
        if a.kind == Kind::S {
            edge(hub, i, &mut succ);
        }
    }
    for &(f, t, _) in sw {
        edge(f, t, &mut succ);
    }
    let mut clocks = vec![0u32; (n + 1) * nthreads];
    let mut queue: VecDeque<usize> = (0..=n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        if i < n {
            clocks[i * nthreads + thread_ix[i]] += 1;
        }
        for &j in &succ[i] {
            for c in 0..nthreads {
                let v = clocks[i * nthreads + c];
                let w = &mut clocks[j * nthreads + c];
                *w = (*w).max(v);
            }
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if seen != n + 1 {
        return Err(OrderError::Cycle(n + 1 - seen));
    }
    clocks.truncate(n * nthreads);
    Ok(clocks)
}

/// Pairs of non-prologue synchronization actions sharing a position.
pub fn positions_tied(trace: &Trace) -> Vec<(usize, usize)> {
    let mut ties = Vec::new();
    let mut by_pos: HashMap<(u64, u32), usize> = HashMap::new();
    for (i, a) in trace.actions.iter().enumerate() {
        if a.prologue || !a.kind.is_sync() {
            continue;
        }
        if let Some(&j) = by_pos.get(&(a.step, a.ord)) {
            ties.push((j, i));
        } else {
            by_pos.insert((a.step, a.ord), i);
        }
    }
    ties
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Prov;
    use std::sync::Arc;

    fn act(uid: Uid, thread: Ref, kind: Kind, target: Target) -> Action {
        Action {
            uid,
            step: uid + 1,
            ord: 0,
            core: thread,
            thread,
            kind,
            target,
            value: None,
            prologue: false,
            vol: false,
            prov: Prov::default(),
        }
    }

    fn var(r: Ref, f: &str) -> Target {
        Target::Var(r, Arc::from(f))
    }

    #[test]
    fn unlock_lock_orders_write_before_read() {
        let t = Trace {
            actions: vec![
                act(0, 1, Kind::W, var(5, "f")),
                act(1, 1, Kind::U, Target::Obj(5)),
                act(2, 2, Kind::L, Target::Obj(5)),
                act(3, 2, Kind::R, var(5, "f")),
            ],
        };
        let o = Orders::new(&t).unwrap();
        assert!(o.hb(0, 3));
        assert!(!o.hb(3, 0));
        assert!(o.sw().iter().any(|e| e.from == 1 && e.to == 2 && e.kind == SwKind::Monitor));
    }

    #[test]
    fn racy_writes_are_unordered() {
        let t = Trace { actions: vec![act(0, 1, Kind::W, var(5, "f")), act(1, 2, Kind::W, var(5, "f"))] };
        let o = Orders::new(&t).unwrap();
        assert!(!o.hb(0, 1) && !o.hb(1, 0));
        assert!(!o.po(0, 1));
    }

    #[test]
    fn volatile_edge_needs_no_intervening_write() {
        let t = Trace {
            actions: vec![
                act(0, 1, Kind::Vw, var(5, "v")),
                act(1, 2, Kind::Vr, var(5, "v")),
                act(2, 3, Kind::Vw, var(5, "v")),
                act(3, 2, Kind::Vr, var(5, "v")),
            ],
        };
        let o = Orders::new(&t).unwrap();
        let sw = o.sw();
        assert!(sw.contains(&SwEdge { from: 0, to: 1, kind: SwKind::Volatile }));
        assert!(sw.contains(&SwEdge { from: 2, to: 3, kind: SwKind::Volatile }));
        assert!(!sw.iter().any(|e| e.from == 0 && e.to == 3));
        assert!(o.hb(0, 3));
    }

    #[test]
    fn start_before_prologue_is_a_cycle() {
        let mut init = act(1, 1, Kind::In, var(0, "f"));
        init.prologue = true;
        let t = Trace { actions: vec![act(0, 1, Kind::S, Target::None), init] };
        assert_eq!(Orders::new(&t).err(), Some(OrderError::Cycle(3)));
    }
}
