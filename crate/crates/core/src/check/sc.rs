//! Reference semantics on an idealized coherent memory: no caches, one
//! shared store, one redex per step. Optionally tracks vector clocks to
//! detect data races across all sequentially consistent executions.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::context::{plug, redex};
use crate::exec::Exec;
use crate::explore::{search, Limits, Space};
use crate::machine::{FinalHeap, Life};
use crate::syntax::{substitute, ClassDef, Expr, Intrinsic, Program, Ref, Type, Value, THIS};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Body {
    Start,
    Run(Expr),
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Obj {
    class: usize,
    vals: Vec<Value>,
    lock: Option<(Ref, u32)>,
    life: Option<Life>,
}

type Clock = Vec<u32>;

fn join(into: &mut Clock, from: &Clock) {
    if into.len() < from.len() {
        into.resize(from.len(), 0);
    }
    for (a, b) in into.iter_mut().zip(from) {
        *a = (*a).max(*b);
    }
}

fn at(c: &Clock, i: usize) -> u32 {
    c.get(i).copied().unwrap_or(0)
}

/// Last accesses of a plain variable as `(thread index, clock)` epochs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Access {
    write: Option<(usize, u32)>,
    reads: BTreeMap<usize, u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Clocks {
    threads: Vec<Clock>,
    /// Released clock per monitor, volatile variable, and thread object.
    locks: BTreeMap<Ref, Clock>,
    vols: BTreeMap<(Ref, usize), Clock>,
    spawned: BTreeMap<Ref, Clock>,
    finished: BTreeMap<Ref, Clock>,
    interrupted: BTreeMap<Ref, Clock>,
    vars: BTreeMap<(Ref, usize), Access>,
}

impl Clocks {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut Clock> {
        self.threads
            .iter_mut()
            .chain(self.locks.values_mut())
            .chain(self.vols.values_mut())
            .chain(self.spawned.values_mut())
            .chain(self.finished.values_mut())
            .chain(self.interrupted.values_mut())
    }

    /// Replaces each component's values by their rank. Order and maxima are
    /// all the race check looks at, so states differing only in absolute
    /// clock values merge and polling loops stay finite.
    fn canonicalize(&mut self) {
        for u in 0..self.threads.len() {
            let mut seen: BTreeSet<u32> = BTreeSet::from([0]);
            for c in self.all_mut() {
                seen.insert(at(c, u));
            }
            for a in self.vars.values() {
                seen.extend(a.write.filter(|w| w.0 == u).map(|w| w.1));
                seen.extend(a.reads.get(&u));
            }
            let rank: HashMap<u32, u32> = seen.into_iter().zip(0..).collect();
            for c in self.all_mut() {
                if let Some(x) = c.get_mut(u) {
                    *x = rank[x];
                }
            }
            for a in self.vars.values_mut() {
                if let Some(w) = a.write.as_mut().filter(|w| w.0 == u) {
                    w.1 = rank[&w.1];
                }
                if let Some(k) = a.reads.get_mut(&u) {
                    *k = rank[k];
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScState {
    heap: Vec<Obj>,
    threads: Vec<(Ref, Body)>,
    clocks: Option<Clocks>,
    race: Option<String>,
}

struct Prog {
    program: Program,
    volatile: Vec<Vec<bool>>,
}

impl Prog {
    fn class(&self, o: &Obj) -> &ClassDef {
        &self.program.classes[o.class]
    }
}

enum Move {
    Blocked,
    Next(Box<ScState>),
}

impl ScState {
    fn boot(p: &Prog, track: bool) -> Option<ScState> {
        let main = p.program.class_index("Main")?;
        p.program.classes[main].method("run")?;
        let mut s = ScState { heap: Vec::new(), threads: Vec::new(), clocks: None, race: None };
        let r = s.alloc(p, main);
        s.heap[r as usize].life = Some(Life::Spawned);
        s.threads.push((r, Body::Start));
        if track {
            s.clocks = Some(Clocks { threads: vec![vec![1]], ..Clocks::default() });
        }
        Some(s)
    }

    fn alloc(&mut self, p: &Prog, class: usize) -> Ref {
        let cd = &p.program.classes[class];
        self.heap.push(Obj {
            class,
            vals: cd.fields.iter().map(|f| f.ty.default_value()).collect(),
            lock: None,
            life: None,
        });
        (self.heap.len() - 1) as Ref
    }

    fn obj(&self, v: Value) -> Option<Ref> {
        v.as_ref().filter(|r| (*r as usize) < self.heap.len())
    }

    fn final_heap(&self, p: &Prog) -> FinalHeap {
        let mut cells = Vec::new();
        for (r, o) in self.heap.iter().enumerate() {
            for (f, v) in p.class(o).fields.iter().zip(&o.vals) {
                cells.push((r as Ref, Arc::from(f.name.as_str()), *v));
            }
        }
        FinalHeap::from_cells(cells, self.threads.iter().all(|t| t.1 == Body::Done))
    }

    fn release(&mut self, ti: usize, slot: impl FnOnce(&mut Clocks) -> &mut Clock) {
        if let Some(c) = &mut self.clocks {
            let mine = c.threads[ti].clone();
            *slot(c) = mine;
            c.threads[ti][ti] += 1;
        }
    }

    fn acquire(&mut self, ti: usize, slot: impl FnOnce(&Clocks) -> Option<&Clock>) {
        if let Some(c) = &mut self.clocks {
            if let Some(from) = slot(c).cloned() {
                join(&mut c.threads[ti], &from);
            }
        }
    }

    fn access(&mut self, ti: usize, var: (Ref, usize), write: bool, name: &str) {
        let Some(c) = &mut self.clocks else { return };
        let me = &c.threads[ti];
        let a = c.vars.entry(var).or_default();
        let mut racer = None;
        if let Some((u, k)) = a.write {
            if u != ti && k > at(me, u) {
                racer = Some((u, "write"));
            }
        }
        if write {
            for (&u, &k) in &a.reads {
                if u != ti && k > at(me, u) {
                    racer = Some((u, "read"));
                }
            }
        }
        if let (Some((u, what)), None) = (racer, &self.race) {
            let kind = if write { "write" } else { "read" };
            self.race = Some(format!(
                "{kind} of r{}.{name} by r{} races with {what} by r{}",
                var.0, self.threads[ti].0, self.threads[u].0
            ));
        }
        let epoch = at(me, ti);
        if write {
            a.write = Some((ti, epoch));
            a.reads.clear();
        } else {
            a.reads.insert(ti, epoch);
        }
    }

    /// One step of thread `ti`, or `None` if it has finished.
    fn step(&self, p: &Prog, ti: usize) -> Option<Move> {
        let (t, body) = &self.threads[ti];
        let t = *t;
        let mut s = self.clone();
        let e = match body {
            Body::Done => return None,
            Body::Start => {
                s.heap[t as usize].life = Some(Life::Started);
                s.threads[ti].1 = Body::Run(Expr::Call(Box::new(Expr::Val(Value::Ref(t))), "run".into(), vec![]));
                s.acquire(ti, |c| c.spawned.get(&t));
                return Some(Move::Next(Box::new(s)));
            }
            Body::Run(e) => e,
        };
        let Some(rx) = redex(e) else {
            s.heap[t as usize].life = Some(Life::Finished);
            s.threads[ti].1 = Body::Done;
            s.release(ti, |c| c.finished.entry(t).or_default());
            return Some(Move::Next(Box::new(s)));
        };
        let out = match rx {
            Expr::Var(_) => None,
            Expr::Val(_) => unreachable!("values are not redexes"),
            Expr::Let(x, _, v, b) => Some(crate::syntax::substitute_one(b, x, v.value()?)),
            Expr::If(c, a, b) => match c.value()? {
                Value::Bool(true) => Some((**a).clone()),
                Value::Bool(false) => Some((**b).clone()),
                _ => None,
            },
            Expr::Builtin(b, args) => {
                let vals: Vec<Value> = args.iter().filter_map(Expr::value).collect();
                b.eval(&vals).map(Expr::Val)
            }
            Expr::New(c, args) => p.program.class_index(c).map(|class| {
                let r = s.alloc(p, class);
                let cd = &p.program.classes[class];
                let mut b: HashMap<String, Value> =
                    cd.fields.iter().map(|f| f.name.clone()).zip(args.iter().filter_map(Expr::value)).collect();
                b.insert(THIS.into(), Value::Ref(r));
                let ctor = substitute(&cd.ctor(), &b);
                Expr::Let("_".into(), Type::Unit, Box::new(ctor), Box::new(Expr::Val(Value::Ref(r))))
            }),
            Expr::Call(target, m, args) => s.obj(target.value()?).and_then(|r| {
                let md = p.class(&s.heap[r as usize]).method(m)?;
                if md.params.len() != args.len() {
                    return None;
                }
                let mut b: HashMap<String, Value> =
                    md.params.iter().map(|(x, _)| x.clone()).zip(args.iter().filter_map(Expr::value)).collect();
                b.insert(THIS.into(), Value::Ref(r));
                Some(substitute(&md.body, &b))
            }),
            Expr::Get(target, f) => s.obj(target.value()?).and_then(|r| {
                let o = &s.heap[r as usize];
                let i = p.class(o).field_index(f)?;
                let v = o.vals[i];
                if p.volatile[o.class][i] {
                    s.acquire(ti, |c| c.vols.get(&(r, i)));
                } else {
                    s.access(ti, (r, i), false, f);
                }
                Some(Expr::Val(v))
            }),
            Expr::Set(target, f, v) => s.obj(target.value()?).and_then(|r| {
                let v = v.value()?;
                let class = s.heap[r as usize].class;
                let i = p.program.classes[class].field_index(f)?;
                if p.volatile[class][i] {
                    s.release(ti, |c| c.vols.entry((r, i)).or_default());
                } else {
                    s.access(ti, (r, i), true, f);
                }
                s.heap[r as usize].vals[i] = v;
                Some(Expr::Val(v))
            }),
            Expr::MonitorEnter(target) => {
                let Some(r) = s.obj(target.value()?) else { return Some(Move::Blocked) };
                match s.heap[r as usize].lock {
                    None => {
                        s.heap[r as usize].lock = Some((t, 1));
                        s.acquire(ti, |c| c.locks.get(&r));
                    }
                    Some((o, n)) if o == t => s.heap[r as usize].lock = Some((t, n + 1)),
                    Some(_) => return Some(Move::Blocked),
                }
                Some(Expr::Val(Value::Unit))
            }
            Expr::MonitorExit(target) => s.obj(target.value()?).and_then(|r| match s.heap[r as usize].lock {
                Some((o, 1)) if o == t => {
                    s.heap[r as usize].lock = None;
                    s.release(ti, |c| c.locks.entry(r).or_default());
                    Some(Expr::Val(Value::Unit))
                }
                Some((o, n)) if o == t => {
                    s.heap[r as usize].lock = Some((t, n - 1));
                    Some(Expr::Val(Value::Unit))
                }
                _ => None,
            }),
            Expr::Intrinsic(i, target) => {
                let Some(r) = s.obj(target.value()?) else { return Some(Move::Blocked) };
                if !p.class(&s.heap[r as usize]).is_thread() {
                    return Some(Move::Blocked);
                }
                let life = s.heap[r as usize].life;
                match (i, life) {
                    (Intrinsic::Start, None) => {
                        s.heap[r as usize].life = Some(Life::Spawned);
                        s.threads.push((r, Body::Start));
                        if let Some(c) = &mut s.clocks {
                            let n = s.threads.len();
                            c.threads.push(vec![0; n]);
                            c.threads[n - 1][n - 1] = 1;
                        }
                        s.release(ti, |c| c.spawned.entry(r).or_default());
                        Some(Expr::Val(Value::Unit))
                    }
                    (Intrinsic::Join, Some(Life::Finished)) => {
                        s.acquire(ti, |c| c.finished.get(&r));
                        Some(Expr::Val(Value::Unit))
                    }
                    (Intrinsic::Interrupt, Some(Life::Started)) => {
                        s.heap[r as usize].life = Some(Life::Interrupted);
                        s.release(ti, |c| c.interrupted.entry(r).or_default());
                        Some(Expr::Val(Value::Unit))
                    }
                    (Intrinsic::Interrupted, Some(Life::Interrupted)) => {
                        s.acquire(ti, |c| c.interrupted.get(&r));
                        Some(Expr::Val(Value::Bool(true)))
                    }
                    (Intrinsic::Interrupted, _) => Some(Expr::Val(Value::Bool(false))),
                    _ => None,
                }
            }
        };
        let Some(next) = out else { return Some(Move::Blocked) };
        if let Body::Run(e) = &mut s.threads[ti].1 {
            plug(e, next);
        }
        Some(Move::Next(Box::new(s)))
    }
}

struct ScSpace {
    prog: Prog,
}

impl Space for ScSpace {
    type State = ScState;
    type Move = usize;

    fn fingerprint(&self, s: &ScState) -> u128 {
        let mut a = DefaultHasher::new();
        let mut b = DefaultHasher::new();
        0x5cu8.hash(&mut b);
        s.hash(&mut a);
        s.hash(&mut b);
        ((a.finish() as u128) << 64) | b.finish() as u128
    }

    fn successors(&self, s: &ScState) -> Option<Vec<(usize, ScState)>> {
        let out: Vec<_> = (0..s.threads.len())
            .filter_map(|ti| match s.step(&self.prog, ti)? {
                Move::Next(mut n) => {
                    if let Some(c) = &mut n.clocks {
                        c.canonicalize();
                    }
                    Some((ti, *n))
                }
                Move::Blocked => None,
            })
            .collect();
        (!out.is_empty()).then_some(out)
    }

    fn outcome(&self, s: &ScState) -> FinalHeap {
        s.final_heap(&self.prog)
    }

    fn violation(&self, s: &ScState) -> Option<String> {
        s.race.clone()
    }
}

fn space(p: &Program) -> ScSpace {
    let volatile = p.classes.iter().map(|c| c.fields.iter().map(|f| f.volatile).collect()).collect();
    ScSpace { prog: Prog { program: p.clone(), volatile } }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScOutcomes {
    pub finals: BTreeSet<FinalHeap>,
    pub states: usize,
    pub partial: bool,
}

/// Final heaps of every sequentially consistent execution. `None` without a
/// runnable `Main`.
pub fn sc_outcomes(p: &Program, limits: Limits, exec: Exec) -> Option<ScOutcomes> {
    let sp = space(p);
    let init = ScState::boot(&sp.prog, false)?;
    let r = search(&sp, init, limits, exec);
    Some(ScOutcomes { finals: r.finals.into_keys().collect(), states: r.states, partial: r.partial })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Drf {
    Free,
    /// A pair of conflicting accesses unordered by happens-before.
    Race(String),
    /// The enumeration hit a limit before finding a race.
    Unknown,
}

pub fn is_drf(p: &Program, limits: Limits, exec: Exec) -> Option<Drf> {
    let sp = space(p);
    let init = ScState::boot(&sp.prog, true)?;
    let r = search(&sp, init, limits, exec);
    Some(match r.violation {
        Some((w, _)) => Drf::Race(w),
        None if r.partial => Drf::Unknown,
        None => Drf::Free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::load;

    fn prog(src: &str) -> Program {
        load(src).unwrap()
    }

    fn lim() -> Limits {
        Limits { max_depth: 500, max_states: 200_000 }
    }

    const RACY: &str = "
        class Cell { v: Nat; }
        class W { c: Cell; x: Nat; run(): Unit = let _: Nat = this.c.v := this.x in () }
        class Main { run(): Unit =
          let c: Cell = new Cell(0) in
          let a: W = new W(c, 1) in
          let b: W = new W(c, 2) in
          let _: Unit = a.start() in b.start() }";

    const GUARDED: &str = "
        class Cell { v: Nat; }
        class W { c: Cell; run(): Unit =
          let _: Unit = this.c.monitorenter in
          let _: Nat = this.c.v := succ(this.c.v) in
          this.c.monitorexit }
        class Main { c: Cell; run(): Unit =
          let c: Cell = new Cell(0) in
          let _: Cell = this.c := c in
          let a: W = new W(c) in
          let b: W = new W(c) in
          let _: Unit = a.start() in
          let _: Unit = b.start() in
          let _: Unit = a.join() in
          let _: Unit = b.join() in
          let _: Unit = c.monitorenter in
          let _: Nat = c.v in
          c.monitorexit }";

    const HANDSHAKE: &str = "
        class Box { d: Nat; volatile ready: Bool; }
        class R { b: Box; out: Nat;
          spin(): Nat = if this.b.ready then this.b.d else this.spin()
          run(): Unit = let _: Nat = this.out := this.spin() in () }
        class Main { run(): Unit =
          let b: Box = new Box(0, false) in
          let r: R = new R(b, 0) in
          let _: Unit = r.start() in
          let _: Nat = b.d := 7 in
          let _: Bool = b.ready := true in () }";

    #[test]
    fn racy_writers_have_both_outcomes_and_race() {
        let p = prog(RACY);
        let o = sc_outcomes(&p, lim(), Exec::Sequential).unwrap();
        let vals: BTreeSet<_> = o.finals.iter().map(|f| f.get(1, "v").unwrap().to_string()).collect();
        assert_eq!(vals, ["1", "2"].map(String::from).into());
        assert!(!o.partial);
        assert!(matches!(is_drf(&p, lim(), Exec::Sequential), Some(Drf::Race(_))));
    }

    #[test]
    fn guarded_increments_are_drf_and_total_two() {
        let p = prog(GUARDED);
        let o = sc_outcomes(&p, lim(), Exec::Sequential).unwrap();
        assert!(!o.finals.is_empty());
        for f in &o.finals {
            assert_eq!(f.get(1, "v"), Some("2"), "{f}");
        }
        assert_eq!(is_drf(&p, lim(), Exec::Sequential), Some(Drf::Free));
    }

    #[test]
    fn volatile_handshake_is_drf() {
        let p = prog(HANDSHAKE);
        assert_eq!(is_drf(&p, lim(), Exec::Sequential), Some(Drf::Free));
        let o = sc_outcomes(&p, lim(), Exec::Sequential).unwrap();
        assert!(o.finals.iter().all(|f| f.get(2, "out") == Some("7")));
    }

    #[test]
    fn depth_limit_marks_partial() {
        let o = sc_outcomes(&prog(GUARDED), Limits { max_depth: 3, max_states: 100 }, Exec::Sequential).unwrap();
        assert!(o.partial);
    }
}
