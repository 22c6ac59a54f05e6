//! Targeted corruptions of a clean trace or of its checkpoints, one family
//! of edits per rule, used to confirm that the checker attributes each
//! defect to the rule it breaks.

use std::collections::BTreeSet;

use crate::check::{check, check_wfh, RuleId, RuleSet, WfReport};
use crate::machine::MachineState;
use crate::run::Checkpoint;
use crate::syntax::Value;
use crate::trace::{Action, Kind, Prov, Target, Trace};

/// A clean run to corrupt.
#[derive(Clone, Debug)]
pub struct Subject {
    pub name: String,
    pub trace: Trace,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct Mutant {
    pub rule: RuleId,
    pub what: String,
    pub trace: Trace,
    /// Present only for state rules.
    pub checkpoints: Option<Vec<Checkpoint>>,
}

impl Mutant {
    /// Trace rules for trace mutants, state rules for checkpoint mutants.
    pub fn check(&self) -> WfReport {
        match &self.checkpoints {
            None => check(&self.trace, &RuleSet::all()),
            Some(cps) => {
                let mut rep = check(&self.trace, &RuleSet::all());
                rep.extend(check_wfh(&self.trace, cps, &RuleSet::all()));
                rep
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub mutant: Mutant,
    pub report: WfReport,
    pub subject: String,
}

impl Detection {
    pub fn flagged(&self) -> bool {
        self.report.count(self.mutant.rule) > 0
    }

    /// Nothing but the targeted rule fired.
    pub fn isolated(&self) -> bool {
        self.report.rules() == BTreeSet::from([self.mutant.rule.to_string()])
    }
}

const PER_SUBJECT: usize = 400;

/// The first candidate that only the targeted rule flags, or failing that
/// the first one it flags at all.
pub fn find(rule: RuleId, subjects: &[Subject]) -> Option<Detection> {
    let mut fallback = None;
    for s in subjects {
        for m in candidates(rule, s).into_iter().take(PER_SUBJECT) {
            let report = m.check();
            let d = Detection { mutant: m, report, subject: s.name.clone() };
            if d.isolated() {
                return Some(d);
            }
            if fallback.is_none() && d.flagged() {
                fallback = Some(d);
            }
        }
    }
    fallback
}

fn bump(v: Option<Value>) -> Option<Value> {
    Some(match v? {
        Value::Nat(n) => Value::Nat(n + 1),
        Value::Bool(b) => Value::Bool(!b),
        Value::Ref(r) => Value::Ref(r + 1),
        Value::Null => Value::Ref(0),
        Value::Unit => Value::Nat(0),
    })
}

fn fresh_uid(t: &Trace) -> u64 {
    t.actions.iter().map(|a| a.uid).max().map_or(0, |u| u + 1)
}

fn same_var(a: &Action, b: &Action) -> bool {
    matches!((&a.target, &b.target), (Target::Var(r, f), Target::Var(s, g)) if r == s && f == g)
}

fn synthetic(like: &Action, uid: u64, kind: Kind) -> Action {
    Action { uid, kind, prologue: false, vol: false, prov: Prov::default(), ..like.clone() }
}

struct Out<'s> {
    rule: RuleId,
    subject: &'s Subject,
    list: Vec<Mutant>,
}

impl Out<'_> {
    fn trace(&mut self, what: String, f: impl FnOnce(&mut Vec<Action>)) {
        let mut acts = self.subject.trace.actions.clone();
        f(&mut acts);
        self.list.push(Mutant { rule: self.rule, what, trace: Trace { actions: acts }, checkpoints: None });
    }

    fn state(&mut self, what: String, k: usize, f: impl FnOnce(&mut MachineState)) {
        let mut cps = self.subject.checkpoints.clone();
        f(&mut cps[k].state);
        self.list.push(Mutant { rule: self.rule, what, trace: self.subject.trace.clone(), checkpoints: Some(cps) });
    }

    fn full(&self) -> bool {
        self.list.len() >= PER_SUBJECT
    }
}

/// Every edit of the rule's family that applies to the subject.
pub fn candidates(rule: RuleId, s: &Subject) -> Vec<Mutant> {
    let mut out = Out { rule, subject: s, list: Vec::new() };
    let acts = &s.trace.actions;
    let fresh = fresh_uid(&s.trace);
    let idx = |p: &dyn Fn(&Action) -> bool| -> Vec<usize> { (0..acts.len()).filter(|&i| p(&acts[i])).collect() };
    let pos_of = |u: Option<u64>| u.and_then(|u| acts.iter().position(|a| a.uid == u));
    let cores: BTreeSet<u32> = acts.iter().map(|a| a.core).collect();
    match rule {
        RuleId::Wf(1) => {
            for i in idx(&|a| matches!(a.kind, Kind::R | Kind::Vr)) {
                out.trace(format!("change the value of read u{}", acts[i].uid), |v| v[i].value = bump(v[i].value));
            }
        }
        RuleId::Wf(2) => {
            for i in idx(&|a| matches!(a.kind, Kind::W | Kind::Vw | Kind::R | Kind::Vr) && !a.prologue) {
                let k = match acts[i].kind {
                    Kind::W => Kind::Vw,
                    Kind::Vw => Kind::W,
                    Kind::R => Kind::Vr,
                    _ => Kind::R,
                };
                out.trace(format!("relabel u{} as {k}", acts[i].uid), |v| v[i].kind = k);
            }
        }
        RuleId::Wf(3) => {
            let sync = idx(&|a| a.kind.is_sync() && !a.prologue);
            for w in sync.windows(2) {
                let (j, i) = (w[0], w[1]);
                out.trace(format!("give u{} the position of u{}", acts[i].uid, acts[j].uid), |v| {
                    v[i].step = v[j].step;
                    v[i].ord = v[j].ord;
                });
            }
        }
        RuleId::Wf(4) => {
            let plain = |a: &Action| {
                !a.prologue && matches!(a.kind, Kind::L | Kind::U | Kind::S | Kind::Sp | Kind::J | Kind::Fi | Kind::Ir | Kind::Ird)
            };
            let sync = idx(&plain);
            for (n, &i) in sync.iter().enumerate() {
                if let Some(&j) = sync[n + 1..].iter().find(|&&j| acts[j].thread == acts[i].thread) {
                    out.trace(format!("swap the uids of u{} and u{}", acts[i].uid, acts[j].uid), |v| {
                        let u = v[i].uid;
                        v[i].uid = v[j].uid;
                        v[j].uid = u;
                    });
                }
            }
        }
        RuleId::Wf(5) => {
            for i in idx(&|a| a.kind == Kind::U) {
                out.trace(format!("drop unlock u{}", acts[i].uid), |v| {
                    v.remove(i);
                });
            }
        }
        RuleId::Wf(6) => {
            for ri in idx(&|a| a.kind == Kind::R) {
                let Some(wi) = pos_of(acts[ri].prov.w) else { continue };
                let (r, w) = (&acts[ri], &acts[wi]);
                if w.kind != Kind::W || w.thread != r.thread || wi > ri {
                    continue;
                }
                for &c in cores.iter().filter(|&&c| c != r.core) {
                    let mut x = synthetic(r, fresh, Kind::W);
                    x.core = c;
                    x.value = bump(w.value);
                    out.trace(format!("newer own write before read u{} on c{c}", r.uid), |v| v.insert(ri, x));
                }
            }
        }
        RuleId::Wf(7) => {
            for i in idx(&|a| a.kind == Kind::Vr) {
                for j in (0..i).filter(|&j| matches!(acts[j].kind, Kind::Vw | Kind::In) && same_var(&acts[j], &acts[i])) {
                    if Some(acts[j].uid) == acts[i].prov.w {
                        continue;
                    }
                    let (u, val) = (acts[j].uid, acts[j].value);
                    out.trace(format!("volatile read u{} sees u{u}", acts[i].uid), |v| {
                        v[i].prov.w = Some(u);
                        v[i].value = val;
                    });
                }
            }
        }
        RuleId::Wf(8) => {
            for i in idx(&|a| matches!(a.kind, Kind::R | Kind::Vr)) {
                for j in (i + 1..acts.len()).filter(|&j| acts[j].kind.is_write() && same_var(&acts[j], &acts[i])) {
                    let (u, val) = (acts[j].uid, acts[j].value);
                    out.trace(format!("read u{} sees the later write u{u}", acts[i].uid), |v| {
                        v[i].prov.w = Some(u);
                        v[i].value = val;
                    });
                }
            }
            if let (Some(first), Some(last)) = (acts.first(), acts.last()) {
                let u = first.uid;
                out.trace(format!("reuse uid u{u} for u{}", last.uid), |v| {
                    let n = v.len() - 1;
                    v[n].uid = u;
                });
            }
        }
        RuleId::Wf(9) => {
            let ghost = acts.iter().map(|a| a.thread).max().unwrap_or(0) + 1000;
            for i in idx(&|a| matches!(a.kind, Kind::F | Kind::I) && !a.prologue) {
                out.trace(format!("attribute u{} to unstarted r{ghost}", acts[i].uid), |v| v[i].thread = ghost);
            }
        }
        RuleId::Wf(10) => {
            for i in idx(&|a| a.kind == Kind::R) {
                for &c in cores.iter().filter(|&&c| c != acts[i].core) {
                    out.trace(format!("move read u{} to c{c}", acts[i].uid), |v| v[i].core = c);
                }
            }
        }
        RuleId::Wf(11) => {
            for i in idx(&|a| a.kind == Kind::R) {
                out.trace(format!("drop the cache action seen by u{}", acts[i].uid), |v| v[i].prov.cs = None);
                if let Some(ci) = pos_of(acts[i].prov.cs) {
                    for j in (0..ci).filter(|&j| acts[j].core == acts[i].core && acts[j].kind == acts[ci].kind && acts[j].target == acts[ci].target) {
                        let u = acts[j].uid;
                        out.trace(format!("read u{} sees the older u{u}", acts[i].uid), |v| v[i].prov.cs = Some(u));
                    }
                }
            }
        }
        RuleId::Wf(12) => {
            for i in idx(&|a| a.kind == Kind::F) {
                for n in 0..acts[i].prov.bf.len() {
                    out.trace(format!("forget a write-back brought by u{}", acts[i].uid), |v| {
                        v[i].prov.bf.remove(n);
                    });
                }
            }
        }
        RuleId::Wf(13) => {
            for i in idx(&|a| a.kind == Kind::B && !a.prologue) {
                out.trace(format!("unlink write-back u{}", acts[i].uid), |v| v[i].prov.ab = None);
            }
        }
        RuleId::Wf(14) => {
            for i in idx(&|a| a.kind == Kind::B && !a.prologue) {
                let b = &acts[i];
                let mut x = synthetic(b, fresh, Kind::W);
                x.value = bump(pos_of(b.prov.ab).and_then(|w| acts[w].value));
                out.trace(format!("overwrite before write-back u{}", b.uid), |v| v.insert(i, x));
            }
        }
        RuleId::Wf(15) => {
            for i in idx(&|a| a.kind == Kind::I) {
                let mut x = acts[i].clone();
                x.uid = fresh;
                out.trace(format!("repeat invalidation u{}", acts[i].uid), |v| v.insert(i + 1, x));
            }
        }
        RuleId::Wf(16) => {
            for ri in idx(&|a| a.kind == Kind::R) {
                let r = &acts[ri];
                let (Some(wi), Some(fi)) = (pos_of(r.prov.w), pos_of(r.prov.cs)) else { continue };
                if acts[wi].core == r.core || acts[fi].kind != Kind::F {
                    continue;
                }
                let field = r.var().map(|(_, f)| f).unwrap_or_default();
                let Some(bi) = pos_of(acts[fi].prov.bf.iter().find(|(n, _)| &**n == field).map(|(_, b)| *b)) else { continue };
                let mut x = acts[bi].clone();
                x.uid = fresh;
                out.trace(format!("second write-back between u{} and fetch u{}", acts[bi].uid, acts[fi].uid), |v| {
                    v.insert(fi, x)
                });
                for c in cores.iter().filter(|&&c| c != r.core) {
                    let c = *c;
                    out.trace(format!("fetch u{} moved to c{c}", acts[fi].uid), |v| v[fi].core = c);
                }
            }
        }
        RuleId::Wf(17) => {
            for i in idx(&|a| a.kind == Kind::Vr) {
                let Some(last) = (0..i).rev().find(|&j| acts[j].kind == Kind::Vw && same_var(&acts[j], &acts[i])) else { continue };
                for j in (0..last).filter(|&j| matches!(acts[j].kind, Kind::Vw | Kind::B) && same_var(&acts[j], &acts[i])) {
                    let u = acts[j].uid;
                    out.trace(format!("volatile read u{} sees the stale u{u}", acts[i].uid), |v| v[i].prov.cs = Some(u));
                }
            }
        }
        RuleId::Wf(18) => {
            for i in idx(&|a| a.kind == Kind::Vr) {
                let u = acts[i].prov.w;
                out.trace(format!("volatile read u{} sees no cache action", acts[i].uid), |v| v[i].prov.cs = None);
                out.trace(format!("volatile read u{} sees its write as cached", acts[i].uid), |v| v[i].prov.cs = u);
                let last = (0..i).rev().find(|&j| acts[j].kind == Kind::Vw && same_var(&acts[j], &acts[i])).unwrap_or(0);
                for j in (last..i).filter(|&j| acts[j].kind == Kind::Vw && !same_var(&acts[j], &acts[i])) {
                    let u = acts[j].uid;
                    out.trace(format!("volatile read u{} sees u{u} of another variable", acts[i].uid), |v| v[i].prov.cs = Some(u));
                }
            }
        }
        RuleId::Wf(19) => {
            for i in idx(&|a| a.prologue && a.kind == Kind::In) {
                if acts.get(i + 2).is_some_and(|a| a.prologue && a.kind == Kind::In) && acts.get(i + 3).is_some_and(|a| a.prologue) {
                    out.trace(format!("delay the write-back of u{}", acts[i].uid), |v| {
                        let b = v.remove(i + 1);
                        v.insert(i + 2, b);
                    });
                }
            }
        }
        RuleId::Wf(20) => {
            let bs = idx(&|a| a.kind == Kind::B && !a.prologue);
            for (n, &i) in bs.iter().enumerate() {
                for &j in &bs[n + 1..] {
                    if same_var(&acts[i], &acts[j]) && acts[i].core != acts[j].core {
                        out.trace(format!("delay write-back u{} past u{}", acts[i].uid, acts[j].uid), |v| {
                            let b = v.remove(i);
                            v.insert(j, b);
                        });
                        out.trace(format!("hoist write-back u{} before u{}", acts[j].uid, acts[i].uid), |v| {
                            let b = v.remove(j);
                            v.insert(i, b);
                        });
                    }
                }
            }
        }
        RuleId::Wfe(1) => {
            for ri in idx(&|a| a.kind == Kind::R) {
                let Some(ci) = pos_of(acts[ri].prov.cs) else { continue };
                let r = &acts[ri];
                for &c in cores.iter().filter(|&&c| c != r.core) {
                    let mut m = synthetic(r, fresh, Kind::M);
                    m.target = Target::Core(c);
                    m.value = None;
                    for at in [ri, ci + 1] {
                        out.trace(format!("migration before read u{} at {at}", r.uid), |v| v.insert(at, m.clone()));
                    }
                }
            }
        }
        RuleId::Wfe(2) => {
            for wi in idx(&|a| a.kind == Kind::W) {
                let w = &acts[wi];
                for &c in cores.iter().filter(|&&c| c != w.core) {
                    let mut m = synthetic(w, fresh, Kind::M);
                    m.target = Target::Core(c);
                    m.value = None;
                    out.trace(format!("migration right after write u{}", w.uid), |v| v.insert(wi + 1, m));
                }
            }
        }
        RuleId::Wfh(n) => state_candidates(n, s, &mut out),
        _ => {}
    }
    out.list
}

/// Checkpoints `k` whose edits to core `c` leave the neighbouring
/// comparisons of unchanged cores intact.
fn core_stable(cps: &[Checkpoint], k: usize, c: u32) -> bool {
    cps[k].cores.contains(&c) && cps.get(k + 1).is_none_or(|n| n.cores.contains(&c))
}

fn state_candidates(n: u8, s: &Subject, out: &mut Out) {
    let cps = &s.checkpoints;
    for k in (0..cps.len()).rev() {
        if out.full() {
            return;
        }
        let st = &cps[k].state;
        match n {
            1 | 5 | 6 => {
                for (r, o) in st.heap.iter().enumerate() {
                    let info = &st.code.classes[o.class as usize];
                    for i in 0..o.slots.len() {
                        let vol = info.volatile[i];
                        match n {
                            1 if !vol => out.state(format!("step {}: heap r{r} slot {i} value", cps[k].step), k, |m| {
                                let sl = &mut m.heap[r].slots[i];
                                sl.value = bump(Some(sl.value)).expect("value");
                            }),
                            6 if vol => out.state(format!("step {}: volatile r{r} slot {i} value", cps[k].step), k, |m| {
                                let sl = &mut m.heap[r].slots[i];
                                sl.value = bump(Some(sl.value)).expect("value");
                            }),
                            5 if !vol => out.state(format!("step {}: heap r{r} slot {i} writer", cps[k].step), k, |m| {
                                m.heap[r].slots[i].writer = u64::MAX;
                            }),
                            _ => {}
                        }
                    }
                }
            }
            2 | 4 => {
                for (c, core) in st.cores.iter().enumerate() {
                    if !core_stable(cps, k, c as u32) {
                        continue;
                    }
                    if n == 2 {
                        for (e, (&r, slots)) in core.cache.iter().enumerate() {
                            let info = st.class_of(r).expect("allocated");
                            for i in (0..slots.len()).filter(|&i| !info.volatile[i]) {
                                out.state(format!("step {}: cache c{c} r{r} slot {i}", cps[k].step), k, |m| {
                                    let sl = &mut m.cores[c].cache[e][i];
                                    sl.value = bump(Some(sl.value)).expect("value");
                                });
                            }
                        }
                    } else {
                        for (d, other) in st.cores.iter().enumerate().filter(|&(d, _)| d != c) {
                            for (&r, slots) in other.cache.iter().filter(|(r, _)| !core.cache.contains_key(*r)) {
                                let slots = slots.clone();
                                out.state(format!("step {}: copy r{r} from c{d} into c{c}", cps[k].step), k, |m| {
                                    m.cores[c].cache.insert(r, slots);
                                });
                            }
                        }
                    }
                }
            }
            3 => {
                for (c, core) in st.cores.iter().enumerate() {
                    if !core_stable(cps, k, c as u32) {
                        continue;
                    }
                    for e in 0..core.buffer.len() {
                        out.state(format!("step {}: buffer c{c} entry {e}", cps[k].step), k, |m| {
                            let b = &mut m.cores[c].buffer[e];
                            b.value = bump(Some(b.value)).expect("value");
                        });
                    }
                }
            }
            7 => {
                for (r, o) in st.heap.iter().enumerate().filter(|(_, o)| o.life.is_some()) {
                    let _ = o;
                    out.state(format!("step {}: forget the lifecycle of r{r}", cps[k].step), k, |m| m.heap[r].life = None);
                }
            }
            8 => {
                for t in 0..st.threads.len() {
                    out.state(format!("step {}: duplicate thread term {t}", cps[k].step), k, |m| {
                        let x = m.threads[t].clone();
                        m.threads.push(x);
                    });
                }
            }
            9 if k > 0 => {
                for &c in &cps[k].cores {
                    let mut cp = cps[k].clone();
                    cp.cores.retain(|&x| x != c);
                    let mut all = cps.clone();
                    all[k] = cp;
                    out.list.push(Mutant {
                        rule: out.rule,
                        what: format!("step {}: hide c{c} from the transition", cps[k].step),
                        trace: s.trace.clone(),
                        checkpoints: Some(all),
                    });
                }
            }
            _ => {}
        }
    }
}
