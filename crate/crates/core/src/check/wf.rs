//! Trace-level well-formedness: WF-1..WF-20, WFE-1 and WFE-2.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::report::{RuleId, RuleSet, WfReport};
use crate::syntax::Ref;
use crate::trace::{positions_tied, Action, CoreId, Kind, Orders, Target, Trace, Uid};

type VarKey = (Ref, Arc<str>);

fn key(a: &Action) -> Option<VarKey> {
    match &a.target {
        Target::Var(r, f) => Some((*r, f.clone())),
        _ => None,
    }
}

fn same_target_var(a: &Action, b: &Action) -> bool {
    matches!((&a.target, &b.target), (Target::Var(r, f), Target::Var(s, g)) if r == s && f == g)
}

struct Ctx<'t> {
    acts: &'t [Action],
    o: Orders<'t>,
    /// Fields of each object with their volatility, from initializations.
    fields: HashMap<Ref, Vec<(Arc<str>, bool)>>,
    rep: WfReport,
}

impl<'t> Ctx<'t> {
    fn get(&self, uid: Option<Uid>) -> Option<(usize, &'t Action)> {
        let i = self.o.pos(uid?)?;
        Some((i, &self.acts[i]))
    }

    fn volatile(&self, k: &VarKey) -> Option<bool> {
        self.fields.get(&k.0)?.iter().find(|(f, _)| *f == k.1).map(|(_, v)| *v)
    }
}

/// Checks every enabled trace-level rule. Rules that need state
/// checkpoints are skipped here.
pub fn check(trace: &Trace, rules: &RuleSet) -> WfReport {
    let o = match Orders::new(trace) {
        Ok(o) => o,
        Err(e) => {
            let mut rep = WfReport::default();
            rep.push(RuleId::Wf(8), vec![], format!("malformed trace: {e}"));
            return rep;
        }
    };
    let mut fields: HashMap<Ref, Vec<(Arc<str>, bool)>> = HashMap::new();
    for a in &trace.actions {
        if let (Kind::In, Target::Var(r, f)) = (a.kind, &a.target) {
            fields.entry(*r).or_default().push((f.clone(), a.vol));
        }
    }
    let mut cx = Ctx { acts: &trace.actions, o, fields, rep: WfReport::default() };
    type Check = fn(&mut Ctx);
    let checks: [(RuleId, Check); 22] = [
        (RuleId::Wf(1), wf1),
        (RuleId::Wf(2), wf2),
        (RuleId::Wf(3), wf3),
        (RuleId::Wf(4), wf4),
        (RuleId::Wf(5), wf5),
        (RuleId::Wf(6), wf6),
        (RuleId::Wf(7), wf7),
        (RuleId::Wf(8), wf8),
        (RuleId::Wf(9), wf9),
        (RuleId::Wf(10), wf10),
        (RuleId::Wf(11), wf11),
        (RuleId::Wf(12), wf12),
        (RuleId::Wf(13), wf13),
        (RuleId::Wf(14), wf14),
        (RuleId::Wf(15), wf15),
        (RuleId::Wf(16), wf16),
        (RuleId::Wf(17), wf17),
        (RuleId::Wf(18), wf18),
        (RuleId::Wf(19), wf19),
        (RuleId::Wf(20), wf20),
        (RuleId::Wfe(1), wfe1),
        (RuleId::Wfe(2), wfe2),
    ];
    for (id, f) in checks {
        if rules.has(id) {
            f(&mut cx);
        }
    }
    cx.rep
}

fn wf1(cx: &mut Ctx) {
    for r in cx.acts {
        if !matches!(r.kind, Kind::R | Kind::Vr) {
            continue;
        }
        match cx.get(r.prov.w) {
            None => cx.rep.push(RuleId::Wf(1), vec![r.uid], "read has no write-seen"),
            Some((_, w)) if !w.kind.is_write() => {
                cx.rep.push(RuleId::Wf(1), vec![r.uid, w.uid], format!("write-seen is a {}", w.kind))
            }
            Some((_, w)) if !same_target_var(r, w) => cx.rep.push(
                RuleId::Wf(1),
                vec![r.uid, w.uid],
                format!("read of {} sees a write of {}", r.target, w.target),
            ),
            Some((_, w)) if w.value != r.value => {
                cx.rep.push(RuleId::Wf(1), vec![r.uid, w.uid], "read value differs from the value written")
            }
            Some(_) => {}
        }
    }
}

fn wf2(cx: &mut Ctx) {
    for a in cx.acts {
        let vol_kind = match a.kind {
            Kind::R | Kind::W => false,
            Kind::Vr | Kind::Vw => true,
            _ => continue,
        };
        let Some(k) = key(a) else { continue };
        if let Some(v) = cx.volatile(&k) {
            if v != vol_kind {
                let what = if v { "volatile" } else { "non-volatile" };
                cx.rep.push(RuleId::Wf(2), vec![a.uid], format!("{} on {what} {}", a.kind, a.target));
            }
        }
    }
}

fn wf3(cx: &mut Ctx) {
    let trace = cx.o.trace;
    for (i, j) in positions_tied(trace) {
        cx.rep.push(
            RuleId::Wf(3),
            vec![cx.acts[i].uid, cx.acts[j].uid],
            format!("synchronization actions share position ({}, {})", cx.acts[i].step, cx.acts[i].ord),
        );
    }
    let mut prev: Option<&Action> = None;
    for a in cx.acts.iter().filter(|a| !a.prologue) {
        if let Some(p) = prev {
            if (p.step, p.ord) >= (a.step, a.ord) && a.kind.is_sync() && p.kind.is_sync() {
                cx.rep.push(RuleId::Wf(3), vec![p.uid, a.uid], "synchronization order is not a well-order by position");
            }
        }
        if a.kind.is_sync() {
            prev = Some(a);
        }
    }
}

fn wf4(cx: &mut Ctx) {
    let mut last: HashMap<Ref, &Action> = HashMap::new();
    for a in cx.acts.iter().filter(|a| a.kind.is_sync() && !a.prologue) {
        if let Some(p) = last.get(&a.thread) {
            if p.uid > a.uid {
                cx.rep.push(RuleId::Wf(4), vec![p.uid, a.uid], "synchronization order contradicts program order");
            }
        }
        last.insert(a.thread, a);
    }
}

fn wf5(cx: &mut Ctx) {
    // Per monitor: outstanding lock count of each thread.
    let mut held: HashMap<Ref, HashMap<Ref, i64>> = HashMap::new();
    for a in cx.acts {
        let Target::Obj(m) = a.target else { continue };
        match a.kind {
            Kind::L => {
                let counts = held.entry(m).or_default();
                let other: Vec<Ref> = counts.iter().filter(|(t, n)| **t != a.thread && **n != 0).map(|(t, _)| *t).collect();
                if !other.is_empty() {
                    cx.rep.push(
                        RuleId::Wf(5),
                        vec![a.uid],
                        format!("lock of r{m} by r{} while held by {:?}", a.thread, other),
                    );
                }
                *counts.entry(a.thread).or_default() += 1;
            }
            Kind::U => {
                *held.entry(m).or_default().entry(a.thread).or_default() -= 1;
            }
            _ => {}
        }
    }
}

fn wf6(cx: &mut Ctx) {
    let mut latest: HashMap<(Ref, VarKey), Uid> = HashMap::new();
    for a in cx.acts {
        let Some(k) = key(a) else { continue };
        match a.kind {
            Kind::W | Kind::Vw => {
                latest.insert((a.thread, k), a.uid);
            }
            Kind::R | Kind::Vr => {
                let Some((_, w)) = cx.get(a.prov.w) else { continue };
                if w.thread != a.thread || w.prologue {
                    continue;
                }
                if let Some(&l) = latest.get(&(a.thread, k)) {
                    if l != w.uid {
                        cx.rep.push(
                            RuleId::Wf(6),
                            vec![a.uid, w.uid, l],
                            "read sees an older write of its own thread",
                        );
                    }
                }
            }
            _ => {}
        }
    }
}

fn wf7(cx: &mut Ctx) {
    let mut last: HashMap<VarKey, Uid> = HashMap::new();
    for a in cx.acts {
        let Some(k) = key(a) else { continue };
        match a.kind {
            Kind::Vw | Kind::In => {
                last.insert(k, a.uid);
            }
            Kind::Vr => {
                let expect = last.get(&k).copied();
                if a.prov.w != expect {
                    cx.rep.push(
                        RuleId::Wf(7),
                        a.prov.w.into_iter().chain(expect).chain([a.uid]).collect(),
                        "volatile read does not see the last volatile write in synchronization order",
                    );
                }
            }
            _ => {}
        }
    }
}

fn wf8(cx: &mut Ctx) {
    let mut writes: HashMap<VarKey, Vec<usize>> = HashMap::new();
    for (i, a) in cx.acts.iter().enumerate() {
        if a.kind.is_write() {
            if let Some(k) = key(a) {
                writes.entry(k).or_default().push(i);
            }
        }
    }
    for (ri, r) in cx.acts.iter().enumerate() {
        if !matches!(r.kind, Kind::R | Kind::Vr) {
            continue;
        }
        let Some((wi, w)) = cx.get(r.prov.w) else { continue };
        if cx.o.hb(ri, wi) {
            cx.rep.push(RuleId::Wf(8), vec![r.uid, w.uid], "read happens-before the write it sees");
        }
        let Some(k) = key(r) else { continue };
        for &xi in writes.get(&k).into_iter().flatten() {
            if xi != wi && cx.o.hb(wi, xi) && cx.o.hb(xi, ri) {
                cx.rep.push(
                    RuleId::Wf(8),
                    vec![r.uid, w.uid, cx.acts[xi].uid],
                    "write seen is overwritten by a write that happens-before the read",
                );
            }
        }
    }
}

fn wf9(cx: &mut Ctx) {
    let mut started: HashSet<Ref> = HashSet::new();
    let starts: Vec<usize> = (0..cx.acts.len()).filter(|&i| cx.acts[i].kind == Kind::S).collect();
    let inits: Vec<usize> = (0..cx.acts.len()).filter(|&i| cx.acts[i].kind == Kind::In).collect();
    for a in cx.acts {
        if a.prologue {
            continue;
        }
        if a.kind == Kind::S {
            if !started.insert(a.thread) {
                cx.rep.push(RuleId::Wf(9), vec![a.uid], format!("second start of r{}", a.thread));
            }
            continue;
        }
        if !started.contains(&a.thread) {
            cx.rep.push(RuleId::Wf(9), vec![a.uid], format!("action of r{} before its start", a.thread));
            started.insert(a.thread);
        }
    }
    for &s in &starts {
        for &n in &inits {
            if !cx.o.hb(n, s) {
                cx.rep.push(
                    RuleId::Wf(9),
                    vec![cx.acts[n].uid, cx.acts[s].uid],
                    "initialization does not happen-before a start",
                );
            }
        }
    }
}

fn wf10(cx: &mut Ctx) {
    let mut written: HashSet<(CoreId, VarKey)> = HashSet::new();
    let mut fetched: HashSet<(CoreId, Ref)> = HashSet::new();
    for a in cx.acts {
        match (a.kind, &a.target) {
            (Kind::W, _) => {
                if let Some(k) = key(a) {
                    written.insert((a.core, k));
                }
            }
            (Kind::F, Target::Obj(r)) => {
                fetched.insert((a.core, *r));
            }
            (Kind::R, Target::Var(r, _)) => {
                let k = key(a).expect("var");
                if !fetched.contains(&(a.core, *r)) && !written.contains(&(a.core, k)) {
                    cx.rep.push(RuleId::Wf(10), vec![a.uid], "read not preceded by a write or fetch on its core");
                }
            }
            _ => {}
        }
    }
}

/// Same-core actions strictly between positions `from` and `to` that
/// match `pred`.
fn between<'a>(
    acts: &'a [Action],
    from: usize,
    to: usize,
    core: CoreId,
    pred: impl Fn(&Action) -> bool + 'a,
) -> impl Iterator<Item = &'a Action> + 'a {
    acts[from + 1..to].iter().filter(move |a| a.core == core && pred(a))
}

fn wf11(cx: &mut Ctx) {
    for (ri, r) in cx.acts.iter().enumerate() {
        if r.kind != Kind::R {
            continue;
        }
        let Some((obj, _)) = r.var() else { continue };
        let Some((ci, cs)) = cx.get(r.prov.cs) else {
            cx.rep.push(RuleId::Wf(11), vec![r.uid], "read has no cache action seen");
            continue;
        };
        if cs.core != r.core || ci >= ri {
            cx.rep.push(RuleId::Wf(11), vec![r.uid, cs.uid], "cache action seen is not earlier on the same core");
            continue;
        }
        let obj_hit = |a: &Action| a.target.obj() == Some(obj) && a.var().is_none();
        let overwrite = |a: &Action| a.kind == Kind::W && same_target_var(a, r);
        match cs.kind {
            Kind::F if cs.target == Target::Obj(obj) => {
                let bad: Vec<Uid> = between(cx.acts, ci, ri, r.core, |a| {
                    (matches!(a.kind, Kind::I | Kind::F) && obj_hit(a)) || overwrite(a)
                })
                .map(|a| a.uid)
                .collect();
                if !bad.is_empty() {
                    cx.rep.push(RuleId::Wf(11), [r.uid, cs.uid].into_iter().chain(bad).collect(), "cached value replaced before the read");
                }
                let (_, field) = r.var().expect("var");
                let b = cs.prov.bf.iter().find(|(f, _)| &**f == field).map(|(_, b)| *b);
                let ab = cx.get(b).and_then(|(_, b)| b.prov.ab);
                if ab != r.prov.w {
                    cx.rep.push(RuleId::Wf(11), vec![r.uid, cs.uid], "fetch seen did not bring the write seen");
                }
            }
            Kind::W if same_target_var(cs, r) => {
                if r.prov.w != Some(cs.uid) {
                    cx.rep.push(RuleId::Wf(11), vec![r.uid, cs.uid], "write seen differs from the buffered write");
                }
                let bad: Vec<Uid> = between(cx.acts, ci, ri, r.core, overwrite).map(|a| a.uid).collect();
                if !bad.is_empty() {
                    cx.rep.push(RuleId::Wf(11), [r.uid, cs.uid].into_iter().chain(bad).collect(), "buffered value overwritten before the read");
                }
                // Once written back, the value lives in the object cache.
                let wb = cx.acts[ci + 1..ri]
                    .iter()
                    .position(|a| a.kind == Kind::B && a.core == r.core && a.prov.ab == Some(cs.uid));
                if let Some(k) = wb {
                    let bi = ci + 1 + k;
                    let bad: Vec<Uid> = between(cx.acts, bi, ri, r.core, |a| matches!(a.kind, Kind::I | Kind::F) && obj_hit(a))
                        .map(|a| a.uid)
                        .collect();
                    if !bad.is_empty() {
                        cx.rep.push(RuleId::Wf(11), [r.uid, cs.uid].into_iter().chain(bad).collect(), "cached value replaced before the read");
                    }
                }
            }
            _ => cx.rep.push(RuleId::Wf(11), vec![r.uid, cs.uid], format!("cache action seen is a {} on {}", cs.kind, cs.target)),
        }
    }
}

fn wf12(cx: &mut Ctx) {
    for (fi, f) in cx.acts.iter().enumerate() {
        let (Kind::F, Target::Obj(r)) = (f.kind, &f.target) else { continue };
        let Some(fields) = cx.fields.get(r).cloned() else {
            cx.rep.push(RuleId::Wf(12), vec![f.uid], format!("fetch of r{r} which was never initialized"));
            continue;
        };
        for (name, vol) in fields {
            if vol {
                continue;
            }
            let b = f.prov.bf.iter().find(|(n, _)| *n == name).map(|(_, b)| *b);
            match cx.get(b) {
                Some((bi, b)) if b.kind == Kind::B && b.target == Target::Var(*r, name.clone()) && bi < fi => {}
                _ => cx.rep.push(
                    RuleId::Wf(12),
                    [f.uid].into_iter().chain(b).collect(),
                    format!("fetch of r{r}.{name} not preceded by its write-back"),
                ),
            }
        }
    }
}

fn wf13(cx: &mut Ctx) {
    for (bi, b) in cx.acts.iter().enumerate() {
        if b.kind != Kind::B {
            continue;
        }
        match cx.get(b.prov.ab) {
            Some((wi, w))
                if matches!(w.kind, Kind::In | Kind::W) && same_target_var(w, b) && w.core == b.core && wi < bi => {}
            _ => cx.rep.push(
                RuleId::Wf(13),
                [b.uid].into_iter().chain(b.prov.ab).collect(),
                "write-back not preceded by its write on the same core",
            ),
        }
    }
}

fn wf14(cx: &mut Ctx) {
    for (bi, b) in cx.acts.iter().enumerate() {
        if b.kind != Kind::B {
            continue;
        }
        let Some((wi, _)) = cx.get(b.prov.ab) else { continue };
        if wi >= bi {
            continue;
        }
        let bad: Vec<Uid> =
            between(cx.acts, wi, bi, b.core, |a| a.kind == Kind::W && same_target_var(a, b)).map(|a| a.uid).collect();
        if !bad.is_empty() {
            cx.rep.push(RuleId::Wf(14), [b.uid].into_iter().chain(bad).collect(), "write-back of an overwritten write");
        }
    }
}

fn wf15(cx: &mut Ctx) {
    let mut cached: HashSet<(CoreId, Ref)> = HashSet::new();
    for a in cx.acts {
        match (a.kind, &a.target) {
            (Kind::F, Target::Obj(r)) => {
                cached.insert((a.core, *r));
            }
            (Kind::I, Target::Obj(r)) => {
                if !cached.remove(&(a.core, *r)) {
                    cx.rep.push(RuleId::Wf(15), vec![a.uid], format!("invalidation of r{r} which is not cached"));
                }
                for (_, u) in &a.prov.ai {
                    if !matches!(cx.get(Some(*u)), Some((_, x)) if matches!(x.kind, Kind::F | Kind::B)) {
                        cx.rep.push(RuleId::Wf(15), vec![a.uid, *u], "invalidated data was not cached by a fetch or write-back");
                    }
                }
            }
            _ => {}
        }
    }
}

fn wf16(cx: &mut Ctx) {
    let mut wbs: HashMap<VarKey, Vec<usize>> = HashMap::new();
    for (i, a) in cx.acts.iter().enumerate() {
        if a.kind == Kind::B {
            if let Some(k) = key(a) {
                wbs.entry(k).or_default().push(i);
            }
        }
    }
    for (ri, r) in cx.acts.iter().enumerate() {
        if r.kind != Kind::R {
            continue;
        }
        let Some((wi, w)) = cx.get(r.prov.w) else { continue };
        if w.core == r.core || wi > ri {
            continue;
        }
        let Some((obj, field)) = r.var() else { continue };
        let k = key(r).expect("var");
        let ok = (wi + 1..ri).any(|fi| {
            let f = &cx.acts[fi];
            if f.kind != Kind::F || f.core != r.core || f.target != Target::Obj(obj) {
                return false;
            }
            let b = f.prov.bf.iter().find(|(n, _)| &**n == field).map(|(_, b)| *b);
            let Some((bi, b)) = cx.get(b) else { return false };
            b.prov.ab == Some(w.uid)
                && b.core == w.core
                && wi < bi
                && bi < fi
                && !wbs.get(&k).into_iter().flatten().any(|&x| bi < x && x < fi)
        });
        if !ok {
            cx.rep.push(
                RuleId::Wf(16),
                vec![r.uid, w.uid],
                "read of another core's write without a fetch of its write-back",
            );
        }
    }
}

fn wf17(cx: &mut Ctx) {
    let mut last_vw: HashMap<VarKey, usize> = HashMap::new();
    for (i, a) in cx.acts.iter().enumerate() {
        let Some(k) = key(a) else { continue };
        match a.kind {
            Kind::Vw => {
                last_vw.insert(k, i);
            }
            Kind::Vr => {
                let Some(&vw) = last_vw.get(&k) else { continue };
                match cx.get(a.prov.cs) {
                    Some((ci, _)) if ci >= vw => {}
                    _ => cx.rep.push(
                        RuleId::Wf(17),
                        [a.uid, cx.acts[vw].uid].into_iter().chain(a.prov.cs).collect(),
                        "volatile read does not see the heap after the last volatile write",
                    ),
                }
            }
            _ => {}
        }
    }
}

fn wf18(cx: &mut Ctx) {
    for (i, a) in cx.acts.iter().enumerate() {
        if a.kind != Kind::Vr {
            continue;
        }
        match cx.get(a.prov.cs) {
            Some((ci, c)) if matches!(c.kind, Kind::Vw | Kind::B) && same_target_var(a, c) && ci < i => {}
            _ => cx.rep.push(
                RuleId::Wf(18),
                [a.uid].into_iter().chain(a.prov.cs).collect(),
                "volatile read not preceded by the volatile write or write-back it sees",
            ),
        }
    }
}

fn wf19(cx: &mut Ctx) {
    let mut seen_body = false;
    for (i, a) in cx.acts.iter().enumerate() {
        if !a.prologue {
            seen_body = true;
            continue;
        }
        if seen_body {
            cx.rep.push(RuleId::Wf(19), vec![a.uid], "prologue action after the start of execution");
        }
        if a.kind == Kind::In {
            let next = cx.acts.get(i + 1);
            let ok = next.is_some_and(|b| b.kind == Kind::B && b.prologue && b.prov.ab == Some(a.uid) && same_target_var(a, b));
            if !ok {
                cx.rep.push(RuleId::Wf(19), vec![a.uid], "initialization not immediately written back");
            }
        }
    }
}

fn wf20(cx: &mut Ctx) {
    let mut wbs: HashMap<VarKey, Vec<(usize, usize)>> = HashMap::new();
    for (i, b) in cx.acts.iter().enumerate() {
        if b.kind != Kind::B {
            continue;
        }
        let (Some(k), Some((wi, _))) = (key(b), cx.get(b.prov.ab)) else { continue };
        wbs.entry(k).or_default().push((i, wi));
    }
    for list in wbs.values() {
        for &(b1, w1) in list {
            for &(b2, w2) in list {
                if b1 == b2 {
                    continue;
                }
                if cx.o.hb(w1, w2) != cx.o.hb(b1, b2) {
                    cx.rep.push(
                        RuleId::Wf(20),
                        vec![cx.acts[b1].uid, cx.acts[b2].uid],
                        "write-backs ordered differently from their writes",
                    );
                }
            }
        }
    }
}

fn wfe1(cx: &mut Ctx) {
    let mut migrated: HashMap<Ref, usize> = HashMap::new();
    for (i, a) in cx.acts.iter().enumerate() {
        match a.kind {
            Kind::M => {
                migrated.insert(a.thread, i);
            }
            Kind::R => {
                let Some(&m) = migrated.get(&a.thread) else { continue };
                match cx.get(a.prov.cs) {
                    Some((ci, _)) if ci > m => {}
                    _ => cx.rep.push(
                        RuleId::Wfe(1),
                        [a.uid, cx.acts[m].uid].into_iter().chain(a.prov.cs).collect(),
                        "read after migration sees data cached before it",
                    ),
                }
            }
            _ => {}
        }
    }
}

fn wfe2(cx: &mut Ctx) {
    let mut dirty: HashMap<CoreId, HashSet<VarKey>> = HashMap::new();
    for a in cx.acts {
        match a.kind {
            Kind::W => {
                if let Some(k) = key(a) {
                    dirty.entry(a.core).or_default().insert(k);
                }
            }
            Kind::B if !a.prologue => {
                if let Some(k) = key(a) {
                    dirty.entry(a.core).or_default().remove(&k);
                }
            }
            Kind::M => {
                let n = dirty.get(&a.core).map_or(0, HashSet::len);
                if n > 0 {
                    cx.rep.push(RuleId::Wfe(2), vec![a.uid], format!("migration leaves {n} dirty variable(s) behind"));
                }
            }
            _ => {}
        }
    }
}
