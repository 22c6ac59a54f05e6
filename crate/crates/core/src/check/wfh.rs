//! State-level invariants WFH-1..WFH-9, checked against the machine state
//! recorded after every transition.

use std::collections::{HashMap, HashSet};

use super::report::{RuleId, RuleSet, WfReport};
use crate::machine::{Life, MachineState};
use crate::run::Checkpoint;
use crate::syntax::{Ref, Value};
use crate::trace::{Action, CoreId, Kind, Target, Trace, Uid};

/// What the trace says about the state after some prefix of it.
#[derive(Default)]
struct Replay<'t> {
    by_uid: HashMap<Uid, &'t Action>,
    /// Last write-back per variable.
    last_b: HashMap<(Ref, &'t str), &'t Action>,
    /// Last volatile write or initialization per variable.
    last_vol: HashMap<(Ref, &'t str), &'t Action>,
    /// Last fetch or write-back per core and variable (fetches keyed per object).
    last_fill: HashMap<(CoreId, Ref), &'t Action>,
    last_b_core: HashMap<(CoreId, Ref, &'t str), &'t Action>,
    last_w: HashMap<(CoreId, Ref, &'t str), &'t Action>,
    fetched: HashSet<(CoreId, Ref)>,
}

impl<'t> Replay<'t> {
    fn apply(&mut self, a: &'t Action) {
        self.by_uid.insert(a.uid, a);
        match (a.kind, &a.target) {
            (Kind::B, Target::Var(r, f)) => {
                self.last_b.insert((*r, f), a);
                if !a.prologue {
                    self.last_b_core.insert((a.core, *r, f), a);
                }
            }
            (Kind::Vw | Kind::In, Target::Var(r, f)) => {
                self.last_vol.insert((*r, f), a);
            }
            (Kind::W, Target::Var(r, f)) => {
                self.last_w.insert((a.core, *r, f), a);
            }
            (Kind::F, Target::Obj(r)) => {
                self.last_fill.insert((a.core, *r), a);
                self.fetched.insert((a.core, *r));
            }
            _ => {}
        }
    }

    fn value_of(&self, w: Option<Uid>) -> Option<Value> {
        self.by_uid.get(&w?)?.value
    }

    /// Value a write-back committed: the value of the write it wrote back.
    fn wb_value(&self, b: &Action) -> Option<Value> {
        self.value_of(b.prov.ab)
    }
}

/// Checks the enabled state rules at every checkpoint.
pub fn check_wfh(trace: &Trace, checkpoints: &[Checkpoint], rules: &RuleSet) -> WfReport {
    let mut rep = WfReport::default();
    let mut acts: Vec<&Action> = trace.actions.iter().collect();
    acts.sort_by_key(|a| (a.step, a.ord));
    let mut rp = Replay::default();
    let mut next = 0;
    let mut prev: Option<&MachineState> = None;
    for cp in checkpoints {
        while next < acts.len() && acts[next].step <= cp.step {
            rp.apply(acts[next]);
            next += 1;
        }
        check_state(&rp, cp, prev, rules, &mut rep);
        prev = Some(&cp.state);
    }
    rep
}

fn check_state(rp: &Replay, cp: &Checkpoint, prev: Option<&MachineState>, rules: &RuleSet, rep: &mut WfReport) {
    let s = &cp.state;
    let at = cp.step;
    for (r, o) in s.heap.iter().enumerate() {
        let r = r as Ref;
        let info = &s.code.classes[o.class as usize];
        for (i, slot) in o.slots.iter().enumerate() {
            let f: &str = &info.fields[i];
            if info.volatile[i] {
                if rules.has(RuleId::Wfh(6)) {
                    let last = rp.last_vol.get(&(r, f));
                    if last.and_then(|a| a.value) != Some(slot.value) || last.map(|a| a.uid) != Some(slot.writer) {
                        rep.push(
                            RuleId::Wfh(6),
                            last.map(|a| a.uid).into_iter().collect(),
                            format!("step {at}: volatile r{r}.{f}={} is not the last volatile write", slot.value),
                        );
                    }
                }
            } else if rules.has(RuleId::Wfh(1)) {
                let last = rp.last_b.get(&(r, f));
                let ok = last.is_some_and(|b| rp.wb_value(b) == Some(slot.value) && b.uid == slot.installer);
                if !ok {
                    rep.push(
                        RuleId::Wfh(1),
                        last.map(|a| a.uid).into_iter().collect(),
                        format!("step {at}: heap r{r}.{f}={} is not the last write-back", slot.value),
                    );
                }
            }
            if rules.has(RuleId::Wfh(5)) {
                write_kind(rp, slot.writer, at, &format!("heap r{r}.{f}"), rep);
            }
        }
    }
    for (c, core) in s.cores.iter().enumerate() {
        let c = c as CoreId;
        for (&r, slots) in &core.cache {
            if rules.has(RuleId::Wfh(4)) && !rp.fetched.contains(&(c, r)) {
                rep.push(RuleId::Wfh(4), vec![], format!("step {at}: r{r} cached on c{c} without a fetch"));
            }
            let info = s.class_of(r).expect("allocated");
            for (i, slot) in slots.iter().enumerate() {
                if info.volatile[i] {
                    continue;
                }
                let f: &str = &info.fields[i];
                if rules.has(RuleId::Wfh(2)) {
                    let fetch = rp.last_fill.get(&(c, r));
                    let wb = rp.last_b_core.get(&(c, r, f));
                    let last = match (fetch, wb) {
                        (Some(a), Some(b)) => Some(if (a.step, a.ord) > (b.step, b.ord) { *a } else { *b }),
                        (a, b) => a.or(b).copied(),
                    };
                    let expect = last.and_then(|a| match a.kind {
                        Kind::F => {
                            let b = a.prov.bf.iter().find(|(n, _)| &**n == f).map(|(_, b)| *b)?;
                            rp.wb_value(rp.by_uid.get(&b)?)
                        }
                        _ => rp.wb_value(a),
                    });
                    if expect != Some(slot.value) || last.map(|a| a.uid) != Some(slot.installer) {
                        rep.push(
                            RuleId::Wfh(2),
                            last.map(|a| a.uid).into_iter().collect(),
                            format!("step {at}: cache c{c} r{r}.{f}={} is not the last fetch or write-back", slot.value),
                        );
                    }
                }
                if rules.has(RuleId::Wfh(5)) {
                    write_kind(rp, slot.writer, at, &format!("cache c{c} r{r}.{f}"), rep);
                }
            }
        }
        for (v, e) in &core.buffer {
            let f = s.field_name(*v);
            if rules.has(RuleId::Wfh(3)) {
                let last = rp.last_w.get(&(c, v.obj, &*f));
                if last.map(|a| a.uid) != Some(e.writer) || last.and_then(|a| a.value) != Some(e.value) {
                    rep.push(
                        RuleId::Wfh(3),
                        last.map(|a| a.uid).into_iter().collect(),
                        format!("step {at}: buffer c{c} r{}.{f}={} is not the last write", v.obj, e.value),
                    );
                }
            }
            if rules.has(RuleId::Wfh(5)) {
                write_kind(rp, e.writer, at, &format!("buffer c{c} r{}.{f}", v.obj), rep);
            }
        }
    }
    if rules.has(RuleId::Wfh(7)) {
        for (r, o) in s.heap.iter().enumerate() {
            let terms = s.threads.iter().filter(|t| t.thread == r as Ref).count();
            if o.life.is_some() != (terms > 0) {
                rep.push(
                    RuleId::Wfh(7),
                    vec![],
                    format!("step {at}: r{r} lifecycle {} with {terms} thread term(s)", o.life.map_or("none", Life::name)),
                );
            }
        }
        for t in &s.threads {
            if t.core as usize >= s.cores.len() || t.thread as usize >= s.heap.len() {
                rep.push(RuleId::Wfh(7), vec![], format!("step {at}: thread r{} on missing core c{}", t.thread, t.core));
            }
        }
    }
    if rules.has(RuleId::Wfh(8)) {
        let mut seen = HashSet::new();
        for t in &s.threads {
            if !seen.insert(t.thread) {
                rep.push(RuleId::Wfh(8), vec![], format!("step {at}: r{} has more than one thread term", t.thread));
            }
        }
    }
    if let (true, Some(p)) = (rules.has(RuleId::Wfh(9)), prev) {
        for (c, (now, before)) in s.cores.iter().zip(&p.cores).enumerate() {
            if cp.cores.contains(&(c as CoreId)) {
                continue;
            }
            let same_cache = now.cache.len() == before.cache.len()
                && now.cache.iter().zip(&before.cache).all(|((r1, s1), (r2, s2))| {
                    r1 == r2 && s1.iter().zip(s2).all(|(a, b)| a.value == b.value && a.installer == b.installer)
                });
            let same_buf = now.buffer.len() == before.buffer.len()
                && now.buffer.iter().all(|(v, e)| before.buffer.get(v).is_some_and(|b| b.writer == e.writer));
            if !same_cache || !same_buf {
                rep.push(RuleId::Wfh(9), vec![], format!("step {at}: c{c} changed without taking part in the transition"));
            }
        }
    }
}

fn write_kind(rp: &Replay, w: Uid, at: u64, what: &str, rep: &mut WfReport) {
    if !rp.by_uid.get(&w).is_some_and(|a| a.kind.is_write()) {
        rep.push(RuleId::Wfh(5), vec![w], format!("step {at}: {what} holds a value not produced by a write"));
    }
}
