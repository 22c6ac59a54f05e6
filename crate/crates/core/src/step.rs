//! Local reduction: enabledness of every rule and its state transformer.

use std::collections::HashMap;
use std::fmt;

use crate::context::{plug, redex};
use crate::machine::{Body, Emit, Implicit, Life, Lock, MachineFault, MachineState, Recorder, ThreadTerm, Var};
use crate::syntax::{substitute, Expr, Intrinsic, Ref, Type, Value};
use crate::trace::{CoreId, Kind, Prov, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    IfTrue,
    IfFalse,
    Let,
    Call,
    Builtin,
    Field,
    FieldDirty,
    Assign,
    New,
    Fetch,
    WriteBack,
    Invalidate,
    Start,
    Finish,
    VolatileReadL,
    VolatileRead,
    VolatileWriteL,
    VolatileWrite,
    MonitorEnter,
    NestedMonitorEnter,
    MonitorExit,
    NestedMonitorExit,
    Join,
    Interrupt,
    InterruptedT,
    InterruptedF,
    Spawn,
    Migrate,
}

impl Rule {
    pub const ALL: [Rule; 28] = [
        Rule::IfTrue,
        Rule::IfFalse,
        Rule::Let,
        Rule::Call,
        Rule::Builtin,
        Rule::Field,
        Rule::FieldDirty,
        Rule::Assign,
        Rule::New,
        Rule::Fetch,
        Rule::WriteBack,
        Rule::Invalidate,
        Rule::Start,
        Rule::Finish,
        Rule::VolatileReadL,
        Rule::VolatileRead,
        Rule::VolatileWriteL,
        Rule::VolatileWrite,
        Rule::MonitorEnter,
        Rule::NestedMonitorEnter,
        Rule::MonitorExit,
        Rule::NestedMonitorExit,
        Rule::Join,
        Rule::Interrupt,
        Rule::InterruptedT,
        Rule::InterruptedF,
        Rule::Spawn,
        Rule::Migrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::IfTrue => "IfTrue",
            Rule::IfFalse => "IfFalse",
            Rule::Let => "Let",
            Rule::Call => "Call",
            Rule::Builtin => "Builtin",
            Rule::Field => "Field",
            Rule::FieldDirty => "FieldDirty",
            Rule::Assign => "Assign",
            Rule::New => "New",
            Rule::Fetch => "Fetch",
            Rule::WriteBack => "WriteBack",
            Rule::Invalidate => "Invalidate",
            Rule::Start => "Start",
            Rule::Finish => "Finish",
            Rule::VolatileReadL => "VolatileReadL",
            Rule::VolatileRead => "VolatileRead",
            Rule::VolatileWriteL => "VolatileWriteL",
            Rule::VolatileWrite => "VolatileWrite",
            Rule::MonitorEnter => "MonitorEnter",
            Rule::NestedMonitorEnter => "NestedMonitorEnter",
            Rule::MonitorExit => "MonitorExit",
            Rule::NestedMonitorExit => "NestedMonitorExit",
            Rule::Join => "Join",
            Rule::Interrupt => "Interrupt",
            Rule::InterruptedT => "InterruptedT",
            Rule::InterruptedF => "InterruptedF",
            Rule::Spawn => "Spawn",
            Rule::Migrate => "Migrate",
        }
    }

    pub fn from_name(s: &str) -> Option<Rule> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    /// The action kind the rule emits, if any.
    pub fn kind(self) -> Option<Kind> {
        Some(match self {
            Rule::Field | Rule::FieldDirty => Kind::R,
            Rule::Assign => Kind::W,
            Rule::Fetch => Kind::F,
            Rule::WriteBack => Kind::B,
            Rule::Invalidate => Kind::I,
            Rule::Start => Kind::S,
            Rule::Finish => Kind::Fi,
            Rule::VolatileRead => Kind::Vr,
            Rule::VolatileWrite => Kind::Vw,
            Rule::MonitorEnter | Rule::NestedMonitorEnter => Kind::L,
            Rule::MonitorExit | Rule::NestedMonitorExit => Kind::U,
            Rule::Join => Kind::J,
            Rule::Interrupt => Kind::Ir,
            Rule::InterruptedT => Kind::Ird,
            Rule::Spawn => Kind::Sp,
            Rule::Migrate => Kind::M,
            _ => return None,
        })
    }

    /// Rules whose own premises or conclusion touch the heap (object
    /// contents, locks, lifecycles or allocation).
    pub fn writes_heap(self) -> bool {
        matches!(
            self,
            Rule::New
                | Rule::WriteBack
                | Rule::Start
                | Rule::Finish
                | Rule::VolatileReadL
                | Rule::VolatileRead
                | Rule::VolatileWriteL
                | Rule::VolatileWrite
                | Rule::MonitorEnter
                | Rule::NestedMonitorEnter
                | Rule::MonitorExit
                | Rule::NestedMonitorExit
                | Rule::Interrupt
                | Rule::Spawn
        )
    }

    pub fn is_sync(self) -> bool {
        self.kind().is_some_and(Kind::is_sync)
    }

    fn is_lock_phase(self) -> bool {
        matches!(self, Rule::VolatileReadL | Rule::VolatileWriteL)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cache premises a rule requires of its core.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Need {
    Nothing,
    /// Write buffer empty.
    Release,
    /// Write buffer and object cache empty.
    Acquire,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redex {
    pub rule: Rule,
    pub need: Need,
    /// Object to fetch before the rule can read it.
    pub fetch: Option<Ref>,
    pub target: Target,
}

/// Why a thread cannot step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Blocked {
    Finished,
    /// Waiting on another thread (lock owner, lifecycle).
    Waiting(String),
    /// No rule can ever apply.
    Stuck(String),
}

impl fmt::Display for Blocked {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Blocked::Finished => f.write_str("finished"),
            Blocked::Waiting(s) => write!(f, "waiting: {s}"),
            Blocked::Stuck(s) => write!(f, "stuck: {s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Micro {
    Implicit(Implicit),
    Main(Redex),
}

impl Micro {
    pub fn rule(&self) -> Rule {
        match self {
            Micro::Implicit(Implicit::Fetch(_)) => Rule::Fetch,
            Micro::Implicit(Implicit::WriteBack(_)) => Rule::WriteBack,
            Micro::Implicit(Implicit::Invalidate(_)) => Rule::Invalidate,
            Micro::Main(r) => r.rule,
        }
    }
}

/// Step granularity. `Fine` takes one primitive rule per step; `Macro` folds
/// the implicit steps a rule demands, and the lock phase of a volatile
/// access, into the step of the rule itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Fine,
    Macro,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fine => "fine",
            Mode::Macro => "macro",
        }
    }
}

/// Scheduler-facing summary of the next step of a thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub rule: Rule,
    pub target: Target,
    pub writer: bool,
    pub sync: bool,
}

fn waiting<T>(s: String) -> Result<T, Blocked> {
    Err(Blocked::Waiting(s))
}

fn stuck<T>(s: String) -> Result<T, Blocked> {
    Err(Blocked::Stuck(s))
}

fn life_name(l: Option<Life>) -> &'static str {
    l.map_or("unspawned", Life::name)
}

fn object(s: &MachineState, v: Value, what: &str) -> Result<Ref, Blocked> {
    match v {
        Value::Ref(r) if (r as usize) < s.heap.len() => Ok(r),
        Value::Ref(r) => stuck(format!("{what} on unallocated r{r}")),
        other => stuck(format!("{what} on {other}")),
    }
}

fn field_var(s: &MachineState, v: Value, f: &str) -> Result<Var, Blocked> {
    let r = object(s, v, "field access")?;
    s.resolve(r, f).ok_or_else(|| Blocked::Stuck(format!("r{r} has no field `{f}`")))
}

/// The rule that applies at the thread's redex, ignoring cache premises.
pub fn redex_info(s: &MachineState, ti: usize) -> Result<Redex, Blocked> {
    let mut rx = redex_rule(s, ti)?;
    if s.threads[ti].fresh {
        rx.need = Need::Acquire;
    }
    Ok(rx)
}

fn redex_rule(s: &MachineState, ti: usize) -> Result<Redex, Blocked> {
    let tt = &s.threads[ti];
    let t = tt.thread;
    let pure = |rule| Ok(Redex { rule, need: Need::Nothing, fetch: None, target: Target::None });
    let e = match &tt.body {
        Body::Done => return Err(Blocked::Finished),
        Body::Start => {
            let life = s.heap[t as usize].life;
            if life != Some(Life::Spawned) {
                return stuck(format!("start with lifecycle {}", life_name(life)));
            }
            return Ok(Redex { rule: Rule::Start, need: Need::Nothing, fetch: None, target: Target::None });
        }
        Body::Run(e) => e,
    };
    let Some(rx) = redex(e) else {
        return match s.heap[t as usize].life {
            Some(Life::Started | Life::Interrupted) => {
                Ok(Redex { rule: Rule::Finish, need: Need::Release, fetch: None, target: Target::None })
            }
            l => stuck(format!("finish with lifecycle {}", life_name(l))),
        };
    };
    match rx {
        Expr::Var(x) => stuck(format!("unbound variable `{x}`")),
        Expr::Let(..) => pure(Rule::Let),
        Expr::If(c, _, _) => match c.value() {
            Some(Value::Bool(true)) => pure(Rule::IfTrue),
            Some(Value::Bool(false)) => pure(Rule::IfFalse),
            v => stuck(format!("if on {}", v.map_or("?".into(), |v| v.to_string()))),
        },
        Expr::Builtin(b, args) => {
            let vals: Vec<Value> = args.iter().filter_map(Expr::value).collect();
            match b.eval(&vals) {
                Some(_) => pure(Rule::Builtin),
                None => stuck(format!("{} on bad operands", b.name())),
            }
        }
        Expr::New(c, _) => match s.code.program.class_index(c) {
            Some(_) => pure(Rule::New),
            None => stuck(format!("unknown class `{c}`")),
        },
        Expr::Call(target, m, args) => {
            let r = object(s, target.value().expect("value"), "call")?;
            let cd = s.code.class_def(s.heap[r as usize].class);
            match cd.method(m) {
                Some(md) if md.params.len() == args.len() => {
                    Ok(Redex { rule: Rule::Call, need: Need::Nothing, fetch: None, target: Target::Obj(r) })
                }
                _ => stuck(format!("r{r} has no method `{m}/{}`", args.len())),
            }
        }
        Expr::Get(target, f) => {
            let v = field_var(s, target.value().expect("value"), f)?;
            let tgt = s.var_target(v);
            if s.is_volatile(v) {
                return match s.heap[v.obj as usize].vlocks[v.field as usize] {
                    None => Ok(Redex { rule: Rule::VolatileReadL, need: Need::Nothing, fetch: None, target: tgt }),
                    Some(o) if o == t => {
                        Ok(Redex { rule: Rule::VolatileRead, need: Need::Acquire, fetch: None, target: tgt })
                    }
                    Some(o) => waiting(format!("volatile lock of {tgt} held by r{o}")),
                };
            }
            let core = &s.cores[tt.core as usize];
            if core.buffer.contains_key(&v) {
                Ok(Redex { rule: Rule::FieldDirty, need: Need::Nothing, fetch: None, target: tgt })
            } else {
                let fetch = (!core.cache.contains_key(&v.obj)).then_some(v.obj);
                Ok(Redex { rule: Rule::Field, need: Need::Nothing, fetch, target: tgt })
            }
        }
        Expr::Set(target, f, _) => {
            let v = field_var(s, target.value().expect("value"), f)?;
            let tgt = s.var_target(v);
            if s.is_volatile(v) {
                return match s.heap[v.obj as usize].vlocks[v.field as usize] {
                    None => Ok(Redex { rule: Rule::VolatileWriteL, need: Need::Nothing, fetch: None, target: tgt }),
                    Some(o) if o == t => {
                        Ok(Redex { rule: Rule::VolatileWrite, need: Need::Release, fetch: None, target: tgt })
                    }
                    Some(o) => waiting(format!("volatile lock of {tgt} held by r{o}")),
                };
            }
            Ok(Redex { rule: Rule::Assign, need: Need::Nothing, fetch: None, target: tgt })
        }
        Expr::MonitorEnter(target) => {
            let r = object(s, target.value().expect("value"), "monitorenter")?;
            let tgt = Target::Obj(r);
            match s.heap[r as usize].lock {
                Lock::Free => Ok(Redex { rule: Rule::MonitorEnter, need: Need::Acquire, fetch: None, target: tgt }),
                Lock::Held(o, _) if o == t => {
                    Ok(Redex { rule: Rule::NestedMonitorEnter, need: Need::Nothing, fetch: None, target: tgt })
                }
                Lock::Held(o, _) => waiting(format!("monitor r{r} held by r{o}")),
            }
        }
        Expr::MonitorExit(target) => {
            let r = object(s, target.value().expect("value"), "monitorexit")?;
            let tgt = Target::Obj(r);
            match s.heap[r as usize].lock {
                Lock::Held(o, 1) if o == t => {
                    Ok(Redex { rule: Rule::MonitorExit, need: Need::Release, fetch: None, target: tgt })
                }
                Lock::Held(o, _) if o == t => {
                    Ok(Redex { rule: Rule::NestedMonitorExit, need: Need::Nothing, fetch: None, target: tgt })
                }
                _ => stuck(format!("monitorexit on r{r} not owned by r{t}")),
            }
        }
        Expr::Intrinsic(i, target) => {
            let r = object(s, target.value().expect("value"), i.name())?;
            let tgt = Target::Obj(r);
            let life = s.heap[r as usize].life;
            if !s.code.classes[s.heap[r as usize].class as usize].thread {
                return stuck(format!("{} on r{r} which has no run method", i.name()));
            }
            let ok = |rule, need| Ok(Redex { rule, need, fetch: None, target: tgt.clone() });
            match i {
                Intrinsic::Start => match life {
                    None => ok(Rule::Spawn, Need::Release),
                    l => stuck(format!("start on r{r} already {}", life_name(l))),
                },
                Intrinsic::Join => match life {
                    Some(Life::Finished) => ok(Rule::Join, Need::Acquire),
                    l => waiting(format!("join on r{r} which is {}", life_name(l))),
                },
                Intrinsic::Interrupt => match life {
                    Some(Life::Started) => ok(Rule::Interrupt, Need::Release),
                    l => waiting(format!("interrupt on r{r} which is {}", life_name(l))),
                },
                Intrinsic::Interrupted => match life {
                    Some(Life::Interrupted) => ok(Rule::InterruptedT, Need::Acquire),
                    _ => ok(Rule::InterruptedF, Need::Nothing),
                },
            }
        }
        Expr::Val(_) => unreachable!("values are never redexes"),
    }
}

/// The next primitive step of a thread: a demanded flush, invalidation or
/// fetch, or the rule at the redex itself.
pub fn next_micro(s: &MachineState, ti: usize) -> Result<Micro, Blocked> {
    let rx = redex_info(s, ti)?;
    let core = s.threads[ti].core;
    if rx.need != Need::Nothing {
        if let Some(step) = s.next_flush_step(core) {
            return Ok(Micro::Implicit(step));
        }
    }
    if rx.need == Need::Acquire {
        if let Some(&r) = s.cores[core as usize].cache.keys().next() {
            return Ok(Micro::Implicit(Implicit::Invalidate(r)));
        }
    }
    if let Some(r) = rx.fetch {
        return Ok(Micro::Implicit(Implicit::Fetch(r)));
    }
    Ok(Micro::Main(rx))
}

fn assign_writes_heap(s: &MachineState, core: CoreId, target: &Target) -> bool {
    let Target::Var(r, f) = target else { return false };
    let v = s.resolve(*r, f).expect("resolved");
    let buf = &s.cores[core as usize].buffer;
    s.eager || (!buf.contains_key(&v) && buf.len() >= s.capacity)
}

pub fn implicit_target(s: &MachineState, i: Implicit) -> Target {
    match i {
        Implicit::Fetch(r) | Implicit::Invalidate(r) => Target::Obj(r),
        Implicit::WriteBack(v) => s.var_target(v),
    }
}

pub fn step_info(s: &MachineState, ti: usize, mode: Mode) -> Result<StepInfo, Blocked> {
    let core = s.threads[ti].core;
    match mode {
        Mode::Fine => Ok(match next_micro(s, ti)? {
            Micro::Implicit(i) => {
                let rule = Micro::Implicit(i).rule();
                StepInfo { rule, target: implicit_target(s, i), writer: rule == Rule::WriteBack, sync: false }
            }
            Micro::Main(rx) => StepInfo {
                writer: rx.rule.writes_heap() || (rx.rule == Rule::Assign && assign_writes_heap(s, core, &rx.target)),
                sync: rx.rule.is_sync(),
                rule: rx.rule,
                target: rx.target,
            },
        }),
        Mode::Macro => {
            let rx = redex_info(s, ti)?;
            let flush = rx.need != Need::Nothing && s.buffer_dirty(core);
            let rule = match rx.rule {
                Rule::VolatileReadL => Rule::VolatileRead,
                Rule::VolatileWriteL => Rule::VolatileWrite,
                r => r,
            };
            Ok(StepInfo {
                writer: flush || rule.writes_heap() || (rule == Rule::Assign && assign_writes_heap(s, core, &rx.target)),
                sync: rule.is_sync(),
                rule,
                target: rx.target,
            })
        }
    }
}

fn set_body(s: &mut MachineState, ti: usize, with: Expr) {
    if let Body::Run(e) = &mut s.threads[ti].body {
        plug(e, with);
    }
}

fn current_redex(s: &MachineState, ti: usize) -> Expr {
    match &s.threads[ti].body {
        Body::Run(e) => redex(e).expect("has redex").clone(),
        _ => unreachable!("only running bodies have redexes"),
    }
}

fn target_var(s: &MachineState, t: &Target) -> Var {
    match t {
        Target::Var(r, f) => s.resolve(*r, f).expect("resolved"),
        _ => unreachable!("variable target"),
    }
}

fn target_obj(t: &Target) -> Ref {
    t.obj().expect("object target")
}

/// Lowest core with no unfinished thread, else round robin.
fn pick_core(s: &mut MachineState) -> CoreId {
    let mut busy = vec![false; s.cores.len()];
    for t in &s.threads {
        if t.body != Body::Done {
            busy[t.core as usize] = true;
        }
    }
    if let Some(c) = busy.iter().position(|b| !b) {
        return c as CoreId;
    }
    let c = s.rr_next % s.cores.len() as CoreId;
    s.rr_next = (c + 1) % s.cores.len() as CoreId;
    c
}

/// Applies the redex rule; every premise must already hold.
pub fn apply_main(s: &mut MachineState, ti: usize, rx: &Redex, rec: &mut Recorder) -> Result<(), MachineFault> {
    let (t, core) = (s.threads[ti].thread, s.threads[ti].core);
    let base = |kind, target| Emit::new(core, t, kind, target);
    let check_need = |s: &MachineState| -> Result<(), MachineFault> {
        let c = &s.cores[core as usize];
        let ok = match rx.need {
            Need::Nothing => true,
            Need::Release => c.buffer.is_empty(),
            Need::Acquire => c.buffer.is_empty() && c.cache.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(MachineFault::NotEnabled(format!("{} with cache premises unmet", rx.rule)))
        }
    };
    check_need(s)?;
    match rx.rule {
        Rule::Start => {
            s.heap[t as usize].life = Some(Life::Started);
            s.emit(rec, base(Kind::S, Target::None));
            s.threads[ti].fresh = true;
            s.threads[ti].body = Body::Run(Expr::Call(Box::new(Expr::Val(Value::Ref(t))), "run".into(), vec![]));
        }
        Rule::Finish => {
            s.heap[t as usize].life = Some(Life::Finished);
            s.emit(rec, base(Kind::Fi, Target::None));
            s.threads[ti].body = Body::Done;
        }
        _ => {
            s.threads[ti].fresh = false;
            let e = current_redex(s, ti);
            let result = apply_redex(s, ti, rx, &e, rec)?;
            if let Some(v) = result {
                set_body(s, ti, v);
            }
        }
    }
    Ok(())
}

fn apply_redex(
    s: &mut MachineState,
    ti: usize,
    rx: &Redex,
    e: &Expr,
    rec: &mut Recorder,
) -> Result<Option<Expr>, MachineFault> {
    let (t, core) = (s.threads[ti].thread, s.threads[ti].core);
    let base = |kind, target| Emit::new(core, t, kind, target);
    let val = |v| Some(Expr::Val(v));
    Ok(match (rx.rule, e) {
        (Rule::IfTrue, Expr::If(_, a, _)) => Some((**a).clone()),
        (Rule::IfFalse, Expr::If(_, _, b)) => Some((**b).clone()),
        (Rule::Let, Expr::Let(x, _, b, body)) => {
            Some(crate::syntax::substitute_one(body, x, b.value().expect("value")))
        }
        (Rule::Builtin, Expr::Builtin(b, args)) => {
            let vals: Vec<Value> = args.iter().filter_map(Expr::value).collect();
            val(b.eval(&vals).expect("enabled"))
        }
        (Rule::Call, Expr::Call(target, m, args)) => {
            let r = target.value().and_then(Value::as_ref).expect("ref");
            let md = s.code.class_def(s.heap[r as usize].class).method(m).expect("enabled").clone();
            let mut b: HashMap<String, Value> =
                md.params.iter().map(|(x, _)| x.clone()).zip(args.iter().filter_map(Expr::value)).collect();
            b.insert(crate::syntax::THIS.into(), Value::Ref(r));
            Some(substitute(&md.body, &b))
        }
        (Rule::New, Expr::New(c, args)) => {
            let class = s.code.program.class_index(c).expect("enabled") as u16;
            let r = s.allocate(class, core, t, rec);
            let cd = s.code.class_def(class);
            let mut b: HashMap<String, Value> =
                cd.fields.iter().map(|f| f.name.clone()).zip(args.iter().filter_map(Expr::value)).collect();
            b.insert(crate::syntax::THIS.into(), Value::Ref(r));
            let ctor = substitute(&cd.ctor(), &b);
            Some(Expr::Let("_".into(), Type::Unit, Box::new(ctor), Box::new(Expr::Val(Value::Ref(r)))))
        }
        (Rule::Field, _) => {
            let v = target_var(s, &rx.target);
            let Some(slot) = s.cores[core as usize].cache.get(&v.obj).map(|o| o[v.field as usize]) else {
                return Err(MachineFault::NotEnabled(format!("Field {} not cached", rx.target)));
            };
            if s.cores[core as usize].buffer.contains_key(&v) {
                return Err(MachineFault::NotEnabled(format!("Field {} is dirty", rx.target)));
            }
            s.emit(
                rec,
                Emit {
                    value: Some(slot.value),
                    prov: Prov { w: Some(slot.writer), cs: Some(slot.seen), ..Prov::default() },
                    ..base(Kind::R, rx.target.clone())
                },
            );
            val(slot.value)
        }
        (Rule::FieldDirty, _) => {
            let v = target_var(s, &rx.target);
            let entry = s.cores[core as usize].buffer[&v];
            s.emit(
                rec,
                Emit {
                    value: Some(entry.value),
                    prov: Prov { w: Some(entry.writer), cs: Some(entry.writer), ..Prov::default() },
                    ..base(Kind::R, rx.target.clone())
                },
            );
            val(entry.value)
        }
        (Rule::Assign, Expr::Set(_, _, value)) => {
            let v = target_var(s, &rx.target);
            let value = value.value().expect("value");
            s.buffer_write(core, t, v, value, rec)?;
            val(value)
        }
        (Rule::VolatileReadL | Rule::VolatileWriteL, _) => {
            let v = target_var(s, &rx.target);
            s.heap[v.obj as usize].vlocks[v.field as usize] = Some(t);
            None
        }
        (Rule::VolatileRead, _) => {
            let v = target_var(s, &rx.target);
            let slot = s.heap[v.obj as usize].slots[v.field as usize];
            s.heap[v.obj as usize].vlocks[v.field as usize] = None;
            s.emit(
                rec,
                Emit {
                    value: Some(slot.value),
                    prov: Prov { w: Some(slot.writer), cs: Some(slot.installer), ..Prov::default() },
                    ..base(Kind::Vr, rx.target.clone())
                },
            );
            val(slot.value)
        }
        (Rule::VolatileWrite, Expr::Set(_, _, value)) => {
            let v = target_var(s, &rx.target);
            let value = value.value().expect("value");
            let uid = s.emit(rec, Emit { value: Some(value), ..base(Kind::Vw, rx.target.clone()) });
            let o = &mut s.heap[v.obj as usize];
            o.slots[v.field as usize] = crate::machine::Slot { value, writer: uid, installer: uid };
            o.vlocks[v.field as usize] = None;
            val(value)
        }
        (Rule::MonitorEnter | Rule::NestedMonitorEnter, _) => {
            let r = target_obj(&rx.target);
            let lock = &mut s.heap[r as usize].lock;
            *lock = match *lock {
                Lock::Free => Lock::Held(t, 1),
                Lock::Held(o, n) => Lock::Held(o, n + 1),
            };
            s.emit(rec, base(Kind::L, rx.target.clone()));
            val(Value::Unit)
        }
        (Rule::MonitorExit | Rule::NestedMonitorExit, _) => {
            let r = target_obj(&rx.target);
            let lock = &mut s.heap[r as usize].lock;
            *lock = match *lock {
                Lock::Held(_, 1) => Lock::Free,
                Lock::Held(o, n) => Lock::Held(o, n - 1),
                Lock::Free => return Err(MachineFault::NotEnabled("monitorexit on free lock".into())),
            };
            s.emit(rec, base(Kind::U, rx.target.clone()));
            val(Value::Unit)
        }
        (Rule::Spawn, _) => {
            let r = target_obj(&rx.target);
            s.heap[r as usize].life = Some(Life::Spawned);
            let dest = pick_core(s);
            s.emit(rec, base(Kind::Sp, rx.target.clone()));
            s.threads.push(ThreadTerm { thread: r, core: dest, body: Body::Start, fresh: false });
            val(Value::Unit)
        }
        (Rule::Join, _) => {
            s.emit(rec, base(Kind::J, rx.target.clone()));
            val(Value::Unit)
        }
        (Rule::Interrupt, _) => {
            let r = target_obj(&rx.target);
            s.heap[r as usize].life = Some(Life::Interrupted);
            s.emit(rec, base(Kind::Ir, rx.target.clone()));
            val(Value::Unit)
        }
        (Rule::InterruptedT, _) => {
            s.emit(rec, base(Kind::Ird, rx.target.clone()));
            val(Value::Bool(true))
        }
        (Rule::InterruptedF, _) => val(Value::Bool(false)),
        (rule, e) => {
            return Err(MachineFault::NotEnabled(format!(
                "{rule} at `{}`",
                crate::syntax::expr_to_string(e)
            )))
        }
    })
}

/// One primitive step of thread `ti`. Returns the rule and its target.
pub fn step_fine(s: &mut MachineState, ti: usize, rec: &mut Recorder) -> Result<(Rule, Target), MachineFault> {
    let (t, core) = (s.threads[ti].thread, s.threads[ti].core);
    let m = next_micro(s, ti).map_err(|b| MachineFault::NotEnabled(b.to_string()))?;
    match m {
        Micro::Implicit(i) => {
            let target = implicit_target(s, i);
            s.apply_implicit(core, t, i, rec)?;
            Ok((Micro::Implicit(i).rule(), target))
        }
        Micro::Main(rx) => {
            apply_main(s, ti, &rx, rec)?;
            Ok((rx.rule, rx.target))
        }
    }
}

/// The composite step: demanded implicit steps and the lock phase of a
/// volatile access, then the rule at the redex.
pub fn step_macro(s: &mut MachineState, ti: usize, rec: &mut Recorder) -> Result<(Rule, Target), MachineFault> {
    let (t, core) = (s.threads[ti].thread, s.threads[ti].core);
    loop {
        match next_micro(s, ti).map_err(|b| MachineFault::NotEnabled(b.to_string()))? {
            Micro::Implicit(i) => {
                s.apply_implicit(core, t, i, rec)?;
            }
            Micro::Main(rx) if rx.rule.is_lock_phase() => apply_main(s, ti, &rx, rec)?,
            Micro::Main(rx) => {
                apply_main(s, ti, &rx, rec)?;
                return Ok((rx.rule, rx.target));
            }
        }
    }
}

pub fn step(s: &mut MachineState, ti: usize, mode: Mode, rec: &mut Recorder) -> Result<(Rule, Target), MachineFault> {
    match mode {
        Mode::Fine => step_fine(s, ti, rec),
        Mode::Macro => step_macro(s, ti, rec),
    }
}

pub fn can_migrate(s: &MachineState, ti: usize, dest: CoreId) -> bool {
    let tt = &s.threads[ti];
    (dest as usize) < s.cores.len()
        && dest != tt.core
        && matches!(tt.body, Body::Run(_))
        && s.cores[tt.core as usize].buffer.is_empty()
        && s.cores[dest as usize].buffer.is_empty()
        && s.cores[dest as usize].cache.is_empty()
}

pub fn migrate(s: &mut MachineState, ti: usize, dest: CoreId, rec: &mut Recorder) -> Result<(), MachineFault> {
    if !can_migrate(s, ti, dest) {
        return Err(MachineFault::NotEnabled(format!("Migrate r{} to c{dest}", s.threads[ti].thread)));
    }
    let (t, core) = (s.threads[ti].thread, s.threads[ti].core);
    s.emit(rec, Emit::new(core, t, Kind::M, Target::Core(dest)));
    s.threads[ti].core = dest;
    Ok(())
}

/// The running thread that spontaneous actions of `core` are attributed to.
pub fn core_owner(s: &MachineState, core: CoreId) -> Option<Ref> {
    s.threads.iter().rev().find(|t| t.core == core && matches!(t.body, Body::Run(_))).map(|t| t.thread)
}

/// Implicit steps a core may take without being asked: write-back of any
/// dirty entry whose owner is cached, refetch or invalidation of any cached
/// object.
pub fn spontaneous(s: &MachineState, core: CoreId) -> Vec<Implicit> {
    let c = &s.cores[core as usize];
    let mut out = Vec::new();
    for v in c.buffer.keys() {
        if c.cache.contains_key(&v.obj) {
            out.push(Implicit::WriteBack(*v));
        }
    }
    for r in c.cache.keys() {
        out.push(Implicit::Fetch(*r));
        out.push(Implicit::Invalidate(*r));
    }
    out
}
