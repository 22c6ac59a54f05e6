use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::syntax::{ClassDef, Expr, Program, Ref, Type, Value};
use crate::trace::{Action, CoreId, Kind, Prov, Target, Uid};

/// Per-class data resolved once per program.
#[derive(Clone, Debug)]
pub struct ClassInfo {
    pub name: Arc<str>,
    pub fields: Vec<Arc<str>>,
    pub types: Vec<Type>,
    pub volatile: Vec<bool>,
    pub thread: bool,
}

#[derive(Debug)]
pub struct Code {
    pub program: Program,
    pub classes: Vec<ClassInfo>,
}

impl Code {
    pub fn new(program: Program) -> Arc<Code> {
        let classes = program
            .classes
            .iter()
            .map(|c: &ClassDef| ClassInfo {
                name: c.name.as_str().into(),
                fields: c.fields.iter().map(|f| Arc::from(f.name.as_str())).collect(),
                types: c.fields.iter().map(|f| f.ty.clone()).collect(),
                volatile: c.fields.iter().map(|f| f.volatile).collect(),
                thread: c.is_thread(),
            })
            .collect();
        Arc::new(Code { program, classes })
    }

    pub fn class_def(&self, idx: u16) -> &ClassDef {
        &self.program.classes[idx as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub obj: Ref,
    pub field: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lock {
    Free,
    Held(Ref, u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Life {
    Spawned,
    Started,
    Finished,
    Interrupted,
}

impl Life {
    pub fn name(self) -> &'static str {
        match self {
            Life::Spawned => "spawned",
            Life::Started => "started",
            Life::Finished => "finished",
            Life::Interrupted => "interrupted",
        }
    }
}

/// A stored value plus the write that produced it and the action that put it
/// in this location (write-back, fetch or volatile write).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub value: Value,
    pub writer: Uid,
    pub installer: Uid,
}

#[derive(Clone, Debug)]
pub struct HeapObj {
    pub class: u16,
    pub slots: Vec<Slot>,
    pub lock: Lock,
    /// Synthetic per-field locks; only used for volatile fields.
    pub vlocks: Vec<Option<Ref>>,
    pub life: Option<Life>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheSlot {
    pub value: Value,
    pub writer: Uid,
    /// The fetch or write-back that filled the slot.
    pub installer: Uid,
    /// The fetch, or the write whose write-back filled the slot.
    pub seen: Uid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufEntry {
    pub value: Value,
    pub writer: Uid,
    pub thread: Ref,
}

#[derive(Clone, Debug, Default)]
pub struct Core {
    pub cache: IndexMap<Ref, Vec<CacheSlot>>,
    pub buffer: IndexMap<Var, BufEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Body {
    /// The start marker: the thread has been spawned but not started.
    Start,
    Run(Expr),
    /// Finished; the term is kept so the thread stays bound to its core.
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThreadTerm {
    pub thread: Ref,
    pub core: CoreId,
    pub body: Body,
    /// Started but has not yet acquired: its first step invalidates the cache.
    pub fresh: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineFault {
    #[error("unallocated reference r{0}")]
    Unallocated(Ref),
    #[error("r{0}.{1} is volatile")]
    Volatile(Ref, String),
    #[error("rule not enabled: {0}")]
    NotEnabled(String),
}

/// Collects the actions of one global transition and numbers them.
#[derive(Debug, Default)]
pub struct Recorder {
    pub step: u64,
    pub ord: u32,
    pub actions: Vec<Action>,
}

impl Recorder {
    pub fn new(step: u64) -> Recorder {
        Recorder { step, ord: 0, actions: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct MachineState {
    pub code: Arc<Code>,
    pub heap: Vec<HeapObj>,
    pub cores: Vec<Core>,
    pub threads: Vec<ThreadTerm>,
    pub next_uid: Uid,
    pub capacity: usize,
    /// Write back right after every assignment.
    pub eager: bool,
    pub rr_next: CoreId,
}

/// Inputs for one emitted action.
pub struct Emit {
    pub core: CoreId,
    pub thread: Ref,
    pub kind: Kind,
    pub target: Target,
    pub value: Option<Value>,
    pub prologue: bool,
    pub vol: bool,
    pub prov: Prov,
}

impl Emit {
    pub fn new(core: CoreId, thread: Ref, kind: Kind, target: Target) -> Emit {
        Emit { core, thread, kind, target, value: None, prologue: false, vol: false, prov: Prov::default() }
    }
}

impl MachineState {
    pub fn new(code: Arc<Code>, ncores: usize, capacity: usize) -> MachineState {
        MachineState {
            code,
            heap: Vec::new(),
            cores: vec![Core::default(); ncores.max(1)],
            threads: Vec::new(),
            next_uid: 0,
            capacity: capacity.max(1),
            eager: false,
            rr_next: 0,
        }
    }

    pub fn emit(&mut self, rec: &mut Recorder, e: Emit) -> Uid {
        let uid = self.next_uid;
        self.next_uid += 1;
        rec.actions.push(Action {
            uid,
            step: rec.step,
            ord: rec.ord,
            core: e.core,
            thread: e.thread,
            kind: e.kind,
            target: e.target,
            value: e.value,
            prologue: e.prologue,
            vol: e.vol,
            prov: e.prov,
        });
        rec.ord += 1;
        uid
    }

    pub fn obj(&self, r: Ref) -> Result<&HeapObj, MachineFault> {
        self.heap.get(r as usize).ok_or(MachineFault::Unallocated(r))
    }

    pub fn class_of(&self, r: Ref) -> Option<&ClassInfo> {
        self.heap.get(r as usize).map(|o| &self.code.classes[o.class as usize])
    }

    pub fn field_name(&self, v: Var) -> Arc<str> {
        self.class_of(v.obj).expect("allocated").fields[v.field as usize].clone()
    }

    pub fn var_target(&self, v: Var) -> Target {
        Target::Var(v.obj, self.field_name(v))
    }

    pub fn is_volatile(&self, v: Var) -> bool {
        self.class_of(v.obj).is_some_and(|c| c.volatile[v.field as usize])
    }

    pub fn resolve(&self, r: Ref, f: &str) -> Option<Var> {
        let c = self.class_of(r)?;
        let i = c.fields.iter().position(|n| &**n == f)?;
        Some(Var { obj: r, field: i as u16 })
    }

    pub fn thread_index(&self, t: Ref) -> Option<usize> {
        self.threads.iter().position(|tt| tt.thread == t)
    }

    /// Allocates an object with default field values, emitting the
    /// prologue-flagged initialization and its write-back per field.
    pub fn allocate(&mut self, class: u16, core: CoreId, thread: Ref, rec: &mut Recorder) -> Ref {
        let r = self.heap.len() as Ref;
        let info = self.code.classes[class as usize].clone();
        self.heap.push(HeapObj {
            class,
            slots: Vec::with_capacity(info.fields.len()),
            lock: Lock::Free,
            vlocks: vec![None; info.fields.len()],
            life: None,
        });
        for (i, name) in info.fields.iter().enumerate() {
            let value = info.types[i].default_value();
            let target = Target::Var(r, name.clone());
            let init = self.emit(
                rec,
                Emit {
                    value: Some(value),
                    prologue: true,
                    vol: info.volatile[i],
                    ..Emit::new(core, thread, Kind::In, target.clone())
                },
            );
            let wb = self.emit(
                rec,
                Emit {
                    prologue: true,
                    prov: Prov { ab: Some(init), ..Prov::default() },
                    ..Emit::new(core, thread, Kind::B, target)
                },
            );
            self.heap[r as usize].slots.push(Slot { value, writer: init, installer: wb });
        }
        r
    }

    /// Buffer, then object cache; `None` is a miss.
    pub fn cached_read(&self, core: CoreId, v: Var) -> Result<Option<Value>, MachineFault> {
        self.obj(v.obj)?;
        let c = &self.cores[core as usize];
        if let Some(e) = c.buffer.get(&v) {
            return Ok(Some(e.value));
        }
        Ok(c.cache.get(&v.obj).map(|o| o[v.field as usize].value))
    }

    pub fn fetch(&mut self, core: CoreId, thread: Ref, r: Ref, rec: &mut Recorder) -> Result<Uid, MachineFault> {
        let obj = self.obj(r)?;
        let info = &self.code.classes[obj.class as usize];
        let bf = info
            .fields
            .iter()
            .zip(&obj.slots)
            .zip(&info.volatile)
            .filter(|(_, vol)| !**vol)
            .map(|((n, s), _)| (n.clone(), s.installer))
            .collect();
        let uid = self.emit(
            rec,
            Emit { prov: Prov { bf, ..Prov::default() }, ..Emit::new(core, thread, Kind::F, Target::Obj(r)) },
        );
        let slots = self.heap[r as usize]
            .slots
            .iter()
            .map(|s| CacheSlot { value: s.value, writer: s.writer, installer: uid, seen: uid })
            .collect();
        self.cores[core as usize].cache.insert(r, slots);
        Ok(uid)
    }

    /// The four write-back premises; `false` means not enabled.
    pub fn can_write_back(&self, core: CoreId, v: Var) -> bool {
        let c = &self.cores[core as usize];
        (v.obj as usize) < self.heap.len()
            && c.cache.contains_key(&v.obj)
            && !self.is_volatile(v)
            && c.buffer.contains_key(&v)
    }

    pub fn write_back(&mut self, core: CoreId, v: Var, rec: &mut Recorder) -> Result<Uid, MachineFault> {
        if !self.can_write_back(core, v) {
            return Err(MachineFault::NotEnabled(format!("WriteBack {} on c{core}", self.var_target(v))));
        }
        let e = self.cores[core as usize].buffer.shift_remove(&v).expect("checked");
        let target = self.var_target(v);
        let uid = self.emit(
            rec,
            Emit { prov: Prov { ab: Some(e.writer), ..Prov::default() }, ..Emit::new(core, e.thread, Kind::B, target) },
        );
        self.heap[v.obj as usize].slots[v.field as usize] = Slot { value: e.value, writer: e.writer, installer: uid };
        let slot = &mut self.cores[core as usize].cache.get_mut(&v.obj).expect("checked")[v.field as usize];
        *slot = CacheSlot { value: e.value, writer: e.writer, installer: uid, seen: e.writer };
        Ok(uid)
    }

    pub fn invalidate(&mut self, core: CoreId, thread: Ref, r: Ref, rec: &mut Recorder) -> Result<Uid, MachineFault> {
        let Some(slots) = self.cores[core as usize].cache.shift_remove(&r) else {
            return Err(MachineFault::NotEnabled(format!("Invalidate r{r} on c{core}")));
        };
        let info = self.class_of(r).expect("cached objects are allocated");
        let ai = info
            .fields
            .iter()
            .zip(&slots)
            .zip(&info.volatile)
            .filter(|(_, vol)| !**vol)
            .map(|((n, s), _)| (n.clone(), s.installer))
            .collect();
        Ok(self.emit(
            rec,
            Emit { prov: Prov { ai, ..Prov::default() }, ..Emit::new(core, thread, Kind::I, Target::Obj(r)) },
        ))
    }

    /// The next implicit step that writes back the oldest dirty entry: a
    /// fetch of its owner when uncached, else the write-back itself.
    pub fn next_flush_step(&self, core: CoreId) -> Option<Implicit> {
        let c = &self.cores[core as usize];
        let (v, _) = c.buffer.first()?;
        Some(if c.cache.contains_key(&v.obj) { Implicit::WriteBack(*v) } else { Implicit::Fetch(v.obj) })
    }

    pub fn apply_implicit(&mut self, core: CoreId, thread: Ref, step: Implicit, rec: &mut Recorder) -> Result<Uid, MachineFault> {
        match step {
            Implicit::Fetch(r) => self.fetch(core, thread, r, rec),
            Implicit::WriteBack(v) => self.write_back(core, v, rec),
            Implicit::Invalidate(r) => self.invalidate(core, thread, r, rec),
        }
    }

    /// Writes back every dirty entry in insertion order, fetching owners
    /// first where needed.
    pub fn release_flush(&mut self, core: CoreId, thread: Ref, rec: &mut Recorder) {
        while let Some(s) = self.next_flush_step(core) {
            self.apply_implicit(core, thread, s, rec).expect("flush step enabled");
        }
    }

    /// Release flush, then invalidation of every cached object in fetch order.
    pub fn acquire_flush(&mut self, core: CoreId, thread: Ref, rec: &mut Recorder) {
        self.release_flush(core, thread, rec);
        while let Some(&r) = self.cores[core as usize].cache.keys().next() {
            self.invalidate(core, thread, r, rec).expect("cached");
        }
    }

    /// Assignment into the write buffer. A write of a new key into a full
    /// buffer first writes back everything; in eager mode the entry is
    /// written back immediately.
    pub fn buffer_write(
        &mut self,
        core: CoreId,
        thread: Ref,
        v: Var,
        value: Value,
        rec: &mut Recorder,
    ) -> Result<Uid, MachineFault> {
        self.obj(v.obj)?;
        if self.is_volatile(v) {
            return Err(MachineFault::Volatile(v.obj, self.field_name(v).to_string()));
        }
        let c = &self.cores[core as usize];
        if !c.buffer.contains_key(&v) && c.buffer.len() >= self.capacity {
            self.release_flush(core, thread, rec);
        }
        let target = self.var_target(v);
        let uid = self.emit(rec, Emit { value: Some(value), ..Emit::new(core, thread, Kind::W, target) });
        self.cores[core as usize].buffer.insert(v, BufEntry { value, writer: uid, thread });
        if self.eager {
            if !self.cores[core as usize].cache.contains_key(&v.obj) {
                self.fetch(core, thread, v.obj, rec)?;
            }
            self.write_back(core, v, rec)?;
        }
        Ok(uid)
    }

    /// Whether a step of `kind` would write the heap on `core` through a flush.
    pub fn buffer_dirty(&self, core: CoreId) -> bool {
        !self.cores[core as usize].buffer.is_empty()
    }

    pub fn cache_empty(&self, core: CoreId) -> bool {
        self.cores[core as usize].cache.is_empty()
    }

    /// Deterministic sorted rendering for golden comparisons.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (r, o) in self.heap.iter().enumerate() {
            let info = &self.code.classes[o.class as usize];
            let _ = write!(s, "heap r{r} {}", info.name);
            for (i, sl) in o.slots.iter().enumerate() {
                let _ = write!(s, " {}={}", info.fields[i], sl.value);
            }
            match o.lock {
                Lock::Free => {}
                Lock::Held(t, n) => {
                    let _ = write!(s, " lock=r{t}x{n}");
                }
            }
            if let Some(l) = o.life {
                let _ = write!(s, " life={}", l.name());
            }
            s.push('\n');
        }
        for (c, core) in self.cores.iter().enumerate() {
            let mut cached: Vec<_> = core.cache.iter().collect();
            cached.sort_by_key(|(r, _)| **r);
            for (r, slots) in cached {
                let info = self.class_of(*r).expect("allocated");
                let _ = write!(s, "cache c{c} r{r}");
                for (i, sl) in slots.iter().enumerate() {
                    let _ = write!(s, " {}={}", info.fields[i], sl.value);
                }
                s.push('\n');
            }
            let mut dirty: Vec<_> = core.buffer.iter().collect();
            dirty.sort_by_key(|(v, _)| **v);
            for (v, e) in dirty {
                let _ = writeln!(s, "buffer c{c} {}={}", self.var_target(*v), e.value);
            }
        }
        let mut threads: Vec<_> = self.threads.iter().collect();
        threads.sort_by_key(|t| t.thread);
        for t in threads {
            let body = match &t.body {
                Body::Start => "start".to_string(),
                Body::Run(e) => crate::syntax::expr_to_string(e),
                Body::Done => "done".to_string(),
            };
            let _ = writeln!(s, "thread r{} c{} {body}", t.thread, t.core);
        }
        s
    }

    /// Hash of the semantic state; uids and provenance are left out.
    pub fn fingerprint(&self) -> u128 {
        let mut a = DefaultHasher::new();
        let mut b = DefaultHasher::new();
        0xd1cu64.hash(&mut b);
        self.hash_semantic(&mut a);
        self.hash_semantic(&mut b);
        ((a.finish() as u128) << 64) | b.finish() as u128
    }

    fn hash_semantic<H: Hasher>(&self, h: &mut H) {
        self.heap.len().hash(h);
        for o in &self.heap {
            o.class.hash(h);
            for s in &o.slots {
                s.value.hash(h);
            }
            o.lock.hash(h);
            o.vlocks.hash(h);
            o.life.hash(h);
        }
        for c in &self.cores {
            c.cache.len().hash(h);
            for (r, slots) in &c.cache {
                r.hash(h);
                for s in slots {
                    s.value.hash(h);
                }
            }
            c.buffer.len().hash(h);
            for (v, e) in &c.buffer {
                v.hash(h);
                e.value.hash(h);
                e.thread.hash(h);
            }
        }
        self.threads.hash(h);
        self.rr_next.hash(h);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Implicit {
    Fetch(Ref),
    WriteBack(Var),
    Invalidate(Ref),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    fn setup(cap: usize) -> (MachineState, Recorder) {
        let p = parse_program("class C { f: Nat; g: Nat; } class Main { run(): Unit = () }").unwrap();
        let mut s = MachineState::new(Code::new(p), 2, cap);
        let mut rec = Recorder::new(0);
        s.allocate(0, 0, 0, &mut rec);
        s.allocate(0, 0, 0, &mut rec);
        (s, rec)
    }

    const F: Var = Var { obj: 0, field: 0 };
    const G: Var = Var { obj: 0, field: 1 };

    #[test]
    fn buffer_shadows_cache() {
        let (mut s, mut rec) = setup(16);
        assert_eq!(s.cached_read(0, F).unwrap(), None);
        s.fetch(0, 0, 0, &mut rec).unwrap();
        assert_eq!(s.cached_read(0, F).unwrap(), Some(Value::Nat(0)));
        s.buffer_write(0, 0, F, Value::Nat(7), &mut rec).unwrap();
        assert_eq!(s.cached_read(0, F).unwrap(), Some(Value::Nat(7)));
        assert_eq!(s.heap[0].slots[0].value, Value::Nat(0));
    }

    #[test]
    fn same_field_twice_keeps_one_entry() {
        let (mut s, mut rec) = setup(16);
        s.buffer_write(0, 0, F, Value::Nat(1), &mut rec).unwrap();
        s.buffer_write(0, 0, F, Value::Nat(2), &mut rec).unwrap();
        assert_eq!(s.cores[0].buffer.len(), 1);
        assert_eq!(s.cores[0].buffer[&F].value, Value::Nat(2));
    }

    #[test]
    fn full_buffer_flushes_before_insert() {
        let (mut s, mut rec) = setup(2);
        s.buffer_write(0, 0, F, Value::Nat(1), &mut rec).unwrap();
        s.buffer_write(0, 0, G, Value::Nat(2), &mut rec).unwrap();
        let before = rec.actions.len();
        s.buffer_write(0, 0, Var { obj: 1, field: 0 }, Value::Nat(3), &mut rec).unwrap();
        let kinds: Vec<Kind> = rec.actions[before..].iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![Kind::F, Kind::B, Kind::B, Kind::W]);
        assert_eq!(s.cores[0].buffer.len(), 1);
        assert_eq!(s.heap[0].slots[1].value, Value::Nat(2));
    }

    #[test]
    fn write_back_needs_cached_owner() {
        let (mut s, mut rec) = setup(16);
        s.buffer_write(0, 0, F, Value::Nat(5), &mut rec).unwrap();
        assert!(!s.can_write_back(0, F));
        assert!(s.write_back(0, F, &mut rec).is_err());
        s.fetch(0, 0, 0, &mut rec).unwrap();
        s.write_back(0, F, &mut rec).unwrap();
        assert_eq!(s.heap[0].slots[0].value, Value::Nat(5));
        assert_eq!(s.cores[0].cache[&0][0].value, Value::Nat(5));
        assert!(s.cores[0].buffer.is_empty());
    }

    #[test]
    fn refetch_replaces_stale_copy() {
        let (mut s, mut rec) = setup(16);
        s.fetch(1, 0, 0, &mut rec).unwrap();
        s.buffer_write(0, 0, F, Value::Nat(9), &mut rec).unwrap();
        s.release_flush(0, 0, &mut rec);
        assert_eq!(s.cores[1].cache[&0][0].value, Value::Nat(0));
        s.fetch(1, 0, 0, &mut rec).unwrap();
        let heap: Vec<Value> = s.heap[0].slots.iter().map(|x| x.value).collect();
        let cache: Vec<Value> = s.cores[1].cache[&0].iter().map(|x| x.value).collect();
        assert_eq!(heap, cache);
    }

    #[test]
    fn invalidation_keeps_dirty_entries() {
        let (mut s, mut rec) = setup(16);
        s.fetch(0, 0, 0, &mut rec).unwrap();
        s.buffer_write(0, 0, F, Value::Nat(3), &mut rec).unwrap();
        s.invalidate(0, 0, 0, &mut rec).unwrap();
        assert!(s.invalidate(0, 0, 0, &mut rec).is_err());
        assert_eq!(s.cores[0].buffer[&F].value, Value::Nat(3));
    }

    #[test]
    fn acquire_flush_counts() {
        let (mut s, mut rec) = setup(16);
        s.fetch(0, 0, 0, &mut rec).unwrap();
        s.fetch(0, 0, 1, &mut rec).unwrap();
        s.buffer_write(0, 0, F, Value::Nat(1), &mut rec).unwrap();
        s.buffer_write(0, 0, G, Value::Nat(2), &mut rec).unwrap();
        let before = rec.actions.len();
        s.acquire_flush(0, 0, &mut rec);
        let kinds: Vec<Kind> = rec.actions[before..].iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![Kind::B, Kind::B, Kind::I, Kind::I]);
        assert!(s.cores[0].cache.is_empty() && s.cores[0].buffer.is_empty());
    }

    #[test]
    fn uncached_dirty_owner_is_fetched_first() {
        let (mut s, mut rec) = setup(16);
        s.buffer_write(0, 0, F, Value::Nat(1), &mut rec).unwrap();
        let before = rec.actions.len();
        s.release_flush(0, 0, &mut rec);
        let kinds: Vec<Kind> = rec.actions[before..].iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![Kind::F, Kind::B]);
        assert!(s.cores[0].cache.contains_key(&0));
    }
}
