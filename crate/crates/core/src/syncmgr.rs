//! Discrete-event model of synchronization managers: cores that own the
//! monitors of a hash partition of the heap and serve enter/exit,
//! wait/notify and timed-wait removal requests from FIFO mailboxes.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::syntax::Ref;
use crate::trace::CoreId;

pub type ThreadId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgKind {
    MonEnterReq,
    MonExitReq,
    WaitReq,
    WaitTimeoutRemove,
    Notify,
    NotifyAll,
    GrantAck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Message {
    pub kind: MsgKind,
    pub object: Ref,
    pub sender: (CoreId, ThreadId),
    pub seq: u64,
}

/// Which manager owns the monitor of `r`.
pub fn assign_manager(r: Ref, managers: usize) -> usize {
    assert!(managers >= 1, "at least one manager");
    r as usize % managers
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Requester {
    who: (CoreId, ThreadId),
    /// Recursion depth restored on grant; above 1 only after a wait.
    count: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Record {
    owner: Option<((CoreId, ThreadId), u32)>,
    enter_queue: VecDeque<Requester>,
    waiters: VecDeque<Requester>,
}

impl Record {
    pub fn owner(&self) -> Option<ThreadId> {
        self.owner.map(|((_, t), _)| t)
    }

    pub fn queued(&self) -> Vec<ThreadId> {
        self.enter_queue.iter().map(|r| r.who.1).collect()
    }

    pub fn waiting(&self) -> Vec<ThreadId> {
        self.waiters.iter().map(|r| r.who.1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolFault {
    #[error("t{thread} sent {kind:?} on r{object} without owning it")]
    NotOwner { thread: ThreadId, kind: MsgKind, object: Ref },
    #[error("manager received {0:?}, which only managers send")]
    Unexpected(MsgKind),
}

/// What handling one message did, besides the outbound grants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Grant { object: Ref, thread: ThreadId },
    Release { object: Ref, thread: ThreadId },
    Wake { object: Ref, thread: ThreadId },
}

#[derive(Clone, Debug, Default)]
pub struct ManagerState {
    pub id: usize,
    pub mailbox: VecDeque<Message>,
    /// Allocated on the first request for an object.
    pub records: BTreeMap<Ref, Record>,
    next_seq: u64,
    pub handled: u64,
}

impl ManagerState {
    pub fn new(id: usize) -> ManagerState {
        ManagerState { id, ..ManagerState::default() }
    }

    /// Appends to the mailbox, stamping the arrival index.
    pub fn deliver(&mut self, kind: MsgKind, object: Ref, sender: (CoreId, ThreadId)) {
        self.mailbox.push_back(Message { kind, object, sender, seq: self.next_seq });
        self.next_seq += 1;
    }

    /// Handles one message; returns the outbound grants and the effects.
    pub fn handle(&mut self, msg: Message) -> Result<(Vec<Message>, Vec<Effect>), ProtocolFault> {
        self.handled += 1;
        let rec = self.records.entry(msg.object).or_default();
        let o = msg.object;
        let t = msg.sender.1;
        let mut fx = Vec::new();
        let owns = rec.owner.is_some_and(|(w, _)| w == msg.sender);
        let fault = || ProtocolFault::NotOwner { thread: t, kind: msg.kind, object: o };
        match msg.kind {
            MsgKind::MonEnterReq => match &mut rec.owner {
                Some((w, n)) if *w == msg.sender => *n += 1,
                _ => rec.enter_queue.push_back(Requester { who: msg.sender, count: 1 }),
            },
            MsgKind::MonExitReq => {
                let Some((_, n)) = rec.owner.as_mut().filter(|_| owns) else { return Err(fault()) };
                *n -= 1;
                if *n == 0 {
                    rec.owner = None;
                    fx.push(Effect::Release { object: o, thread: t });
                }
            }
            MsgKind::WaitReq => {
                let Some((_, n)) = rec.owner.filter(|_| owns) else { return Err(fault()) };
                rec.waiters.push_back(Requester { who: msg.sender, count: n });
                rec.owner = None;
                fx.push(Effect::Release { object: o, thread: t });
            }
            MsgKind::WaitTimeoutRemove => {
                if let Some(i) = rec.waiters.iter().position(|w| w.who == msg.sender) {
                    let w = rec.waiters.remove(i).expect("present");
                    rec.enter_queue.push_back(w);
                    fx.push(Effect::Wake { object: o, thread: t });
                }
            }
            MsgKind::Notify | MsgKind::NotifyAll => {
                if !owns {
                    return Err(fault());
                }
                let n = if msg.kind == MsgKind::Notify { 1 } else { rec.waiters.len() };
                for w in rec.waiters.drain(..n.min(rec.waiters.len())) {
                    fx.push(Effect::Wake { object: o, thread: w.who.1 });
                    rec.enter_queue.push_back(w);
                }
            }
            MsgKind::GrantAck => return Err(ProtocolFault::Unexpected(msg.kind)),
        }
        let mut out = Vec::new();
        if rec.owner.is_none() {
            if let Some(next) = rec.enter_queue.pop_front() {
                rec.owner = Some((next.who, next.count));
                fx.push(Effect::Grant { object: o, thread: next.who.1 });
                out.push(Message { kind: MsgKind::GrantAck, object: o, sender: (self.id as CoreId, next.who.1), seq: 0 });
            }
        }
        // Re-entrant enters are acknowledged at once.
        if msg.kind == MsgKind::MonEnterReq && owns {
            fx.push(Effect::Grant { object: o, thread: t });
            out.push(Message { kind: MsgKind::GrantAck, object: o, sender: (self.id as CoreId, t), seq: 0 });
        }
        Ok((out, fx))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Enter,
    Exit,
    Wait,
    Notify,
    NotifyAll,
    TimeoutRemove,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Enter => "enter",
            Op::Exit => "exit",
            Op::Wait => "wait",
            Op::Notify => "notify",
            Op::NotifyAll => "notifyAll",
            Op::TimeoutRemove => "timeoutRemove",
        }
    }

    fn kind(self) -> MsgKind {
        match self {
            Op::Enter => MsgKind::MonEnterReq,
            Op::Exit => MsgKind::MonExitReq,
            Op::Wait => MsgKind::WaitReq,
            Op::Notify => MsgKind::Notify,
            Op::NotifyAll => MsgKind::NotifyAll,
            Op::TimeoutRemove => MsgKind::WaitTimeoutRemove,
        }
    }

    /// The client blocks until granted.
    fn blocks(self) -> bool {
        matches!(self, Op::Enter | Op::Wait)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub thread: ThreadId,
    pub op: Op,
    pub object: Ref,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{} {} r{}", self.thread, self.op.name(), self.object)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ScriptError {
    pub line: usize,
    pub msg: String,
}

fn numbered(s: &str, prefix: char) -> Option<u32> {
    s.strip_prefix(prefix)?.parse().ok()
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Event, String> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [t, op, r] = parts[..] else { return Err(format!("expected `t<k> <op> r<j>`, got `{s}`")) };
        let thread = numbered(t, 't').ok_or_else(|| format!("bad thread `{t}`"))?;
        let object = numbered(r, 'r').ok_or_else(|| format!("bad object `{r}`"))?;
        let op = [Op::Enter, Op::Exit, Op::Wait, Op::Notify, Op::NotifyAll, Op::TimeoutRemove]
            .into_iter()
            .find(|o| o.name() == op)
            .ok_or_else(|| format!("unknown operation `{op}`"))?;
        Ok(Event { thread, op, object })
    }
}

/// Parses a script; `#` starts a comment.
pub fn parse_script(src: &str) -> Result<Vec<Event>, ScriptError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|msg| ScriptError { line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn script_to_string(events: &[Event]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogEntry {
    Grant { object: Ref, thread: ThreadId, at: u64 },
    Release { object: Ref, thread: ThreadId, at: u64 },
    Wake { object: Ref, thread: ThreadId, at: u64 },
    Fault { event: Event, msg: String, at: u64 },
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogEntry::Grant { object, thread, at } => write!(f, "grant r{object} -> t{thread} @{at}"),
            LogEntry::Release { object, thread, at } => write!(f, "release r{object} <- t{thread} @{at}"),
            LogEntry::Wake { object, thread, at } => write!(f, "wake r{object} -> t{thread} @{at}"),
            LogEntry::Fault { event, msg, at } => write!(f, "fault {event}: {msg} @{at}"),
        }
    }
}

/// How client events are interleaved on the way to the mailboxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arrival {
    /// Script order, skipping over events of blocked clients.
    Script,
    /// A seeded random interleaving that keeps each client's own order.
    Shuffled(u64),
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub log: Vec<LogEntry>,
    /// Clients left blocked or with unsent events.
    pub stalled: Vec<ThreadId>,
    pub managers: Vec<ManagerState>,
}

impl SimResult {
    pub fn grants(&self) -> Vec<(Ref, ThreadId)> {
        self.log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Grant { object, thread, .. } => Some((*object, *thread)),
                _ => None,
            })
            .collect()
    }

    pub fn faults(&self) -> usize {
        self.log.iter().filter(|e| matches!(e, LogEntry::Fault { .. })).count()
    }

    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Runs client events through `managers` managers. Client `t<k>` sits on
/// core `k`; each message is handled as soon as it reaches its mailbox.
pub fn simulate(events: &[Event], managers: usize, arrival: Arrival) -> SimResult {
    let mut pending: BTreeMap<ThreadId, VecDeque<(usize, Event)>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        pending.entry(e.thread).or_default().push_back((i, *e));
    }
    let mut blocked: BTreeMap<ThreadId, bool> = pending.keys().map(|&t| (t, false)).collect();
    let mut ms: Vec<ManagerState> = (0..managers.max(1)).map(ManagerState::new).collect();
    let mut rng = match arrival {
        Arrival::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Arrival::Script => None,
    };
    let mut log = Vec::new();
    let mut at = 0u64;
    loop {
        // A timed-out waiter sends its removal while still blocked.
        let ready: Vec<ThreadId> = pending
            .iter()
            .filter(|(t, q)| q.front().is_some_and(|(_, e)| !blocked[*t] || e.op == Op::TimeoutRemove))
            .map(|(t, _)| *t)
            .collect();
        let next = match &mut rng {
            Some(rng) => ready.choose(rng).copied(),
            None => ready.iter().min_by_key(|t| pending[*t][0].0).copied(),
        };
        let Some(t) = next else { break };
        let (_, e) = pending.get_mut(&t).and_then(VecDeque::pop_front).expect("ready");
        let m = assign_manager(e.object, ms.len());
        ms[m].deliver(e.op.kind(), e.object, (t as CoreId, t));
        if e.op.blocks() {
            blocked.insert(t, true);
        }
        while let Some(msg) = ms[m].mailbox.pop_front() {
            match ms[m].handle(msg) {
                Ok((out, fx)) => {
                    for x in fx {
                        log.push(match x {
                            Effect::Grant { object, thread } => LogEntry::Grant { object, thread, at },
                            Effect::Release { object, thread } => LogEntry::Release { object, thread, at },
                            Effect::Wake { object, thread } => LogEntry::Wake { object, thread, at },
                        });
                    }
                    for g in out {
                        blocked.insert(g.sender.1, false);
                    }
                }
                Err(f) => {
                    log.push(LogEntry::Fault { event: e, msg: f.to_string(), at });
                    blocked.insert(t, false);
                }
            }
            at += 1;
        }
    }
    let stalled = pending.iter().filter(|(t, q)| !q.is_empty() || blocked[*t]).map(|(t, _)| *t).collect();
    SimResult { log, stalled, managers: ms }
}

/// A grant held from `from` until release at `to` (`None` if never released).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub object: Ref,
    pub thread: ThreadId,
    pub from: usize,
    pub to: Option<usize>,
}

/// Ownership intervals per monitor, indexed by log position. Re-entrant
/// grants to the current holder fold into its interval.
pub fn intervals(log: &[LogEntry]) -> Vec<Interval> {
    let mut open: BTreeMap<Ref, usize> = BTreeMap::new();
    let mut out: Vec<Interval> = Vec::new();
    for (i, e) in log.iter().enumerate() {
        match *e {
            LogEntry::Grant { object, thread, .. } => {
                if open.get(&object).is_some_and(|&k| out[k].thread == thread) {
                    continue;
                }
                out.push(Interval { object, thread, from: i, to: None });
                open.insert(object, out.len() - 1);
            }
            LogEntry::Release { object, thread, .. } => {
                if let Some(k) = open.remove(&object) {
                    if out[k].thread == thread {
                        out[k].to = Some(i);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Pairs of intervals on one monitor held by different threads at once.
pub fn overlaps(iv: &[Interval]) -> Vec<(Interval, Interval)> {
    let mut out = Vec::new();
    for (i, a) in iv.iter().enumerate() {
        for b in &iv[i + 1..] {
            let a_end = a.to.unwrap_or(usize::MAX);
            let b_end = b.to.unwrap_or(usize::MAX);
            if a.object == b.object && a.thread != b.thread && a.from < b_end && b.from < a_end {
                out.push((*a, *b));
            }
        }
    }
    out
}

/// Lifecycle held in a thread's internal descriptor object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiveState {
    Spawned,
    Alive,
    Dead,
}

/// `isAlive` is a plain read of the descriptor state.
pub fn is_alive(s: LiveState) -> bool {
    s == LiveState::Alive
}

/// Events a joiner issues on the descriptor `desc` after reading `state`.
pub fn join_protocol(joiner: ThreadId, desc: Ref, state: LiveState) -> Vec<Event> {
    if state == LiveState::Dead {
        return Vec::new();
    }
    [Op::Enter, Op::Wait, Op::Exit].into_iter().map(|op| Event { thread: joiner, op, object: desc }).collect()
}

/// Events a finishing thread issues to wake its joiners.
pub fn completion_protocol(target: ThreadId, desc: Ref) -> Vec<Event> {
    [Op::Enter, Op::NotifyAll, Op::Exit].into_iter().map(|op| Event { thread: target, op, object: desc }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: ThreadId, op: Op, r: Ref) -> Event {
        Event { thread: t, op, object: r }
    }

    #[test]
    fn manager_is_ref_mod_n() {
        assert_eq!(assign_manager(7, 2), 1);
        assert_eq!(assign_manager(8, 2), 0);
        assert_eq!(assign_manager(8, 2), assign_manager(8, 2));
    }

    #[test]
    fn enter_on_free_monitor_grants_at_once() {
        let mut m = ManagerState::new(0);
        m.deliver(MsgKind::MonEnterReq, 3, (1, 1));
        let msg = m.mailbox.pop_front().unwrap();
        let (out, _) = m.handle(msg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, MsgKind::GrantAck);
        assert_eq!(m.records[&3].owner(), Some(1));
    }

    #[test]
    fn records_are_allocated_lazily() {
        let m = ManagerState::new(0);
        assert!(m.records.is_empty());
        let r = simulate(&[ev(1, Op::Enter, 4), ev(1, Op::Exit, 4), ev(2, Op::Enter, 9), ev(2, Op::Exit, 9)], 1, Arrival::Script);
        assert_eq!(r.managers[0].records.len(), 2);
    }

    #[test]
    fn contenders_are_granted_in_arrival_order() {
        let mut s = vec![ev(1, Op::Enter, 0), ev(2, Op::Enter, 0), ev(3, Op::Enter, 0)];
        s.extend([ev(1, Op::Exit, 0), ev(2, Op::Exit, 0), ev(3, Op::Exit, 0)]);
        let r = simulate(&s, 1, Arrival::Script);
        assert_eq!(r.grants(), vec![(0, 1), (0, 2), (0, 3)]);
        assert!(r.stalled.is_empty());
        assert!(overlaps(&intervals(&r.log)).is_empty());
    }

    #[test]
    fn notify_moves_only_the_oldest_waiter() {
        let s = [
            ev(1, Op::Enter, 0),
            ev(1, Op::Wait, 0),
            ev(2, Op::Enter, 0),
            ev(2, Op::Wait, 0),
            ev(3, Op::Enter, 0),
            ev(3, Op::Notify, 0),
        ];
        let r = simulate(&s, 1, Arrival::Script);
        let rec = &r.managers[0].records[&0];
        assert_eq!(rec.owner(), Some(3));
        assert_eq!(rec.queued(), vec![1]);
        assert_eq!(rec.waiting(), vec![2]);
    }

    #[test]
    fn notify_all_requeues_in_wait_order() {
        let s = [
            ev(1, Op::Enter, 0),
            ev(1, Op::Wait, 0),
            ev(2, Op::Enter, 0),
            ev(2, Op::Wait, 0),
            ev(3, Op::Enter, 0),
            ev(3, Op::NotifyAll, 0),
            ev(3, Op::Exit, 0),
        ];
        let r = simulate(&s, 1, Arrival::Script);
        let g = r.grants();
        assert_eq!(&g[g.len() - 1..], &[(0, 1)]);
        assert_eq!(r.managers[0].records[&0].queued(), vec![2]);
    }

    #[test]
    fn wait_restores_recursion_depth() {
        let s = [
            ev(1, Op::Enter, 0),
            ev(1, Op::Enter, 0),
            ev(1, Op::Wait, 0),
            ev(2, Op::Enter, 0),
            ev(2, Op::Notify, 0),
            ev(2, Op::Exit, 0),
            ev(1, Op::Exit, 0),
            ev(1, Op::Exit, 0),
        ];
        let r = simulate(&s, 1, Arrival::Script);
        assert_eq!(r.faults(), 0, "{}", r.log_text());
        assert!(r.stalled.is_empty());
        assert_eq!(r.managers[0].records[&0].owner(), None);
    }

    #[test]
    fn timeout_removes_a_waiter_and_requeues_it() {
        let s = [ev(1, Op::Enter, 0), ev(1, Op::Wait, 0), ev(2, Op::Enter, 0), ev(1, Op::TimeoutRemove, 0)];
        let r = simulate(&s, 1, Arrival::Script);
        let rec = &r.managers[0].records[&0];
        assert!(rec.waiting().is_empty());
        assert_eq!(rec.owner(), Some(2));
        assert_eq!(rec.queued(), vec![1]);
    }

    #[test]
    fn exit_by_non_owner_is_a_fault() {
        let r = simulate(&[ev(1, Op::Enter, 0), ev(2, Op::Exit, 0)], 1, Arrival::Script);
        assert_eq!(r.faults(), 1);
        assert!(r.log_text().contains("fault t2 exit r0"));
    }

    #[test]
    fn managers_partition_objects() {
        let s = [ev(1, Op::Enter, 0), ev(2, Op::Enter, 1), ev(1, Op::Exit, 0), ev(2, Op::Exit, 1)];
        let r = simulate(&s, 2, Arrival::Script);
        assert_eq!(r.managers[0].records.keys().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(r.managers[1].records.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(r.managers[0].handled + r.managers[1].handled, 4);
    }

    #[test]
    fn join_on_dead_thread_sends_nothing() {
        assert!(join_protocol(1, 5, LiveState::Dead).is_empty());
        assert!(is_alive(LiveState::Alive));
        assert!(!is_alive(LiveState::Spawned));
    }

    #[test]
    fn joiner_is_woken_by_completion() {
        let mut s = join_protocol(1, 5, LiveState::Alive);
        s.extend(completion_protocol(2, 5));
        let r = simulate(&s, 1, Arrival::Script);
        assert!(r.log.iter().any(|e| matches!(e, LogEntry::Wake { object: 5, thread: 1, .. })));
        assert!(r.stalled.is_empty(), "{}", r.log_text());
    }

    #[test]
    fn script_round_trip() {
        let src = "t1 enter r3\n# comment\nt2 notifyAll r3\n\nt1 timeoutRemove r3\n";
        let evs = parse_script(src).unwrap();
        assert_eq!(evs.len(), 3);
        assert_eq!(parse_script(&script_to_string(&evs)).unwrap(), evs);
        assert_eq!(parse_script("t1 jump r3").unwrap_err().line, 1);
    }
}
