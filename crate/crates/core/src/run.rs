//! Global transitions: Lift, Spawn, Migrate and ParG, driven by a seeded
//! random scheduler or by replay of recorded decisions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::machine::{Body, Code, FinalHeap, Implicit, Life, MachineFault, MachineState, Recorder, ThreadTerm};
use crate::step::{self, Blocked, Mode, Rule};
use crate::syntax::{Program, Ref};
use crate::trace::{CoreId, Target, Trace};

pub const DEFAULT_CORES: usize = 8;
pub const DEFAULT_CAPACITY: usize = 16;
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// A blocked thread and the reason.
pub type BlockedThread = (Ref, String);

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cores: usize,
    pub capacity: usize,
    /// Write back every assignment immediately.
    pub eager: bool,
    pub mode: Mode,
    /// Maximum number of cores stepping in one transition.
    pub width: usize,
    pub budget: u64,
    pub checkpoints: bool,
    /// Probability of a spontaneous write-back, fetch or invalidation per step.
    pub implicit_noise: f64,
    /// Probability of a spontaneous migration per step.
    pub migrate_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cores: DEFAULT_CORES,
            capacity: DEFAULT_CAPACITY,
            eager: false,
            mode: Mode::Macro,
            width: DEFAULT_CORES,
            budget: DEFAULT_BUDGET,
            checkpoints: false,
            implicit_noise: 0.0,
            migrate_noise: 0.0,
        }
    }
}

/// One core's part of a global transition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub step: u64,
    pub core: CoreId,
    pub rule: Rule,
    pub target: Target,
    pub thread: Ref,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: core {} rule {} target {}@t{}", self.step, self.core, self.rule, self.target, self.thread)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad decision `{0}`")]
pub struct DecisionParseError(pub String);

impl FromStr for Decision {
    type Err = DecisionParseError;

    fn from_str(line: &str) -> Result<Decision, DecisionParseError> {
        let bad = || DecisionParseError(line.to_string());
        let rest = line.trim().strip_prefix("step ").ok_or_else(bad)?;
        let (step, rest) = rest.split_once(": ").ok_or_else(bad)?;
        let words: Vec<&str> = rest.split_whitespace().collect();
        let ["core", core, "rule", rule, "target", tgt] = words[..] else { return Err(bad()) };
        let (tgt, thread) = tgt.rsplit_once("@t").ok_or_else(bad)?;
        Ok(Decision {
            step: step.parse().map_err(|_| bad())?,
            core: core.parse().map_err(|_| bad())?,
            rule: Rule::from_name(rule).ok_or_else(bad)?,
            target: Target::parse(tgt).ok_or_else(bad)?,
            thread: thread.parse().map_err(|_| bad())?,
        })
    }
}

pub fn parse_decisions(text: &str) -> Result<Vec<Decision>, DecisionParseError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn decisions_to_string(ds: &[Decision]) -> String {
    ds.iter().map(|d| format!("{d}\n")).collect()
}

/// What the scheduler picked for one core.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Choice {
    Thread(usize),
    Implicit { core: CoreId, thread: Ref, step: Implicit },
    Migrate { thread: usize, dest: CoreId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// Unfinished threads, none able to step.
    Deadlock(Vec<(Ref, String)>),
    Budget,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Deadlock(_) => "deadlock",
            Outcome::Budget => "budget exhausted",
        }
    }
}

/// State after a transition, with the cores that took part in it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub cores: Vec<CoreId>,
    pub state: MachineState,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("program has no class `Main` with a `run` method")]
    NoMain,
    #[error("replay diverged at {decision}: {msg}")]
    Diverged { decision: String, msg: String },
    #[error(transparent)]
    Fault(#[from] MachineFault),
}

#[derive(Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub decisions: Vec<Decision>,
    pub outcome: Outcome,
    pub steps: u64,
    pub state: MachineState,
    pub checkpoints: Option<Vec<Checkpoint>>,
}

impl RunResult {
    pub fn final_heap(&self) -> FinalHeap {
        self.state.final_heap()
    }
}

/// A running machine together with its recorded history.
pub struct Machine {
    pub state: MachineState,
    pub mode: Mode,
    pub step: u64,
    pub actions: Vec<crate::trace::Action>,
    pub decisions: Vec<Decision>,
    pub checkpoints: Option<Vec<Checkpoint>>,
}

impl Machine {
    /// Step 0: allocate `Main` and place its thread on core 0.
    pub fn boot(program: &Program, cfg: &RunConfig) -> Result<Machine, RunError> {
        Self::boot_code(Code::new(program.clone()), cfg)
    }

    pub fn boot_code(code: Arc<Code>, cfg: &RunConfig) -> Result<Machine, RunError> {
        let main = code.program.class_index("Main").ok_or(RunError::NoMain)?;
        if !code.classes[main].thread {
            return Err(RunError::NoMain);
        }
        let mut state = MachineState::new(code, cfg.cores, cfg.capacity);
        state.eager = cfg.eager;
        let mut rec = Recorder::new(0);
        let r = state.allocate(main as u16, 0, 0, &mut rec);
        state.heap[r as usize].life = Some(Life::Spawned);
        state.threads.push(ThreadTerm { thread: r, core: 0, body: Body::Start, fresh: false });
        let checkpoints =
            cfg.checkpoints.then(|| vec![Checkpoint { step: 0, cores: vec![0], state: state.clone() }]);
        Ok(Machine { state, mode: cfg.mode, step: 0, actions: rec.actions, decisions: Vec::new(), checkpoints })
    }

    /// Applies one global transition; choices must be on distinct cores.
    pub fn transition(&mut self, choices: &[Choice]) -> Result<(), MachineFault> {
        self.step += 1;
        let mut rec = Recorder::new(self.step);
        let mut cores = Vec::with_capacity(choices.len());
        for c in choices {
            let d = self.apply(c, &mut rec)?;
            cores.push(d.core);
            self.decisions.push(d);
        }
        self.actions.append(&mut rec.actions);
        if let Some(cps) = &mut self.checkpoints {
            cps.push(Checkpoint { step: self.step, cores, state: self.state.clone() });
        }
        Ok(())
    }

    fn apply(&mut self, c: &Choice, rec: &mut Recorder) -> Result<Decision, MachineFault> {
        let s = &mut self.state;
        Ok(match *c {
            Choice::Thread(ti) => {
                let (thread, core) = (s.threads[ti].thread, s.threads[ti].core);
                let (rule, target) = step::step(s, ti, self.mode, rec)?;
                Decision { step: self.step, core, rule, target, thread }
            }
            Choice::Implicit { core, thread, step: imp } => {
                let target = step::implicit_target(s, imp);
                s.apply_implicit(core, thread, imp, rec)?;
                let rule = step::Micro::Implicit(imp).rule();
                Decision { step: self.step, core, rule, target, thread }
            }
            Choice::Migrate { thread: ti, dest } => {
                let (thread, core) = (s.threads[ti].thread, s.threads[ti].core);
                step::migrate(s, ti, dest, rec)?;
                Decision { step: self.step, core, rule: Rule::Migrate, target: Target::Core(dest), thread }
            }
        })
    }

    /// Runnable threads with their step summaries; blocked threads with reasons.
    pub fn survey(&self) -> (Vec<(usize, step::StepInfo)>, Vec<BlockedThread>) {
        let mut ready = Vec::new();
        let mut blocked = Vec::new();
        for (ti, t) in self.state.threads.iter().enumerate() {
            match step::step_info(&self.state, ti, self.mode) {
                Ok(info) => ready.push((ti, info)),
                Err(Blocked::Finished) => {}
                Err(b) => blocked.push((t.thread, b.to_string())),
            }
        }
        (ready, blocked)
    }

    fn into_result(self, outcome: Outcome) -> RunResult {
        RunResult {
            trace: Trace::new(self.actions),
            decisions: self.decisions,
            outcome,
            steps: self.step,
            state: self.state,
            checkpoints: self.checkpoints,
        }
    }

    /// Turns a recorded decision back into a choice.
    fn choice_for(&self, d: &Decision) -> Result<Choice, String> {
        let s = &self.state;
        let imp = match (d.rule, &d.target) {
            (Rule::Fetch, Target::Obj(r)) => Some(Implicit::Fetch(*r)),
            (Rule::Invalidate, Target::Obj(r)) => Some(Implicit::Invalidate(*r)),
            (Rule::WriteBack, Target::Var(r, f)) => {
                Some(Implicit::WriteBack(s.resolve(*r, f).ok_or("unknown variable")?))
            }
            (Rule::Fetch | Rule::Invalidate | Rule::WriteBack, _) => return Err("bad implicit target".into()),
            _ => None,
        };
        if let Some(step) = imp {
            return Ok(Choice::Implicit { core: d.core, thread: d.thread, step });
        }
        let ti = s.thread_index(d.thread).ok_or("no such thread")?;
        if s.threads[ti].core != d.core {
            return Err(format!("thread is on core {}", s.threads[ti].core));
        }
        match (d.rule, &d.target) {
            (Rule::Migrate, Target::Core(dest)) => Ok(Choice::Migrate { thread: ti, dest: *dest }),
            (Rule::Migrate, _) => Err("bad migrate target".into()),
            _ => match step::step_info(s, ti, self.mode) {
                Ok(info) if info.rule == d.rule && info.target == d.target => Ok(Choice::Thread(ti)),
                Ok(info) => Err(format!("thread would take {} on {}", info.rule, info.target)),
                Err(b) => Err(b.to_string()),
            },
        }
    }

    /// Classifies the current state and packages the history.
    pub fn finish(self) -> RunResult {
        let (ready, blocked) = self.survey();
        let outcome = if !ready.is_empty() {
            Outcome::Budget
        } else if blocked.is_empty() {
            Outcome::Completed
        } else {
            Outcome::Deadlock(blocked)
        };
        self.into_result(outcome)
    }
}

fn pick_transition(m: &Machine, ready: &[(usize, step::StepInfo)], cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Vec<Choice> {
    let s = &m.state;
    if cfg.implicit_noise > 0.0 && rng.gen_bool(cfg.implicit_noise) {
        let mut opts = Vec::new();
        for (c, _) in s.cores.iter().enumerate() {
            let Some(owner) = step::core_owner(s, c as CoreId) else { continue };
            for imp in step::spontaneous(s, c as CoreId) {
                opts.push(Choice::Implicit { core: c as CoreId, thread: owner, step: imp });
            }
        }
        if let Some(c) = opts.choose(rng) {
            return vec![c.clone()];
        }
    }
    if cfg.migrate_noise > 0.0 && rng.gen_bool(cfg.migrate_noise) {
        let mut opts = Vec::new();
        for &(ti, _) in ready {
            for dest in 0..s.cores.len() as CoreId {
                if step::can_migrate(s, ti, dest) {
                    opts.push(Choice::Migrate { thread: ti, dest });
                }
            }
        }
        if let Some(c) = opts.choose(rng) {
            return vec![c.clone()];
        }
    }
    let mut by_core: Vec<Vec<usize>> = vec![Vec::new(); s.cores.len()];
    for (i, (ti, _)) in ready.iter().enumerate() {
        by_core[s.threads[*ti].core as usize].push(i);
    }
    let mut cores: Vec<usize> = (0..by_core.len()).filter(|&c| !by_core[c].is_empty()).collect();
    cores.shuffle(rng);
    let (mut writer, mut sync) = (None, false);
    let mut picked = Vec::new();
    for c in cores {
        if picked.len() + writer.iter().count() >= cfg.width.max(1) {
            break;
        }
        let &i = by_core[c].choose(rng).expect("non-empty");
        let (ti, info) = &ready[i];
        if (info.writer && writer.is_some()) || (info.sync && sync) {
            continue;
        }
        sync |= info.sync;
        if info.writer {
            writer = Some(*ti);
        } else {
            picked.push(Choice::Thread(*ti));
        }
    }
    // The heap writer goes last so the others observe the heap before it.
    picked.extend(writer.map(Choice::Thread));
    picked
}

pub fn run_random(program: &Program, cfg: &RunConfig, seed: u64) -> Result<RunResult, RunError> {
    run_random_code(Code::new(program.clone()), cfg, seed)
}

pub fn run_random_code(code: Arc<Code>, cfg: &RunConfig, seed: u64) -> Result<RunResult, RunError> {
    let mut m = Machine::boot_code(code, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while m.step < cfg.budget {
        let (ready, blocked) = m.survey();
        if ready.is_empty() {
            let outcome = if blocked.is_empty() { Outcome::Completed } else { Outcome::Deadlock(blocked) };
            return Ok(m.into_result(outcome));
        }
        let choices = pick_transition(&m, &ready, cfg, &mut rng);
        m.transition(&choices)?;
    }
    Ok(m.finish())
}

/// Re-executes recorded decisions; any mismatch is an error.
pub fn replay(program: &Program, cfg: &RunConfig, decisions: &[Decision]) -> Result<RunResult, RunError> {
    let mut m = Machine::boot(program, cfg)?;
    let mut i = 0;
    while i < decisions.len() {
        let n = decisions[i].step;
        let mut choices = Vec::new();
        let start = i;
        while i < decisions.len() && decisions[i].step == n {
            i += 1;
        }
        // Only the last choice of a transition may write the heap, so all
        // of them can be resolved against the state before it.
        for d in &decisions[start..i] {
            let c = m
                .choice_for(d)
                .map_err(|msg| RunError::Diverged { decision: d.to_string(), msg })?;
            choices.push(c);
        }
        m.transition(&choices).map_err(|e| RunError::Diverged {
            decision: decisions[start].to_string(),
            msg: e.to_string(),
        })?;
        if m.step != n {
            return Err(RunError::Diverged {
                decision: decisions[start].to_string(),
                msg: format!("recorded as step {n}, replayed as step {}", m.step),
            });
        }
    }
    Ok(m.finish())
}
