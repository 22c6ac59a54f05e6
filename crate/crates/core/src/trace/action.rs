use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syntax::{Ref, Value};

pub type Uid = u64;
pub type CoreId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    In,
    R,
    W,
    Vr,
    Vw,
    L,
    U,
    S,
    Fi,
    Ir,
    Ird,
    Sp,
    J,
    F,
    B,
    I,
    M,
}

impl Kind {
    pub const ALL: [Kind; 17] = [
        Kind::In,
        Kind::R,
        Kind::W,
        Kind::Vr,
        Kind::Vw,
        Kind::L,
        Kind::U,
        Kind::S,
        Kind::Fi,
        Kind::Ir,
        Kind::Ird,
        Kind::Sp,
        Kind::J,
        Kind::F,
        Kind::B,
        Kind::I,
        Kind::M,
    ];

    /// Synchronization kinds. Fetch and write-back are not among them.
    pub fn is_sync(self) -> bool {
        matches!(
            self,
            Kind::In
                | Kind::Ir
                | Kind::Ird
                | Kind::Vr
                | Kind::Vw
                | Kind::L
                | Kind::U
                | Kind::S
                | Kind::Fi
                | Kind::Sp
                | Kind::J
        )
    }

    /// Kinds that put a value into a variable.
    pub fn is_write(self) -> bool {
        matches!(self, Kind::In | Kind::W | Kind::Vw)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::In => "In",
            Kind::R => "R",
            Kind::W => "W",
            Kind::Vr => "Vr",
            Kind::Vw => "Vw",
            Kind::L => "L",
            Kind::U => "U",
            Kind::S => "S",
            Kind::Fi => "Fi",
            Kind::Ir => "Ir",
            Kind::Ird => "Ird",
            Kind::Sp => "Sp",
            Kind::J => "J",
            Kind::F => "F",
            Kind::B => "B",
            Kind::I => "I",
            Kind::M => "M",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    None,
    Var(Ref, Arc<str>),
    Obj(Ref),
    Core(CoreId),
}

impl Target {
    pub fn obj(&self) -> Option<Ref> {
        match self {
            Target::Var(r, _) | Target::Obj(r) => Some(*r),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Target> {
        if s == "-" {
            return Some(Target::None);
        }
        if let Some(c) = s.strip_prefix('c') {
            return Some(Target::Core(c.parse().ok()?));
        }
        let rest = s.strip_prefix('r')?;
        Some(match rest.split_once('.') {
            Some((r, f)) if !f.is_empty() => Target::Var(r.parse().ok()?, f.into()),
            Some(_) => return None,
            None => Target::Obj(rest.parse().ok()?),
        })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::None => f.write_str("-"),
            Target::Var(r, n) => write!(f, "r{r}.{n}"),
            Target::Obj(r) => write!(f, "r{r}"),
            Target::Core(c) => write!(f, "c{c}"),
        }
    }
}

/// Provenance recorded while simulating. `bf` and `ai` are per field of the
/// fetched or invalidated object.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Prov {
    pub w: Option<Uid>,
    pub cs: Option<Uid>,
    pub ab: Option<Uid>,
    pub bf: Vec<(Arc<str>, Uid)>,
    pub ai: Vec<(Arc<str>, Uid)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Action {
    pub uid: Uid,
    pub step: u64,
    pub ord: u32,
    pub core: CoreId,
    pub thread: Ref,
    pub kind: Kind,
    pub target: Target,
    pub value: Option<Value>,
    pub prologue: bool,
    /// Set on initialization actions of volatile variables.
    pub vol: bool,
    pub prov: Prov,
}

impl Action {
    pub fn var(&self) -> Option<(Ref, &str)> {
        match &self.target {
            Target::Var(r, f) => Some((*r, f)),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize, Default)]
struct ProvRecord {
    #[serde(rename = "W", skip_serializing_if = "Option::is_none", default)]
    w: Option<Uid>,
    #[serde(rename = "Cs", skip_serializing_if = "Option::is_none", default)]
    cs: Option<Uid>,
    #[serde(rename = "Bf", skip_serializing_if = "Option::is_none", default)]
    bf: Option<BTreeMap<String, Uid>>,
    #[serde(rename = "Ab", skip_serializing_if = "Option::is_none", default)]
    ab: Option<Uid>,
    #[serde(rename = "Ai", skip_serializing_if = "Option::is_none", default)]
    ai: Option<BTreeMap<String, Uid>>,
}

#[derive(Serialize, Deserialize)]
struct ActionRecord {
    uid: Uid,
    step: u64,
    ord: u32,
    core: CoreId,
    thread: Ref,
    kind: String,
    target: Option<String>,
    value: Option<String>,
    prologue: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    vol: bool,
    prov: ProvRecord,
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

fn field_map(v: &[(Arc<str>, Uid)]) -> Option<BTreeMap<String, Uid>> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().map(|(f, u)| (f.to_string(), *u)).collect())
    }
}

impl Action {
    pub fn to_json(&self) -> String {
        let rec = ActionRecord {
            uid: self.uid,
            step: self.step,
            ord: self.ord,
            core: self.core,
            thread: self.thread,
            kind: self.kind.name().into(),
            target: match self.target {
                Target::None => None,
                ref t => Some(t.to_string()),
            },
            value: self.value.map(|v| v.to_string()),
            prologue: self.prologue,
            vol: self.vol,
            prov: ProvRecord {
                w: self.prov.w,
                cs: self.prov.cs,
                bf: field_map(&self.prov.bf),
                ab: self.prov.ab,
                ai: field_map(&self.prov.ai),
            },
        };
        serde_json::to_string(&rec).expect("action records always serialize")
    }

    pub fn from_json(line: &str, lineno: usize) -> Result<Action, FormatError> {
        let err = |msg: String| FormatError::Line { line: lineno, msg };
        let rec: ActionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let kind = Kind::from_name(&rec.kind).ok_or_else(|| err(format!("unknown kind `{}`", rec.kind)))?;
        let target = match rec.target {
            None => Target::None,
            Some(t) => Target::parse(&t).ok_or_else(|| err(format!("bad target `{t}`")))?,
        };
        let value = match rec.value {
            None => None,
            Some(v) => Some(Value::parse(&v).ok_or_else(|| err(format!("bad value `{v}`")))?),
        };
        let unmap = |m: Option<BTreeMap<String, Uid>>| -> Vec<(Arc<str>, Uid)> {
            m.unwrap_or_default().into_iter().map(|(f, u)| (Arc::from(f.as_str()), u)).collect()
        };
        Ok(Action {
            uid: rec.uid,
            step: rec.step,
            ord: rec.ord,
            core: rec.core,
            thread: rec.thread,
            kind,
            target,
            value,
            prologue: rec.prologue,
            vol: rec.vol,
            prov: Prov {
                w: rec.prov.w,
                cs: rec.prov.cs,
                ab: rec.prov.ab,
                bf: unmap(rec.prov.bf),
                ai: unmap(rec.prov.ai),
            },
        })
    }
}

/// Actions in flattened order: prologue actions by uid, then by position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub actions: Vec<Action>,
}

impl Trace {
    pub fn new(mut actions: Vec<Action>) -> Trace {
        actions.sort_by_key(|a| if a.prologue { (0, a.uid, 0) } else { (1, a.step, a.ord as u64) });
        Trace { actions }
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for a in &self.actions {
            s.push_str(&a.to_json());
            s.push('\n');
        }
        s
    }

    /// Keeps the file order; positions are validated by the checker.
    pub fn from_jsonl(text: &str) -> Result<Trace, FormatError> {
        let mut actions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            actions.push(Action::from_json(line, i + 1)?);
        }
        Ok(Trace { actions })
    }

    pub fn count(&self, k: Kind) -> usize {
        self.actions.iter().filter(|a| a.kind == k).count()
    }
}
