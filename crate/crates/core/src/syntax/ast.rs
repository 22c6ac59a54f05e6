use std::fmt;

use serde::{Deserialize, Serialize};

/// Source position, ignored by equality so that reparsed trees compare equal.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for Span {}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

pub type Ref = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Ref(Ref),
    Null,
    Unit,
    Bool(bool),
    Nat(u64),
}

impl Value {
    pub fn as_ref(self) -> Option<Ref> {
        match self {
            Value::Ref(r) => Some(r),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Value> {
        Some(match s {
            "()" => Value::Unit,
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            "null" => Value::Null,
            _ => match s.strip_prefix('r') {
                Some(n) => Value::Ref(n.parse().ok()?),
                None => Value::Nat(s.parse().ok()?),
            },
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Ref(r) => write!(f, "r{r}"),
            Value::Null => f.write_str("null"),
            Value::Unit => f.write_str("()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Nat(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Class(String),
    Bool,
    Nat,
    Unit,
}

impl Type {
    pub fn default_value(&self) -> Value {
        match self {
            Type::Class(_) => Value::Null,
            Type::Bool => Value::Bool(false),
            Type::Nat => Value::Nat(0),
            Type::Unit => Value::Unit,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Class(c) => f.write_str(c),
            Type::Bool => f.write_str("Bool"),
            Type::Nat => f.write_str("Nat"),
            Type::Unit => f.write_str("Unit"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    Start,
    Join,
    Interrupt,
    Interrupted,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 4] = [
        Intrinsic::Start,
        Intrinsic::Join,
        Intrinsic::Interrupt,
        Intrinsic::Interrupted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Start => "start",
            Intrinsic::Join => "join",
            Intrinsic::Interrupt => "interrupt",
            Intrinsic::Interrupted => "interrupted",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Eq,
    Succ,
    Pred,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Eq => "eq",
            Builtin::Succ => "succ",
            Builtin::Pred => "pred",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Eq => 2,
            Builtin::Succ | Builtin::Pred => 1,
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "eq" => Some(Builtin::Eq),
            "succ" => Some(Builtin::Succ),
            "pred" => Some(Builtin::Pred),
            _ => None,
        }
    }

    /// `None` when the operands have the wrong shape; the thread is then stuck.
    pub fn eval(self, args: &[Value]) -> Option<Value> {
        match (self, args) {
            (Builtin::Eq, [a, b]) => Some(Value::Bool(a == b)),
            (Builtin::Succ, [Value::Nat(n)]) => Some(Value::Nat(n.saturating_add(1))),
            (Builtin::Pred, [Value::Nat(n)]) => Some(Value::Nat(n.saturating_sub(1))),
            _ => None,
        }
    }
}

/// `this` is an ordinary variable named `this`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(String),
    Val(Value),
    New(String, Vec<Expr>),
    Get(Box<Expr>, String),
    Set(Box<Expr>, String, Box<Expr>),
    Let(String, Type, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, String, Vec<Expr>),
    MonitorEnter(Box<Expr>),
    MonitorExit(Box<Expr>),
    Intrinsic(Intrinsic, Box<Expr>),
    Builtin(Builtin, Vec<Expr>),
}

pub const THIS: &str = "this";

impl Expr {
    pub fn var(s: &str) -> Expr {
        Expr::Var(s.to_string())
    }

    pub fn value(&self) -> Option<Value> {
        match self {
            Expr::Val(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Expr::Val(_))
    }

    /// Number of syntax nodes.
    pub fn size(&self) -> usize {
        1 + match self {
            Expr::Var(_) | Expr::Val(_) => 0,
            Expr::New(_, a) | Expr::Builtin(_, a) => a.iter().map(Expr::size).sum(),
            Expr::Get(e, _)
            | Expr::MonitorEnter(e)
            | Expr::MonitorExit(e)
            | Expr::Intrinsic(_, e) => e.size(),
            Expr::Set(a, _, b) | Expr::Let(_, _, a, b) => a.size() + b.size(),
            Expr::If(a, b, c) => a.size() + b.size() + c.size(),
            Expr::Call(t, _, a) => t.size() + a.iter().map(Expr::size).sum::<usize>(),
        }
    }

    /// Binder names in pre-order.
    pub fn binders(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(_) | Expr::Val(_) => {}
            Expr::New(_, a) | Expr::Builtin(_, a) => a.iter().for_each(|e| e.binders(out)),
            Expr::Get(e, _)
            | Expr::MonitorEnter(e)
            | Expr::MonitorExit(e)
            | Expr::Intrinsic(_, e) => e.binders(out),
            Expr::Set(a, _, b) => {
                a.binders(out);
                b.binders(out);
            }
            Expr::Let(x, _, a, b) => {
                out.push(x.clone());
                a.binders(out);
                b.binders(out);
            }
            Expr::If(a, b, c) => {
                a.binders(out);
                b.binders(out);
                c.binders(out);
            }
            Expr::Call(t, _, a) => {
                t.binders(out);
                a.iter().for_each(|e| e.binders(out));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: Type,
    pub volatile: bool,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodDef {
    pub name: String,
    pub params: Vec<(String, Type)>,
    pub ret: Type,
    pub body: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
    /// Constructor body; its parameters are the fields, in declaration order.
    pub init: Option<Expr>,
    pub methods: Vec<MethodDef>,
    pub span: Span,
}

impl ClassDef {
    pub fn field_index(&self, f: &str) -> Option<usize> {
        self.fields.iter().position(|d| d.name == f)
    }

    pub fn method(&self, m: &str) -> Option<&MethodDef> {
        self.methods.iter().find(|d| d.name == m)
    }

    pub fn is_thread(&self) -> bool {
        self.method("run").is_some()
    }

    /// The explicit `init`, or one that stores every argument into its field.
    pub fn ctor(&self) -> Expr {
        if let Some(e) = &self.init {
            return e.clone();
        }
        let mut body = Expr::Val(Value::Unit);
        for fd in self.fields.iter().rev() {
            let set = Expr::Set(
                Box::new(Expr::var(THIS)),
                fd.name.clone(),
                Box::new(Expr::Var(fd.name.clone())),
            );
            body = Expr::Let("_".into(), fd.ty.clone(), Box::new(set), Box::new(body));
        }
        body
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub classes: Vec<ClassDef>,
}

impl Program {
    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }
}
