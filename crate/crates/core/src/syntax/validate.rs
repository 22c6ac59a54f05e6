use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use super::ast::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub span: Option<Span>,
    pub msg: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(f, "{s}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LookupError {
    #[error("no class `{0}`")]
    NoClass(String),
    #[error("class `{0}` has no method `{1}`")]
    NoMethod(String, String),
}

pub fn lookup_method<'p>(p: &'p Program, class: &str, method: &str) -> Result<&'p MethodDef, LookupError> {
    let c = p.class(class).ok_or_else(|| LookupError::NoClass(class.into()))?;
    c.method(method).ok_or_else(|| LookupError::NoMethod(class.into(), method.into()))
}

pub const RESERVED_METHODS: [&str; 6] =
    ["start", "join", "interrupt", "interrupted", "monitorenter", "monitorexit"];

/// Static type of an expression; `Any` when it cannot be known (runtime
/// references, `null`).
#[derive(Clone, Debug, PartialEq)]
enum Ty {
    T(Type),
    Any,
}

struct Checker<'p> {
    p: &'p Program,
    issues: Vec<Issue>,
    span: Span,
}

impl<'p> Checker<'p> {
    fn issue(&mut self, msg: String) {
        self.issues.push(Issue { span: Some(self.span), msg });
    }

    fn check_type(&mut self, t: &Type) {
        if let Type::Class(c) = t {
            if self.p.class(c).is_none() {
                self.issue(format!("unresolved class `{c}`"));
            }
        }
    }

    fn class_of(&mut self, t: &Ty, what: &str) -> Option<&'p ClassDef> {
        match t {
            Ty::T(Type::Class(c)) => self.p.class(c),
            Ty::Any => None,
            Ty::T(other) => {
                self.issue(format!("{what} on a value of type `{other}`"));
                None
            }
        }
    }

    fn expr(&mut self, e: &Expr, env: &mut Vec<(String, Type)>) -> Ty {
        match e {
            Expr::Var(x) => match env.iter().rev().find(|(n, _)| n == x) {
                Some((_, t)) => Ty::T(t.clone()),
                None => {
                    self.issue(format!("unresolved variable `{x}`"));
                    Ty::Any
                }
            },
            Expr::Val(v) => match v {
                Value::Nat(_) => Ty::T(Type::Nat),
                Value::Bool(_) => Ty::T(Type::Bool),
                Value::Unit => Ty::T(Type::Unit),
                Value::Ref(_) | Value::Null => Ty::Any,
            },
            Expr::New(c, args) => {
                for a in args {
                    self.expr(a, env);
                }
                match self.p.class(c) {
                    Some(cd) => {
                        if cd.fields.len() != args.len() {
                            self.issue(format!(
                                "`new {c}` expects {} argument(s), got {}",
                                cd.fields.len(),
                                args.len()
                            ));
                        }
                        Ty::T(Type::Class(c.clone()))
                    }
                    None => {
                        self.issue(format!("unresolved class `{c}`"));
                        Ty::Any
                    }
                }
            }
            Expr::Get(t, f) | Expr::Set(t, f, _) => {
                if let Expr::Set(_, _, v) = e {
                    self.expr(v, env);
                }
                let tt = self.expr(t, env);
                let Some(cd) = self.class_of(&tt, "field access") else { return Ty::Any };
                match cd.fields.iter().find(|d| &d.name == f) {
                    Some(d) => Ty::T(d.ty.clone()),
                    None => {
                        let cname = cd.name.clone();
                        self.issue(format!("unresolved field `{f}` in class `{cname}`"));
                        Ty::Any
                    }
                }
            }
            Expr::Let(x, ty, b, body) => {
                self.check_type(ty);
                self.expr(b, env);
                env.push((x.clone(), ty.clone()));
                let r = self.expr(body, env);
                env.pop();
                r
            }
            Expr::If(c, t, f) => {
                self.expr(c, env);
                let r = self.expr(t, env);
                self.expr(f, env);
                r
            }
            Expr::Call(t, m, args) => {
                for a in args {
                    self.expr(a, env);
                }
                let tt = self.expr(t, env);
                let Some(cd) = self.class_of(&tt, "method call") else { return Ty::Any };
                match cd.method(m) {
                    Some(md) => {
                        if md.params.len() != args.len() {
                            self.issue(format!(
                                "`{}.{m}` expects {} argument(s), got {}",
                                cd.name,
                                md.params.len(),
                                args.len()
                            ));
                        }
                        Ty::T(md.ret.clone())
                    }
                    None => {
                        let cname = cd.name.clone();
                        self.issue(format!("unresolved method `{m}` in class `{cname}`"));
                        Ty::Any
                    }
                }
            }
            Expr::MonitorEnter(t) | Expr::MonitorExit(t) => {
                let tt = self.expr(t, env);
                self.class_of(&tt, "monitor operation");
                Ty::T(Type::Unit)
            }
            Expr::Intrinsic(i, t) => {
                let tt = self.expr(t, env);
                if let Some(cd) = self.class_of(&tt, i.name()) {
                    if !cd.is_thread() {
                        let cname = cd.name.clone();
                        self.issue(format!("`{}` on class `{cname}` which declares no `run`", i.name()));
                    }
                }
                Ty::T(if *i == Intrinsic::Interrupted { Type::Bool } else { Type::Unit })
            }
            Expr::Builtin(b, args) => {
                for a in args {
                    self.expr(a, env);
                }
                Ty::T(if *b == Builtin::Eq { Type::Bool } else { Type::Nat })
            }
        }
    }
}

pub fn validate_program(p: &Program) -> ValidationReport {
    let mut ck = Checker { p, issues: Vec::new(), span: Span::default() };
    let mut seen = HashSet::new();
    for c in &p.classes {
        ck.span = c.span;
        if !seen.insert(c.name.as_str()) {
            ck.issue(format!("duplicate class `{}`", c.name));
        }
        if matches!(c.name.as_str(), "Bool" | "Nat" | "Unit") {
            ck.issue(format!("class name `{}` is reserved", c.name));
        }
    }
    match p.class("Main") {
        None => ck.issues.push(Issue { span: None, msg: "missing class `Main`".into() }),
        Some(m) if m.method("run").is_none() => {
            ck.span = m.span;
            ck.issue("class `Main` declares no `run` method".into());
        }
        _ => {}
    }
    for c in &p.classes {
        let mut fields = HashSet::new();
        for f in &c.fields {
            ck.span = f.span;
            if !fields.insert(f.name.as_str()) {
                ck.issue(format!("duplicate field `{}` in class `{}`", f.name, c.name));
            }
            ck.check_type(&f.ty);
        }
        if let Some(init) = &c.init {
            ck.span = c.span;
            let mut env: Vec<(String, Type)> =
                c.fields.iter().map(|f| (f.name.clone(), f.ty.clone())).collect();
            env.push((THIS.into(), Type::Class(c.name.clone())));
            ck.expr(init, &mut env);
        }
        let mut names: HashMap<&str, usize> = HashMap::new();
        for m in &c.methods {
            ck.span = m.span;
            let n = names.entry(m.name.as_str()).or_default();
            *n += 1;
            if *n == 2 {
                ck.issue(format!("overloading not supported: `{}.{}` defined more than once", c.name, m.name));
            }
            if RESERVED_METHODS.contains(&m.name.as_str()) {
                ck.issue(format!("method name `{}` is reserved", m.name));
            }
            if m.name == "run" && !m.params.is_empty() {
                ck.issue(format!("`{}.run` must take no parameters", c.name));
            }
            let mut ps = HashSet::new();
            for (x, t) in &m.params {
                if !ps.insert(x.as_str()) || x == THIS {
                    ck.issue(format!("duplicate parameter `{x}` in `{}.{}`", c.name, m.name));
                }
                ck.check_type(t);
            }
            ck.check_type(&m.ret);
            let mut env: Vec<(String, Type)> = vec![(THIS.into(), Type::Class(c.name.clone()))];
            env.extend(m.params.iter().cloned());
            ck.expr(&m.body, &mut env);
        }
    }
    ValidationReport { issues: ck.issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    fn issues(src: &str) -> Vec<String> {
        validate_program(&parse_program(src).unwrap()).issues.into_iter().map(|i| i.msg).collect()
    }

    #[test]
    fn valid_two_class_program() {
        let src = "class Counter { n: Nat; inc(): Nat = this.n := succ(this.n) }
                   class Main { c: Counter; run(): Unit = let x: Nat = this.c.inc() in () }";
        assert!(issues(src).is_empty());
    }

    #[test]
    fn unresolved_method() {
        let v = issues("class Main { run(): Unit = this.m() }");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("unresolved method"));
    }

    #[test]
    fn overloading_rejected() {
        let v = issues("class Main { run(): Unit = () inc(): Unit = () inc(x: Nat): Unit = () }");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("overloading not supported"));
    }

    #[test]
    fn duplicate_field() {
        let v = issues("class C { f: Nat; f: Nat; } class Main { run(): Unit = () }");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("duplicate field"));
    }

    #[test]
    fn intrinsic_needs_run() {
        let v = issues("class C { } class Main { c: C; run(): Unit = this.c.start() }");
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("declares no `run`"));
    }

    #[test]
    fn lookup() {
        let p = parse_program("class Counter { inc(): Unit = () } class Main { run(): Unit = () }").unwrap();
        assert_eq!(lookup_method(&p, "Counter", "inc").unwrap().name, "inc");
        assert!(lookup_method(&p, "Counter", "missing").is_err());
        assert_eq!(lookup_method(&p, "Main", "run").unwrap().body, Expr::Val(Value::Unit));
    }
}
