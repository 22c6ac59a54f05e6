//! Seeded generator of small, well-typed, recursion-free programs: a few
//! data classes, up to two worker threads and `Main`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::syntax::{Builtin, ClassDef, Expr, FieldDef, Intrinsic, MethodDef, Program, Span, Type, Value, THIS};

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub max_classes: usize,
    /// Including `Main`.
    pub max_threads: usize,
    /// Bound on [`op_count`] of the whole program.
    pub max_ops: usize,
    pub volatile_prob: f64,
    pub interrupt_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_classes: 4, max_threads: 3, max_ops: 40, volatile_prob: 0.3, interrupt_prob: 0.1 }
    }
}

/// Operations in an expression: everything except variables, values and
/// `let` binders.
pub fn expr_ops(e: &Expr) -> usize {
    let own = usize::from(!matches!(e, Expr::Var(_) | Expr::Val(_) | Expr::Let(..)));
    own + match e {
        Expr::Var(_) | Expr::Val(_) => 0,
        Expr::New(_, a) | Expr::Builtin(_, a) => a.iter().map(expr_ops).sum(),
        Expr::Get(e, _) | Expr::MonitorEnter(e) | Expr::MonitorExit(e) | Expr::Intrinsic(_, e) => expr_ops(e),
        Expr::Set(a, _, b) | Expr::Let(_, _, a, b) => expr_ops(a) + expr_ops(b),
        Expr::If(a, b, c) => expr_ops(a) + expr_ops(b) + expr_ops(c),
        Expr::Call(t, _, a) => expr_ops(t) + a.iter().map(expr_ops).sum::<usize>(),
    }
}

/// Operations over every method body and explicit constructor.
pub fn op_count(p: &Program) -> usize {
    p.classes
        .iter()
        .map(|c| c.init.iter().map(expr_ops).sum::<usize>() + c.methods.iter().map(|m| expr_ops(&m.body)).sum::<usize>())
        .sum()
}

pub fn generate(seed: u64, cfg: &GenConfig) -> Program {
    generate_with(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn get(h: &Expr, f: &str) -> Expr {
    Expr::Get(b(h.clone()), f.into())
}

fn nat(n: u64) -> Expr {
    Expr::Val(Value::Nat(n))
}

fn unit() -> Expr {
    Expr::Val(Value::Unit)
}

fn seq(ty: Type, first: Expr, rest: Expr) -> Expr {
    Expr::Let("_".into(), ty, b(first), b(rest))
}

fn field(name: String, ty: Type, volatile: bool) -> FieldDef {
    FieldDef { name, ty, volatile, span: Span::default() }
}

fn method(name: &str, params: Vec<(String, Type)>, ret: Type, body: Expr) -> MethodDef {
    MethodDef { name: name.into(), params, ret, body, span: Span::default() }
}

struct Data {
    name: String,
    fields: Vec<(String, Type)>,
    /// First `Nat` field, the one the helper methods update.
    counter: String,
}

#[derive(Clone, Default)]
struct Scope {
    handles: Vec<(Expr, usize)>,
    nats: Vec<String>,
    bools: Vec<String>,
    worker: bool,
}

enum Stmt {
    Plain(Type, Expr),
    Bind(String, Type, Expr),
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    data: Vec<Data>,
    budget: usize,
    fresh: usize,
}

impl Gen<'_> {
    fn name(&mut self, p: &str) -> String {
        self.fresh += 1;
        format!("{p}{}", self.fresh)
    }

    fn handle(&mut self, sc: &Scope) -> (Expr, usize) {
        sc.handles.choose(self.rng).expect("at least one handle").clone()
    }

    fn nat_value(&mut self, sc: &Scope) -> Expr {
        match self.rng.gen_range(0..4) {
            0 if !sc.nats.is_empty() => Expr::var(sc.nats.choose(self.rng).expect("non-empty")),
            1 if self.budget >= 3 && !sc.handles.is_empty() => {
                let (h, k) = self.handle(sc);
                let f = self.data[k].counter.clone();
                self.budget -= 2 + expr_ops(&h);
                Expr::Builtin(Builtin::Succ, vec![get(&h, &f)])
            }
            _ => nat(self.rng.gen_range(0..4)),
        }
    }

    fn value(&mut self, ty: &Type, sc: &Scope) -> Expr {
        match ty {
            Type::Bool => match self.rng.gen_range(0..3) {
                0 if !sc.bools.is_empty() => Expr::var(sc.bools.choose(self.rng).expect("non-empty")),
                _ => Expr::Val(Value::Bool(self.rng.gen())),
            },
            _ => self.nat_value(sc),
        }
    }

    fn cost(&self, e: &Expr) -> Option<usize> {
        let c = expr_ops(e);
        (c <= self.budget).then_some(c)
    }

    fn stmt(&mut self, sc: &Scope, depth: usize) -> Option<Stmt> {
        let (h, k) = self.handle(sc);
        let pick = self.rng.gen_range(0..100);
        let s = if pick < 30 {
            let (f, ty) = self.data[k].fields.choose(self.rng).expect("fields").clone();
            let v = self.value(&ty, sc);
            Stmt::Plain(ty, Expr::Set(b(h), f, b(v)))
        } else if pick < 50 {
            let (f, ty) = self.data[k].fields.choose(self.rng).expect("fields").clone();
            let x = self.name(if ty == Type::Bool { "b" } else { "n" });
            Stmt::Bind(x, ty, get(&h, &f))
        } else if pick < 65 && depth < 2 && self.budget >= 4 {
            self.budget -= 2 + 2 * expr_ops(&h);
            let n = self.rng.gen_range(1..=3);
            let inner = self.block(sc, n, depth + 1, Expr::MonitorExit(b(h.clone())));
            Stmt::Plain(Type::Unit, seq(Type::Unit, Expr::MonitorEnter(b(h)), inner))
        } else if pick < 75 && depth < 2 && self.budget >= 6 {
            let (f, ty) = self.data[k].fields.choose(self.rng).expect("fields").clone();
            let cond = match ty {
                Type::Bool => get(&h, &f),
                _ => Expr::Builtin(Builtin::Eq, vec![get(&h, &f), nat(self.rng.gen_range(0..3))]),
            };
            self.budget = self.budget.saturating_sub(expr_ops(&cond) + 1);
            let n1 = self.rng.gen_range(1..=2);
            let n2 = self.rng.gen_range(0..=1);
            let t = self.block(sc, n1, depth + 1, unit());
            let e = self.block(sc, n2, depth + 1, unit());
            return Some(Stmt::Plain(Type::Unit, Expr::If(b(cond), b(t), b(e))));
        } else if pick < 85 {
            let (m, args) = if self.rng.gen_bool(0.5) { ("put", vec![self.nat_value(sc)]) } else { ("bump", vec![]) };
            Stmt::Plain(Type::Nat, Expr::Call(b(h), m.into(), args))
        } else if pick < 93 {
            let k = self.rng.gen_range(0..self.data.len());
            let args: Vec<Expr> = self.data[k].fields.clone().iter().map(|(_, ty)| self.value(ty, sc)).collect();
            let x = self.name("o");
            Stmt::Bind(x, Type::Class(self.data[k].name.clone()), Expr::New(self.data[k].name.clone(), args))
        } else if sc.worker {
            let x = self.name("b");
            Stmt::Bind(x, Type::Bool, Expr::Intrinsic(Intrinsic::Interrupted, b(Expr::var(THIS))))
        } else {
            return None;
        };
        let e = match &s {
            Stmt::Plain(_, e) | Stmt::Bind(_, _, e) => e,
        };
        // Compound statements paid for their own parts already.
        if matches!(e, Expr::Let(..)) {
            return Some(s);
        }
        let c = self.cost(e)?;
        self.budget -= c;
        Some(s)
    }

    /// Up to `n` statements followed by `tail`.
    fn block(&mut self, sc: &Scope, n: usize, depth: usize, tail: Expr) -> Expr {
        let mut sc = sc.clone();
        let mut stmts = Vec::new();
        for _ in 0..n {
            if self.budget == 0 {
                break;
            }
            let Some(s) = self.stmt(&sc, depth) else { continue };
            if let Stmt::Bind(x, ty, _) = &s {
                match ty {
                    Type::Nat => sc.nats.push(x.clone()),
                    Type::Bool => sc.bools.push(x.clone()),
                    Type::Class(c) => {
                        let k = self.data.iter().position(|d| &d.name == c).expect("data class");
                        sc.handles.push((Expr::var(x), k));
                    }
                    Type::Unit => {}
                }
            }
            stmts.push(s);
        }
        stmts.into_iter().rev().fold(tail, |rest, s| match s {
            Stmt::Plain(ty, e) => seq(ty, e, rest),
            Stmt::Bind(x, ty, e) => Expr::Let(x, ty, b(e), b(rest)),
        })
    }
}

fn data_class(rng: &mut ChaCha8Rng, i: usize, cfg: &GenConfig) -> (Data, ClassDef) {
    let name = format!("D{i}");
    let n = rng.gen_range(1..=3);
    let mut fields = Vec::new();
    let mut defs = Vec::new();
    for j in 0..n {
        let ty = if j == 0 || rng.gen_bool(0.7) { Type::Nat } else { Type::Bool };
        let f = ["x", "y", "z"][j].to_string();
        defs.push(field(f.clone(), ty.clone(), rng.gen_bool(cfg.volatile_prob)));
        fields.push((f, ty));
    }
    let c = "x".to_string();
    let this = Expr::var(THIS);
    let put = method("put", vec![("v".into(), Type::Nat)], Type::Nat, Expr::Set(b(this.clone()), c.clone(), b(Expr::var("v"))));
    let bump = method(
        "bump",
        vec![],
        Type::Nat,
        seq(
            Type::Unit,
            Expr::MonitorEnter(b(this.clone())),
            Expr::Let(
                "r".into(),
                Type::Nat,
                b(Expr::Set(b(this.clone()), c.clone(), b(Expr::Builtin(Builtin::Succ, vec![get(&this, &c)])))),
                b(seq(Type::Unit, Expr::MonitorExit(b(this)), Expr::var("r"))),
            ),
        ),
    );
    let def = ClassDef { name: name.clone(), fields: defs, init: None, methods: vec![put, bump], span: Span::default() };
    (Data { name, fields, counter: c }, def)
}

pub fn generate_with(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Program {
    let max_data = cfg.max_classes.saturating_sub(1).clamp(1, 2);
    let nd = rng.gen_range(1..=max_data);
    let room = cfg.max_classes.saturating_sub(nd + 1);
    let nw = rng.gen_range(0..=room.min(cfg.max_threads.saturating_sub(1)));
    let mut classes = Vec::new();
    let mut data = Vec::new();
    for i in 0..nd {
        let (d, c) = data_class(rng, i, cfg);
        data.push(d);
        classes.push(c);
    }
    let fixed = op_count(&Program { classes: classes.clone() });
    // Main allocates one object per data class and each worker, then
    // starts, maybe interrupts and maybe joins it.
    let reserve = nd + nw * 4;
    let budget = cfg.max_ops.saturating_sub(fixed + reserve);
    let mut g = Gen { rng, data, budget: 0, fresh: 0 };

    let mut workers = Vec::new();
    for w in 1..=nw {
        let name = format!("T{w}");
        let nh = g.rng.gen_range(1..=nd.min(2));
        let mut handles: Vec<usize> = (0..nd).collect();
        handles.shuffle(g.rng);
        handles.truncate(nh);
        let fields: Vec<FieldDef> =
            handles.iter().enumerate().map(|(j, &k)| field(format!("h{j}"), Type::Class(g.data[k].name.clone()), false)).collect();
        let sc = Scope {
            handles: handles.iter().enumerate().map(|(j, &k)| (get(&Expr::var(THIS), &format!("h{j}")), k)).collect(),
            worker: true,
            ..Scope::default()
        };
        g.budget = budget / (nw + 1);
        let n = g.rng.gen_range(1..=6);
        let body = g.block(&sc, n, 0, unit());
        let run = method("run", vec![], Type::Unit, body);
        classes.push(ClassDef { name: name.clone(), fields, init: None, methods: vec![run], span: Span::default() });
        workers.push((name, handles));
    }

    // Main: allocations, then statements with starts, interrupts and joins
    // spliced in.
    g.budget = budget - (budget / (nw + 1)) * nw;
    let mut sc = Scope::default();
    let mut allocs: Vec<(String, Type, Expr)> = Vec::new();
    for k in 0..nd {
        let args: Vec<Expr> = g.data[k].fields.clone().iter().map(|(_, ty)| g.value(ty, &Scope::default())).collect();
        let x = format!("d{k}");
        allocs.push((x.clone(), Type::Class(g.data[k].name.clone()), Expr::New(g.data[k].name.clone(), args)));
        sc.handles.push((Expr::var(&x), k));
    }
    for (w, handles) in &workers {
        let args = handles.iter().map(|k| Expr::var(&format!("d{k}"))).collect();
        allocs.push((w.to_lowercase(), Type::Class(w.clone()), Expr::New(w.clone(), args)));
    }
    let mut events: Vec<(Type, Expr)> = Vec::new();
    for (w, _) in &workers {
        let x = Expr::var(&w.to_lowercase());
        events.push((Type::Unit, Expr::Intrinsic(Intrinsic::Start, b(x.clone()))));
        if g.rng.gen_bool(cfg.interrupt_prob) {
            events.push((Type::Unit, Expr::Intrinsic(Intrinsic::Interrupt, b(x.clone()))));
        }
        if g.rng.gen_bool(0.6) {
            events.push((Type::Unit, Expr::Intrinsic(Intrinsic::Join, b(x))));
        }
    }
    // Interleave events with segments of ordinary statements, keeping the
    // order of each worker's start, interrupt and join.
    let n = g.rng.gen_range(1..=6);
    let mut body = g.block(&sc, n, 0, unit());
    for (ty, e) in events.into_iter().rev() {
        let n = g.rng.gen_range(0..=2);
        let mid = g.block(&sc, n, 0, body);
        body = seq(ty, e, mid);
    }
    for (x, ty, e) in allocs.into_iter().rev() {
        body = Expr::Let(x, ty, b(e), b(body));
    }
    classes.push(ClassDef {
        name: "Main".into(),
        fields: vec![],
        init: None,
        methods: vec![method("run", vec![], Type::Unit, body)],
        span: Span::default(),
    });
    Program { classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_program, program_to_string, validate_program};

    #[test]
    fn generated_programs_are_valid_and_small() {
        let cfg = GenConfig::default();
        for seed in 0..300 {
            let p = generate(seed, &cfg);
            let rep = validate_program(&p);
            assert!(rep.is_ok(), "seed {seed}:\n{rep}\n{}", program_to_string(&p));
            assert!(p.classes.len() <= 4);
            assert!(p.classes.iter().filter(|c| c.is_thread()).count() <= 3);
            assert!(op_count(&p) <= 40, "seed {seed}: {} ops\n{}", op_count(&p), program_to_string(&p));
        }
    }

    #[test]
    fn printing_round_trips() {
        for seed in 0..100 {
            let p = generate(seed, &GenConfig::default());
            assert_eq!(parse_program(&program_to_string(&p)).unwrap(), p, "seed {seed}");
        }
    }

    #[test]
    fn same_seed_same_program() {
        assert_eq!(generate(7, &GenConfig::default()), generate(7, &GenConfig::default()));
    }
}
