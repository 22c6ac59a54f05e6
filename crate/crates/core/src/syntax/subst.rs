use std::collections::HashMap;

use super::ast::*;

/// Simultaneous substitution of closed values for names. Values are closed,
/// so only shadowing by `let` needs care.
pub fn substitute(e: &Expr, bindings: &HashMap<String, Value>) -> Expr {
    if bindings.is_empty() {
        return e.clone();
    }
    let go = |x: &Expr| substitute(x, bindings);
    let all = |xs: &[Expr]| xs.iter().map(go).collect();
    match e {
        Expr::Var(x) => match bindings.get(x) {
            Some(v) => Expr::Val(*v),
            None => e.clone(),
        },
        Expr::Val(_) => e.clone(),
        Expr::New(c, args) => Expr::New(c.clone(), all(args)),
        Expr::Get(t, f) => Expr::Get(Box::new(go(t)), f.clone()),
        Expr::Set(t, f, v) => Expr::Set(Box::new(go(t)), f.clone(), Box::new(go(v))),
        Expr::Let(x, ty, b, body) => {
            let body = if bindings.contains_key(x) {
                let mut inner = bindings.clone();
                inner.remove(x);
                substitute(body, &inner)
            } else {
                go(body)
            };
            Expr::Let(x.clone(), ty.clone(), Box::new(go(b)), Box::new(body))
        }
        Expr::If(c, t, f) => Expr::If(Box::new(go(c)), Box::new(go(t)), Box::new(go(f))),
        Expr::Call(t, m, args) => Expr::Call(Box::new(go(t)), m.clone(), all(args)),
        Expr::MonitorEnter(t) => Expr::MonitorEnter(Box::new(go(t))),
        Expr::MonitorExit(t) => Expr::MonitorExit(Box::new(go(t))),
        Expr::Intrinsic(i, t) => Expr::Intrinsic(*i, Box::new(go(t))),
        Expr::Builtin(b, args) => Expr::Builtin(*b, all(args)),
    }
}

pub fn substitute_one(e: &Expr, x: &str, v: Value) -> Expr {
    substitute(e, &HashMap::from([(x.to_string(), v)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_expr;

    fn b(pairs: &[(&str, Value)]) -> HashMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn variable_is_replaced() {
        let e = substitute(&Expr::var("x"), &b(&[("x", Value::Nat(5))]));
        assert_eq!(e, Expr::Val(Value::Nat(5)));
    }

    #[test]
    fn let_shadows() {
        let e = parse_expr("let x: Nat = 1 in x").unwrap();
        assert_eq!(substitute(&e, &b(&[("x", Value::Nat(5))])), e);
    }

    #[test]
    fn shadowed_name_still_replaced_in_bound() {
        let e = parse_expr("let x: Nat = x in x").unwrap();
        let got = substitute(&e, &b(&[("x", Value::Nat(5))]));
        assert_eq!(got, parse_expr("let x: Nat = 5 in x").unwrap());
    }

    #[test]
    fn this_is_an_ordinary_name() {
        let e = parse_expr("this.f := y").unwrap();
        let got = substitute(&e, &b(&[("this", Value::Ref(3)), ("y", Value::Bool(true))]));
        assert_eq!(got, parse_expr("#3.f := true").unwrap());
    }
}
