//! Decomposition of a term into an evaluation context and its active redex.
//!
//! Arguments of `new`, calls and builtins evaluate left to right. An
//! assignment evaluates its right-hand side before its target, and a call
//! evaluates its arguments before its target.

use crate::syntax::Expr;

fn first_open(args: &[Expr]) -> Option<usize> {
    args.iter().position(|a| !a.is_value())
}

/// The redex of a non-value term; `None` for values.
pub fn redex(e: &Expr) -> Option<&Expr> {
    match e {
        Expr::Val(_) => None,
        Expr::Var(_) => Some(e),
        Expr::New(_, args) | Expr::Builtin(_, args) => match first_open(args) {
            Some(i) => redex(&args[i]),
            None => Some(e),
        },
        Expr::Get(t, _) | Expr::MonitorEnter(t) | Expr::MonitorExit(t) | Expr::Intrinsic(_, t) => {
            if t.is_value() {
                Some(e)
            } else {
                redex(t)
            }
        }
        Expr::Set(t, _, v) => {
            if !v.is_value() {
                redex(v)
            } else if !t.is_value() {
                redex(t)
            } else {
                Some(e)
            }
        }
        Expr::Let(_, _, b, _) => {
            if b.is_value() {
                Some(e)
            } else {
                redex(b)
            }
        }
        Expr::If(c, _, _) => {
            if c.is_value() {
                Some(e)
            } else {
                redex(c)
            }
        }
        Expr::Call(t, _, args) => match first_open(args) {
            Some(i) => redex(&args[i]),
            None if !t.is_value() => redex(t),
            None => Some(e),
        },
    }
}

/// Which child of a node holds the redex; `None` when the node itself is it.
fn open_child(e: &Expr) -> Option<usize> {
    match e {
        Expr::New(_, args) | Expr::Builtin(_, args) => first_open(args),
        Expr::Get(t, _) | Expr::MonitorEnter(t) | Expr::MonitorExit(t) | Expr::Intrinsic(_, t) => {
            (!t.is_value()).then_some(0)
        }
        Expr::Set(t, _, v) => {
            if !v.is_value() {
                Some(1)
            } else {
                (!t.is_value()).then_some(0)
            }
        }
        Expr::Let(_, _, b, _) => (!b.is_value()).then_some(0),
        Expr::If(c, _, _) => (!c.is_value()).then_some(0),
        Expr::Call(t, _, args) => first_open(args).map(|i| i + 1).or((!t.is_value()).then_some(0)),
        Expr::Val(_) | Expr::Var(_) => None,
    }
}

pub fn redex_mut(e: &mut Expr) -> Option<&mut Expr> {
    if e.is_value() {
        return None;
    }
    let Some(i) = open_child(e) else { return Some(e) };
    let child = match e {
        Expr::New(_, args) | Expr::Builtin(_, args) => &mut args[i],
        Expr::Get(t, _) | Expr::MonitorEnter(t) | Expr::MonitorExit(t) | Expr::Intrinsic(_, t) => &mut **t,
        Expr::Set(t, _, v) => {
            if i == 1 {
                &mut **v
            } else {
                &mut **t
            }
        }
        Expr::Let(_, _, b, _) => &mut **b,
        Expr::If(c, _, _) => &mut **c,
        Expr::Call(t, _, args) => {
            if i == 0 {
                &mut **t
            } else {
                &mut args[i - 1]
            }
        }
        Expr::Val(_) | Expr::Var(_) => unreachable!(),
    };
    redex_mut(child)
}

/// Replaces the redex of `e` with `with`.
pub fn plug(e: &mut Expr, with: Expr) {
    let slot = redex_mut(e).expect("term has a redex");
    *slot = with;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{expr_to_string, parse_expr};

    fn active(src: &str) -> String {
        expr_to_string(redex(&parse_expr(src).unwrap()).unwrap())
    }

    #[test]
    fn assignment_evaluates_rhs_first() {
        assert_eq!(active("#1.f.g := #2.h"), "#2.h");
        assert_eq!(active("#1.f.g := 1"), "#1.f");
        assert_eq!(active("#1.g := 1"), "#1.g := 1");
    }

    #[test]
    fn call_arguments_then_target() {
        assert_eq!(active("#1.f.m(#2.g, z)"), "#2.g");
        assert_eq!(active("#1.f.m(1, 2)"), "#1.f");
        assert_eq!(active("new C(1, #3.b)"), "#3.b");
    }

    #[test]
    fn let_and_if() {
        assert_eq!(active("let x: Nat = #3.b in x"), "#3.b");
        assert_eq!(active("let x: Nat = 1 in x"), "let x: Nat = 1 in x");
        assert_eq!(active("if eq(1, 2) then 1 else 2"), "eq(1, 2)");
    }

    #[test]
    fn plug_matches_redex() {
        let mut e = parse_expr("let x: Nat = succ(1) in x").unwrap();
        plug(&mut e, crate::syntax::Expr::Val(crate::syntax::Value::Nat(2)));
        assert_eq!(expr_to_string(&e), "let x: Nat = 2 in x");
        assert!(redex(&parse_expr("5").unwrap()).is_none());
    }
}
