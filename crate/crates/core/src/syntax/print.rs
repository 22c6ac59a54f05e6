use std::fmt::Write;

use super::ast::*;

fn needs_parens(e: &Expr) -> bool {
    matches!(e, Expr::Let(..) | Expr::If(..) | Expr::Set(..))
}

fn guarded(e: &Expr, out: &mut String) {
    if needs_parens(e) {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

fn write_args(args: &[Expr], out: &mut String) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(a, out);
    }
    out.push(')');
}

fn write_value(v: Value, out: &mut String) {
    match v {
        Value::Ref(r) => {
            let _ = write!(out, "#{r}");
        }
        v => {
            let _ = write!(out, "{v}");
        }
    }
}

pub fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Var(x) => out.push_str(x),
        Expr::Val(v) => write_value(*v, out),
        Expr::New(c, args) => {
            out.push_str("new ");
            out.push_str(c);
            write_args(args, out);
        }
        Expr::Get(t, f) => {
            guarded(t, out);
            out.push('.');
            out.push_str(f);
        }
        Expr::Set(t, f, v) => {
            guarded(t, out);
            let _ = write!(out, ".{f} := ");
            write_expr(v, out);
        }
        Expr::Let(x, ty, b, body) => {
            let _ = write!(out, "let {x}: {ty} = ");
            guarded(b, out);
            out.push_str(" in ");
            write_expr(body, out);
        }
        Expr::If(c, t, f) => {
            out.push_str("if ");
            guarded(c, out);
            out.push_str(" then ");
            guarded(t, out);
            out.push_str(" else ");
            write_expr(f, out);
        }
        Expr::Call(t, m, args) => {
            guarded(t, out);
            out.push('.');
            out.push_str(m);
            write_args(args, out);
        }
        Expr::MonitorEnter(t) => {
            guarded(t, out);
            out.push_str(".monitorenter");
        }
        Expr::MonitorExit(t) => {
            guarded(t, out);
            out.push_str(".monitorexit");
        }
        Expr::Intrinsic(i, t) => {
            guarded(t, out);
            let _ = write!(out, ".{}()", i.name());
        }
        Expr::Builtin(b, args) => {
            out.push_str(b.name());
            write_args(args, out);
        }
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(e, &mut s);
    s
}

pub fn program_to_string(p: &Program) -> String {
    let mut out = String::new();
    for (i, c) in p.classes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "class {} {{", c.name);
        for f in &c.fields {
            let vol = if f.volatile { "volatile " } else { "" };
            let _ = writeln!(out, "  {vol}{}: {};", f.name, f.ty);
        }
        if let Some(init) = &c.init {
            let _ = writeln!(out, "  init = {};", expr_to_string(init));
        }
        for m in &c.methods {
            let params: Vec<String> = m.params.iter().map(|(x, t)| format!("{x}: {t}")).collect();
            let _ = writeln!(
                out,
                "  {}({}): {} =\n    {}",
                m.name,
                params.join(", "),
                m.ret,
                expr_to_string(&m.body)
            );
        }
        out.push_str("}\n");
    }
    out
}
