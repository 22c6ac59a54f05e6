use thiserror::Error;

use super::ast::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at {line}:{col}: {msg}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Nat(u64),
    RefLit(u32),
    Sym(&'static str),
    Eof,
}

const SYMS: [&str; 11] = [":=", "{", "}", "(", ")", ":", ";", ",", ".", "=", "#"];

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, msg: String| ParseError { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            out.push((Tok::Ident(s), span));
            continue;
        }
        if c.is_ascii_digit() || (c == '#' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let is_ref = c == '#';
            let start = if is_ref { i + 1 } else { i };
            i = start;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += (i - start) as u32 + is_ref as u32;
            let tok = if is_ref {
                Tok::RefLit(s.parse().map_err(|_| err(line, span.col, format!("bad reference `#{s}`")))?)
            } else {
                Tok::Nat(s.parse().map_err(|_| err(line, span.col, format!("number `{s}` too large")))?)
            };
            out.push((tok, span));
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len() as u32;
                out.push((Tok::Sym(s), span));
            }
            None => return Err(err(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

const KEYWORDS: [&str; 13] = [
    "class", "init", "volatile", "let", "in", "if", "then", "else", "new", "this", "true",
    "false", "null",
];

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let s = self.span();
        Err(ParseError { line: s.line, col: s.col, msg: msg.into() })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Nat(n) => format!("`{n}`"),
            Tok::RefLit(r) => format!("`#{r}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect(&mut self, sym: &'static str) -> Result<(), ParseError> {
        if *self.peek() == Tok::Sym(sym) {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected `{sym}`, found {}", Self::describe(self.peek())))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected `{kw}`, found {}", Self::describe(self.peek())))
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            t => self.fail(format!("expected a name, found {}", Self::describe(&t))),
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let n = self.name()?;
        Ok(match n.as_str() {
            "Bool" => Type::Bool,
            "Nat" => Type::Nat,
            "Unit" => Type::Unit,
            _ => Type::Class(n),
        })
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut classes = Vec::new();
        while *self.peek() != Tok::Eof {
            classes.push(self.class()?);
        }
        Ok(Program { classes })
    }

    fn class(&mut self) -> Result<ClassDef, ParseError> {
        let span = self.span();
        self.expect_kw("class")?;
        let name = self.name()?;
        self.expect("{")?;
        let mut fields = Vec::new();
        loop {
            let span = self.span();
            let volatile = self.is_kw("volatile");
            if volatile {
                self.bump();
            } else if !(matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
                && *self.peek_at(1) == Tok::Sym(":"))
            {
                break;
            }
            let fname = self.name()?;
            self.expect(":")?;
            let ty = self.ty()?;
            self.expect(";")?;
            fields.push(FieldDef { name: fname, ty, volatile, span });
        }
        let mut init = None;
        if self.is_kw("init") {
            self.bump();
            self.expect("=")?;
            init = Some(self.expr()?);
            self.expect(";")?;
        }
        let mut methods = Vec::new();
        while *self.peek() != Tok::Sym("}") {
            methods.push(self.method()?);
        }
        self.expect("}")?;
        Ok(ClassDef { name, fields, init, methods, span })
    }

    fn method(&mut self) -> Result<MethodDef, ParseError> {
        let span = self.span();
        let name = self.name()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::Sym(")") {
            loop {
                let p = self.name()?;
                self.expect(":")?;
                params.push((p, self.ty()?));
                if *self.peek() != Tok::Sym(",") {
                    break;
                }
                self.bump();
            }
        }
        self.expect(")")?;
        self.expect(":")?;
        let ret = self.ty()?;
        self.expect("=")?;
        let body = self.expr()?;
        Ok(MethodDef { name, params, ret, body, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        if self.is_kw("let") {
            self.bump();
            let x = if matches!(self.peek(), Tok::Ident(s) if s == "_") {
                self.bump();
                "_".to_string()
            } else {
                self.name()?
            };
            self.expect(":")?;
            let ty = self.ty()?;
            self.expect("=")?;
            let bound = self.expr()?;
            self.expect_kw("in")?;
            let body = self.expr()?;
            return Ok(Expr::Let(x, ty, Box::new(bound), Box::new(body)));
        }
        if self.is_kw("if") {
            self.bump();
            let c = self.expr()?;
            self.expect_kw("then")?;
            let t = self.expr()?;
            self.expect_kw("else")?;
            let e = self.expr()?;
            return Ok(Expr::If(Box::new(c), Box::new(t), Box::new(e)));
        }
        let lhs = self.postfix()?;
        if *self.peek() == Tok::Sym(":=") {
            let Expr::Get(target, f) = lhs else {
                return self.fail("left side of `:=` must be a field access");
            };
            self.bump();
            let rhs = self.expr()?;
            return Ok(Expr::Set(target, f, Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect("(")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::Sym(")") {
            loop {
                args.push(self.expr()?);
                if *self.peek() != Tok::Sym(",") {
                    break;
                }
                self.bump();
            }
        }
        self.expect(")")?;
        Ok(args)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while *self.peek() == Tok::Sym(".") {
            self.bump();
            let n = match self.peek().clone() {
                Tok::Ident(s) => {
                    self.bump();
                    s
                }
                t => return self.fail(format!("expected a member name, found {}", Self::describe(&t))),
            };
            e = match n.as_str() {
                "monitorenter" => Expr::MonitorEnter(Box::new(e)),
                "monitorexit" => Expr::MonitorExit(Box::new(e)),
                _ if *self.peek() == Tok::Sym("(") => {
                    let args = self.args()?;
                    match Intrinsic::from_name(&n) {
                        Some(i) if args.is_empty() => Expr::Intrinsic(i, Box::new(e)),
                        Some(i) => return self.fail(format!("`{}` takes no arguments", i.name())),
                        None => Expr::Call(Box::new(e), n, args),
                    }
                }
                _ => Expr::Get(Box::new(e), n),
            };
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Nat(n) => {
                self.bump();
                Ok(Expr::Val(Value::Nat(n)))
            }
            Tok::RefLit(r) => {
                self.bump();
                Ok(Expr::Val(Value::Ref(r)))
            }
            Tok::Sym("(") => {
                self.bump();
                if *self.peek() == Tok::Sym(")") {
                    self.bump();
                    return Ok(Expr::Val(Value::Unit));
                }
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(s) => match s.as_str() {
                "true" | "false" => {
                    self.bump();
                    Ok(Expr::Val(Value::Bool(s == "true")))
                }
                "null" => {
                    self.bump();
                    Ok(Expr::Val(Value::Null))
                }
                "this" => {
                    self.bump();
                    Ok(Expr::var(THIS))
                }
                "new" => {
                    self.bump();
                    let c = self.name()?;
                    let args = self.args()?;
                    Ok(Expr::New(c, args))
                }
                _ if KEYWORDS.contains(&s.as_str()) => {
                    self.fail(format!("unexpected keyword `{s}`"))
                }
                _ if *self.peek_at(1) == Tok::Sym("(") => {
                    let Some(b) = Builtin::from_name(&s) else {
                        return self.fail(format!("unknown function `{s}`"));
                    };
                    self.bump();
                    let args = self.args()?;
                    if args.len() != b.arity() {
                        return self.fail(format!("`{s}` expects {} argument(s)", b.arity()));
                    }
                    Ok(Expr::Builtin(b, args))
                }
                _ => {
                    self.bump();
                    Ok(Expr::Var(s))
                }
            },
            t => self.fail(format!("expected an expression, found {}", Self::describe(&t))),
        }
    }
}

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    p.program()
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.fail(format!("trailing input {}", Parser::describe(p.peek())));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("class Main { run(): Unit = () }").unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.classes[0].methods.len(), 1);
    }

    #[test]
    fn assignment_binds_rhs_fully() {
        let e = parse_expr("this.f := let x: Nat = 1 in x").unwrap();
        assert!(matches!(e, Expr::Set(_, ref f, ref r) if f == "f" && matches!(**r, Expr::Let(..))));
    }

    #[test]
    fn intrinsics_and_builtins() {
        let e = parse_expr("t.start()").unwrap();
        assert_eq!(e, Expr::Intrinsic(Intrinsic::Start, Box::new(Expr::var("t"))));
        let e = parse_expr("eq(succ(1), 2)").unwrap();
        assert!(matches!(e, Expr::Builtin(Builtin::Eq, _)));
        assert!(parse_expr("t.join(1)").is_err());
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_program("class Main {\n  run(): Unit = ?\n}").unwrap_err();
        assert_eq!((e.line, e.col), (2, 17));
    }

    #[test]
    fn ref_literals_and_comments() {
        let e = parse_expr("// c\n#3.f").unwrap();
        assert_eq!(e, Expr::Get(Box::new(Expr::Val(Value::Ref(3))), "f".into()));
    }
}
