//! Lexer and parser for query scripts.
//!
//! A script is a list of statements, one per line:
//!
//! ```text
//! a, b = openTable('t'), openCollection('c')
//! x = a.filter('k > 3').sort('k DESC').limit(5)
//! for i in range(3):
//!   m = m * (m @ m.T)
//! execute(x)
//! ```
//!
//! Loop bodies are the following lines indented deeper than the `for`.
//! Newlines inside brackets do not end a statement. `#` starts a comment.

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

/// A logical line: its indentation and tokens.
#[derive(Debug)]
struct Line {
    indent: usize,
    toks: Vec<Token>,
    end: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::MatMul => "@",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Name(String, Pos),
    Int(i64, Pos),
    Float(f64, Pos),
    Str(String, Pos),
    /// `{a, b}` or `[a, b]`; element order is kept.
    List(Vec<Expr>, Pos),
    Call { func: String, args: Vec<Expr>, pos: Pos },
    Method { recv: Box<Expr>, name: String, args: Vec<Expr>, pos: Pos },
    Attr { recv: Box<Expr>, name: String, pos: Pos },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, pos: Pos },
    Neg(Box<Expr>, Pos),
}

impl Expr {
    pub fn pos(&self) -> Pos {
        match self {
            Expr::Name(_, p) | Expr::Int(_, p) | Expr::Float(_, p) | Expr::Str(_, p) | Expr::List(_, p) | Expr::Neg(_, p) => *p,
            Expr::Call { pos, .. } | Expr::Method { pos, .. } | Expr::Attr { pos, .. } | Expr::Binary { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign { targets: Vec<(String, Pos)>, values: Vec<Expr> },
    For { var: String, count: Expr, body: Vec<Stmt>, pos: Pos },
    Execute { target: Expr, pos: Pos },
}

fn err(pos: Pos, msg: impl Into<String>) -> CliError {
    CliError::Parse { line: pos.line, col: pos.col, msg: msg.into() }
}

fn lex(src: &str) -> Result<Vec<Line>> {
    let mut lines = Vec::new();
    let mut cur: Vec<Token> = Vec::new();
    let mut indent = 0;
    let mut depth: Vec<(char, Pos)> = Vec::new();
    let mut at_start = true;
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if at_start {
            // measure indentation of a fresh logical line
            let mut n = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                n += if chars[i] == '\t' { 4 } else { 1 };
                i += 1;
                col += 1;
            }
            indent = n;
            at_start = false;
            continue;
        }
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                if depth.is_empty() {
                    if !cur.is_empty() {
                        lines.push(Line { indent, toks: std::mem::take(&mut cur), end: pos });
                    }
                    at_start = true;
                }
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
                col = 1;
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                col += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(err(pos, "unterminated string")),
                        Some(&ch) if ch == quote => {
                            i += 1;
                            col += 1;
                            break;
                        }
                        Some('\\') if i + 1 < chars.len() && chars[i + 1] != '\n' => {
                            s.push(match chars[i + 1] {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                            i += 2;
                            col += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                cur.push(Token { tok: Tok::Str(s), pos });
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    i += 1;
                }
                let mut float = false;
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                col += i - start;
                let tok = if float {
                    Tok::Float(text.parse().map_err(|_| err(pos, format!("bad number '{text}'")))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| err(pos, format!("integer '{text}' is too large")))?)
                };
                cur.push(Token { tok, pos });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                col += i - start;
                cur.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
            }
            '(' | '{' | '[' => {
                depth.push((c, pos));
                cur.push(Token { tok: Tok::Punct(c), pos });
                i += 1;
                col += 1;
            }
            ')' | '}' | ']' => {
                let open = match c {
                    ')' => '(',
                    '}' => '{',
                    _ => '[',
                };
                match depth.pop() {
                    Some((o, _)) if o == open => {}
                    _ => return Err(err(pos, format!("unmatched '{c}'"))),
                }
                cur.push(Token { tok: Tok::Punct(c), pos });
                i += 1;
                col += 1;
            }
            ',' | '.' | '=' | '@' | '*' | '/' | '+' | '-' | ':' => {
                cur.push(Token { tok: Tok::Punct(c), pos });
                i += 1;
                col += 1;
            }
            other => return Err(err(pos, format!("unexpected character '{other}'"))),
        }
    }
    if let Some((c, p)) = depth.pop() {
        return Err(err(p, format!("'{c}' is never closed")));
    }
    if !cur.is_empty() {
        lines.push(Line { indent, toks: cur, end: Pos { line, col } });
    }
    Ok(lines)
}

struct Parser<'a> {
    toks: &'a [Token],
    i: usize,
    end: Pos,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map_or(self.end, |t| t.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{c}'")))
        }
    }

    fn unexpected(&self, wanted: &str) -> CliError {
        let found = match self.peek() {
            None => "end of line".to_string(),
            Some(Tok::Ident(s)) => format!("'{s}'"),
            Some(Tok::Int(n)) => n.to_string(),
            Some(Tok::Float(f)) => f.to_string(),
            Some(Tok::Str(s)) => format!("string '{s}'"),
            Some(Tok::Punct(c)) => format!("'{c}'"),
        };
        err(self.pos(), format!("expected {wanted}, found {found}"))
    }

    fn ident(&mut self) -> Result<(String, Pos)> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.i += 1;
                Ok((s, pos))
            }
            _ => Err(self.unexpected("a name")),
        }
    }

    fn done(&self) -> Result<()> {
        if self.i < self.toks.len() {
            Err(self.unexpected("end of line"))
        } else {
            Ok(())
        }
    }

    fn exprs(&mut self, close: Option<char>) -> Result<Vec<Expr>> {
        let mut out = Vec::new();
        if let Some(c) = close {
            if self.eat(c) {
                return Ok(out);
            }
        }
        loop {
            out.push(self.expr()?);
            if !self.eat(',') {
                break;
            }
            if close.is_some_and(|c| self.peek() == Some(&Tok::Punct(c))) {
                break;
            }
        }
        if let Some(c) = close {
            self.expect(c)?;
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let pos = self.pos();
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let pos = self.pos();
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else if self.eat('@') {
                BinOp::MatMul
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?), pos));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr> {
        let mut e = self.primary()?;
        while self.eat('.') {
            let (name, pos) = self.ident()?;
            if self.eat('(') {
                let args = self.exprs(Some(')'))?;
                e = Expr::Method { recv: Box::new(e), name, args, pos };
            } else {
                e = Expr::Attr { recv: Box::new(e), name, pos };
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        let tok = self.peek().cloned();
        match tok {
            Some(Tok::Ident(name)) => {
                self.i += 1;
                if self.eat('(') {
                    let args = self.exprs(Some(')'))?;
                    Ok(Expr::Call { func: name, args, pos })
                } else {
                    Ok(Expr::Name(name, pos))
                }
            }
            Some(Tok::Int(n)) => {
                self.i += 1;
                Ok(Expr::Int(n, pos))
            }
            Some(Tok::Float(f)) => {
                self.i += 1;
                Ok(Expr::Float(f, pos))
            }
            Some(Tok::Str(s)) => {
                self.i += 1;
                Ok(Expr::Str(s, pos))
            }
            Some(Tok::Punct('{')) => {
                self.i += 1;
                Ok(Expr::List(self.exprs(Some('}'))?, pos))
            }
            Some(Tok::Punct('[')) => {
                self.i += 1;
                Ok(Expr::List(self.exprs(Some(']'))?, pos))
            }
            Some(Tok::Punct('(')) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}

fn parse_line(line: &Line) -> Result<Stmt> {
    let mut p = Parser { toks: &line.toks, i: 0, end: line.end };
    let start = p.pos();
    if p.peek() == Some(&Tok::Ident("for".into())) {
        p.i += 1;
        let (var, _) = p.ident()?;
        match p.ident()? {
            (kw, _) if kw == "in" => {}
            (_, pos) => return Err(err(pos, "expected 'in'")),
        }
        match p.ident()? {
            (kw, _) if kw == "range" => {}
            (_, pos) => return Err(err(pos, "loops must use range(n)")),
        }
        p.expect('(')?;
        let count = p.expr()?;
        p.expect(')')?;
        p.expect(':')?;
        p.done()?;
        return Ok(Stmt::For { var, count, body: Vec::new(), pos: start });
    }
    if p.peek() == Some(&Tok::Ident("execute".into())) && p.toks.get(1).map(|t| &t.tok) == Some(&Tok::Punct('(')) {
        p.i += 2;
        let target = p.expr()?;
        p.expect(')')?;
        p.done()?;
        return Ok(Stmt::Execute { target, pos: start });
    }
    let mut targets = vec![p.ident()?];
    while p.eat(',') {
        targets.push(p.ident()?);
    }
    p.expect('=')?;
    let values = p.exprs(None)?;
    p.done()?;
    if values.len() != targets.len() {
        return Err(err(start, format!("{} names but {} values", targets.len(), values.len())));
    }
    Ok(Stmt::Assign { targets, values })
}

fn block(lines: &[Line], i: &mut usize, indent: usize) -> Result<Vec<Stmt>> {
    let mut out = Vec::new();
    while *i < lines.len() && lines[*i].indent >= indent {
        let line = &lines[*i];
        if line.indent != indent {
            return Err(err(line.toks[0].pos, "unexpected indentation"));
        }
        *i += 1;
        let mut stmt = parse_line(line)?;
        if let Stmt::For { body, pos, .. } = &mut stmt {
            match lines.get(*i) {
                Some(next) if next.indent > indent => *body = block(lines, i, next.indent)?,
                _ => return Err(err(*pos, "loop body is empty")),
            }
        }
        out.push(stmt);
    }
    Ok(out)
}

pub fn parse(src: &str) -> Result<Vec<Stmt>> {
    let lines = lex(src)?;
    let Some(first) = lines.first() else {
        return Ok(Vec::new());
    };
    let mut i = 0;
    let stmts = block(&lines, &mut i, first.indent)?;
    if let Some(line) = lines.get(i) {
        return Err(err(line.toks[0].pos, "unexpected indentation"));
    }
    Ok(stmts)
}
