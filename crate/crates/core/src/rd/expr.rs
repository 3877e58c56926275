//! Predicate mini-language: comparisons, AND/OR/NOT, dotted paths and
//! literals, evaluated under three-valued logic.

use std::cmp::Ordering;
use std::fmt;

use crate::model::Value;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn holds(self, o: Ordering) -> bool {
        match self {
            CmpOp::Eq => o == Ordering::Equal,
            CmpOp::Ne => o != Ordering::Equal,
            CmpOp::Lt => o == Ordering::Less,
            CmpOp::Le => o != Ordering::Greater,
            CmpOp::Gt => o == Ordering::Greater,
            CmpOp::Ge => o != Ordering::Less,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Path(String),
    Lit(Value),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

/// Something a path can be looked up in. `Ok(None)` means the path does not
/// exist in this row; it evaluates as null.
pub trait Row {
    fn lookup(&self, path: &str) -> Result<Option<Value>>;
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0, len: text.len() };
        let e = p.or()?;
        match p.peek() {
            None => Ok(e),
            Some((tok, at)) => Err(Error::parse(1, at + 1, format!("unexpected {tok:?}"))),
        }
    }

    pub fn path(p: &str) -> Expr {
        Expr::Path(p.to_string())
    }

    /// Top-level AND operands.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            e => vec![e],
        }
    }

    /// Rebuilds a conjunction; `None` for an empty list.
    pub fn and_all(parts: Vec<Expr>) -> Option<Expr> {
        parts.into_iter().reduce(|a, b| Expr::And(Box::new(a), Box::new(b)))
    }

    pub fn paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Path(p) => out.push(p),
            Expr::Lit(_) => {}
            Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_paths(out);
                b.collect_paths(out);
            }
            Expr::Not(a) => a.collect_paths(out),
        }
    }

    /// Value of a path or literal operand.
    pub fn value(&self, row: &dyn Row) -> Result<Value> {
        match self {
            Expr::Path(p) => Ok(row.lookup(p)?.unwrap_or(Value::Null)),
            Expr::Lit(v) => Ok(v.clone()),
            other => Err(Error::Type(format!("'{other}' is a predicate, not a value"))),
        }
    }

    /// Truth value: `None` is unknown (a comparison involving null).
    pub fn eval(&self, row: &dyn Row) -> Result<Option<bool>> {
        Ok(match self {
            Expr::Cmp(op, a, b) => a.value(row)?.sql_cmp(&b.value(row)?)?.map(|o| op.holds(o)),
            Expr::And(a, b) => match (a.eval(row)?, b.eval(row)?) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            Expr::Or(a, b) => match (a.eval(row)?, b.eval(row)?) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
            Expr::Not(a) => a.eval(row)?.map(|b| !b),
            Expr::Lit(Value::Bool(b)) => Some(*b),
            Expr::Lit(Value::Null) => None,
            Expr::Path(_) => match self.value(row)? {
                Value::Bool(b) => Some(b),
                Value::Null => None,
                v => return Err(Error::Type(format!("{} value used as a condition", v.type_name()))),
            },
            Expr::Lit(v) => return Err(Error::Type(format!("{} literal used as a condition", v.type_name()))),
        })
    }

    /// True only when the predicate is known to hold.
    pub fn matches(&self, row: &dyn Row) -> Result<bool> {
        Ok(self.eval(row)? == Some(true))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Path(p) => f.write_str(p),
            Expr::Lit(Value::Str(s)) => write!(f, "'{}'", s.replace('\'', "\\'")),
            Expr::Lit(Value::Null) => f.write_str("null"),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            Expr::And(a, b) => write!(f, "({a} AND {b})"),
            Expr::Or(a, b) => write!(f, "({a} OR {b})"),
            Expr::Not(a) => write!(f, "NOT {a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Lit(Value),
    Op(CmpOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |at: usize, msg: String| Error::parse(1, at + 1, msg);
    while i < chars.len() {
        let (at, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).map(|x| x.1);
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '=' if next == Some('=') => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            '=' => Tok::Op(CmpOp::Eq),
            '!' if next == Some('=') => {
                i += 1;
                Tok::Op(CmpOp::Ne)
            }
            '<' if next == Some('>') => {
                i += 1;
                Tok::Op(CmpOp::Ne)
            }
            '<' if next == Some('=') => {
                i += 1;
                Tok::Op(CmpOp::Le)
            }
            '<' => Tok::Op(CmpOp::Lt),
            '>' if next == Some('=') => {
                i += 1;
                Tok::Op(CmpOp::Ge)
            }
            '>' => Tok::Op(CmpOp::Gt),
            '\'' | '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    let Some(&(_, ch)) = chars.get(j) else {
                        return Err(err(at, "unterminated string".into()));
                    };
                    if ch == '\\' && j + 1 < chars.len() {
                        s.push(chars[j + 1].1);
                        j += 2;
                    } else if ch == c {
                        break;
                    } else {
                        s.push(ch);
                        j += 1;
                    }
                }
                i = j;
                Tok::Lit(Value::Str(s))
            }
            c if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_ascii_alphanumeric() || matches!(chars[j].1, '.' | '+' | '-'))
                {
                    // a sign only belongs to the number right after an exponent
                    if matches!(chars[j].1, '+' | '-') && !matches!(chars[j - 1].1, 'e' | 'E') {
                        break;
                    }
                    j += 1;
                }
                let s: String = chars[i..j].iter().map(|x| x.1).collect();
                i = j - 1;
                Tok::Lit(parse_number(&s).ok_or_else(|| err(at, format!("bad number '{s}'")))?)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_alphanumeric() || matches!(chars[j].1, '_' | '.')) {
                    j += 1;
                }
                let s: String = chars[i..j].iter().map(|x| x.1).collect();
                i = j - 1;
                match s.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    "TRUE" => Tok::Lit(Value::Bool(true)),
                    "FALSE" => Tok::Lit(Value::Bool(false)),
                    "NULL" => Tok::Lit(Value::Null),
                    _ => {
                        if s.split('.').any(str::is_empty) {
                            return Err(err(at, format!("malformed path '{s}'")));
                        }
                        Tok::Ident(s)
                    }
                }
            }
            other => return Err(err(at, format!("unexpected character '{other}'"))),
        };
        out.push((tok, at));
        i += 1;
    }
    Ok(out)
}

fn parse_number(s: &str) -> Option<Value> {
    if let Ok(i) = s.parse::<i64>() {
        return Some(Value::Int(i));
    }
    if let Ok(u) = s.parse::<u64>() {
        return Some(Value::UInt(u));
    }
    s.parse::<f64>().ok().map(Value::Float)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<(&Tok, usize)> {
        self.tokens.get(self.pos).map(|(t, at)| (t, *at))
    }

    fn at(&self) -> usize {
        self.peek().map(|p| p.1).unwrap_or(self.len) + 1
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek().is_some_and(|(x, _)| x == t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<Expr> {
        let mut e = self.and()?;
        while self.eat(&Tok::Or) {
            e = Expr::Or(Box::new(e), Box::new(self.and()?));
        }
        Ok(e)
    }

    fn and(&mut self) -> Result<Expr> {
        let mut e = self.not()?;
        while self.eat(&Tok::And) {
            e = Expr::And(Box::new(e), Box::new(self.not()?));
        }
        Ok(e)
    }

    fn not(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr> {
        let left = self.operand()?;
        if let Some((Tok::Op(op), _)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let right = self.operand()?;
            return Ok(Expr::Cmp(op, Box::new(left), Box::new(right)));
        }
        Ok(left)
    }

    fn operand(&mut self) -> Result<Expr> {
        let at = self.at();
        let Some((tok, _)) = self.peek() else {
            return Err(Error::parse(1, at, "unexpected end of predicate"));
        };
        let tok = tok.clone();
        self.pos += 1;
        match tok {
            Tok::Ident(p) => Ok(Expr::Path(p)),
            Tok::Lit(v) => Ok(Expr::Lit(v)),
            Tok::LParen => {
                let e = self.or()?;
                if !self.eat(&Tok::RParen) {
                    return Err(Error::parse(1, self.at(), "expected ')'"));
                }
                Ok(e)
            }
            other => Err(Error::parse(1, at, format!("unexpected {other:?}"))),
        }
    }
}
