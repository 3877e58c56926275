//! Turns a parsed script into a logical plan.
//!
//! Names hold either constants (integers, strings, lists, model names) or
//! plan nodes. Loops are unrolled. Only the nodes the `execute` target
//! depends on are kept.

use std::collections::{BTreeSet, HashMap};

use mmdb::planner::{LogicalPlan, Model, Op, ShapeArg};

use crate::error::{CliError, Result};
use crate::script::{BinOp, Expr, Pos, Stmt};

/// What a plan node produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Relation,
    Collection,
    Array,
}

impl Kind {
    fn model(self) -> Model {
        match self {
            Kind::Relation => Model::Relational,
            Kind::Collection => Model::Document,
            Kind::Array => Model::Array,
        }
    }

    fn from_model(m: Model) -> Option<Kind> {
        match m {
            Model::Relational => Some(Kind::Relation),
            Model::Document => Some(Kind::Collection),
            Model::Array => Some(Kind::Array),
            Model::InterModel => None,
        }
    }

    fn is_record(self) -> bool {
        self != Kind::Array
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub id: usize,
    pub kind: Kind,
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Int(i64),
    Float(f64),
    Str(String),
    Model(Model),
    List(Vec<Val>),
    Node(NodeRef),
}

impl Val {
    fn describe(&self) -> &'static str {
        match self {
            Val::Int(_) => "an integer",
            Val::Float(_) => "a number",
            Val::Str(_) => "a string",
            Val::Model(_) => "a model name",
            Val::List(_) => "a list",
            Val::Node(n) => match n.kind {
                Kind::Relation => "a relation",
                Kind::Collection => "a collection",
                Kind::Array => "an array",
            },
        }
    }
}

/// A bound script: the plan, the node passed to `execute`, and the
/// datasets it opens.
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub plan: LogicalPlan,
    pub target: usize,
    pub target_kind: Kind,
    /// (name, kind) in first-use order.
    pub datasets: Vec<(String, Kind)>,
}

struct Binder {
    plan: LogicalPlan,
    kinds: Vec<Kind>,
    env: HashMap<String, Val>,
    target: Option<(NodeRef, Pos)>,
    rand_calls: u64,
}

fn bind_err(pos: Pos, msg: impl Into<String>) -> CliError {
    CliError::Bind { line: pos.line, col: pos.col, msg: msg.into() }
}

/// Splits `a, f(b, c), d` at top-level commas.
fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn alias_of(e: &Expr, fallback: &str) -> String {
    match e {
        Expr::Name(n, _) => n.clone(),
        _ => fallback.to_string(),
    }
}

impl Binder {
    fn add(&mut self, op: Op, model: Model, kind: Kind, inputs: Vec<usize>) -> Val {
        let id = self.plan.add(op, model, inputs);
        self.kinds.push(kind);
        Val::Node(NodeRef { id, kind })
    }

    fn stmts(&mut self, stmts: &[Stmt], in_loop: bool) -> Result<()> {
        for s in stmts {
            match s {
                Stmt::Assign { targets, values } => {
                    let vals = values.iter().map(|e| self.expr(e)).collect::<Result<Vec<_>>>()?;
                    for ((name, _), v) in targets.iter().zip(vals) {
                        self.env.insert(name.clone(), v);
                    }
                }
                Stmt::For { var, count, body, pos } => {
                    let n = match self.expr(count)? {
                        Val::Int(n) if n >= 0 => n,
                        v => return Err(bind_err(*pos, format!("range() needs a non-negative integer, got {}", v.describe()))),
                    };
                    for k in 0..n {
                        self.env.insert(var.clone(), Val::Int(k));
                        self.stmts(body, true)?;
                    }
                }
                Stmt::Execute { target, pos } => {
                    if in_loop {
                        return Err(bind_err(*pos, "execute() cannot appear inside a loop"));
                    }
                    if self.target.is_some() {
                        return Err(bind_err(*pos, "execute() appears more than once"));
                    }
                    match self.expr(target)? {
                        Val::Node(n) => self.target = Some((n, *pos)),
                        v => return Err(bind_err(target.pos(), format!("cannot execute {}", v.describe()))),
                    }
                }
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<Val> {
        match e {
            Expr::Int(n, _) => Ok(Val::Int(*n)),
            Expr::Float(f, _) => Ok(Val::Float(*f)),
            Expr::Str(s, _) => Ok(Val::Str(s.clone())),
            Expr::List(items, _) => Ok(Val::List(items.iter().map(|i| self.expr(i)).collect::<Result<_>>()?)),
            Expr::Name(n, pos) => {
                if let Some(v) = self.env.get(n) {
                    return Ok(v.clone());
                }
                let model = match n.as_str() {
                    "RELATIONAL" | "RELATION" => Model::Relational,
                    "DOCUMENT" | "COLLECTION" => Model::Document,
                    "ARRAY" => Model::Array,
                    _ => return Err(CliError::Undefined { name: n.clone(), line: pos.line, col: pos.col }),
                };
                Ok(Val::Model(model))
            }
            Expr::Neg(inner, pos) => match self.expr(inner)? {
                Val::Int(n) => Ok(Val::Int(-n)),
                Val::Float(f) => Ok(Val::Float(-f)),
                v => Err(bind_err(*pos, format!("cannot negate {}", v.describe()))),
            },
            Expr::Binary { op, lhs, rhs, pos } => {
                let (a, b) = (self.expr(lhs)?, self.expr(rhs)?);
                self.binary(*op, a, b, *pos)
            }
            Expr::Call { func, args, pos } => self.call(func, args, *pos),
            Expr::Attr { recv, name, pos } => {
                let r = self.expr(recv)?;
                match (&r, name.as_str()) {
                    (Val::Node(n), "T") if n.kind == Kind::Array => {
                        Ok(self.add(Op::Transpose, Model::Array, Kind::Array, vec![n.id]))
                    }
                    _ => Err(bind_err(*pos, format!("{} has no attribute '{name}'", r.describe()))),
                }
            }
            Expr::Method { recv, name, args, pos } => {
                let r = self.expr(recv)?;
                let Val::Node(node) = r else {
                    return Err(bind_err(*pos, format!("{} has no method '{name}'", r.describe())));
                };
                let vals = args.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>>>()?;
                self.method(node, recv, name, args, vals, *pos)
            }
        }
    }

    fn binary(&mut self, op: BinOp, a: Val, b: Val, pos: Pos) -> Result<Val> {
        use BinOp::*;
        Ok(match (op, a, b) {
            (Add, Val::Int(x), Val::Int(y)) => Val::Int(x + y),
            (Sub, Val::Int(x), Val::Int(y)) => Val::Int(x - y),
            (Mul, Val::Int(x), Val::Int(y)) => Val::Int(x * y),
            (Div, Val::Int(_), Val::Int(0)) => return Err(bind_err(pos, "division by zero")),
            (Div, Val::Int(x), Val::Int(y)) => Val::Int(x / y),
            (MatMul, Val::Node(x), Val::Node(y)) if x.kind == Kind::Array && y.kind == Kind::Array => {
                self.add(Op::Matmul, Model::Array, Kind::Array, vec![x.id, y.id])
            }
            (op, Val::Node(x), Val::Node(y)) if op != MatMul && x.kind == Kind::Array && y.kind == Kind::Array => {
                self.add(Op::Ewise { op: op.symbol().to_string() }, Model::Array, Kind::Array, vec![x.id, y.id])
            }
            (op, a, b) => {
                return Err(bind_err(pos, format!("'{}' is not defined for {} and {}", op.symbol(), a.describe(), b.describe())))
            }
        })
    }

    fn call(&mut self, func: &str, args: &[Expr], pos: Pos) -> Result<Val> {
        let vals = args.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>>>()?;
        match func {
            "openTable" | "openCollection" | "openArray" => {
                let name = match vals.as_slice() {
                    [Val::Str(s)] => s.clone(),
                    _ => return Err(bind_err(pos, format!("{func}() takes one dataset name"))),
                };
                let (op, kind) = match func {
                    "openTable" => (Op::OpenTable { name }, Kind::Relation),
                    "openCollection" => (Op::OpenCollection { name }, Kind::Collection),
                    _ => (Op::OpenArray { name }, Kind::Array),
                };
                Ok(self.add(op, kind.model(), kind, vec![]))
            }
            "rand" => {
                if vals.is_empty() || vals.len() > 4 {
                    return Err(bind_err(pos, "rand() takes a shape and optional dimension names, attribute and seed"));
                }
                let Val::List(items) = &vals[0] else {
                    return Err(bind_err(args[0].pos(), "rand() needs a shape list such as {n, 10}"));
                };
                let mut inputs = Vec::new();
                let shape = self.shape_args(items, &mut inputs, args[0].pos())?;
                let dims = match vals.get(1) {
                    Some(v) => self.strings(v, args[1].pos())?,
                    None => (0..shape.len()).map(|i| format!("i{i}")).collect(),
                };
                let attr = match vals.get(2) {
                    Some(Val::Str(s)) => s.clone(),
                    Some(v) => return Err(bind_err(args[2].pos(), format!("attribute name must be a string, got {}", v.describe()))),
                    None => "v".to_string(),
                };
                let seed = match vals.get(3) {
                    Some(Val::Int(s)) if *s >= 0 => *s as u64,
                    Some(v) => return Err(bind_err(args[3].pos(), format!("seed must be a non-negative integer, got {}", v.describe()))),
                    None => self.rand_calls,
                };
                self.rand_calls += 1;
                if dims.len() != shape.len() {
                    return Err(bind_err(pos, format!("{} dimension names for {} sizes", dims.len(), shape.len())));
                }
                Ok(self.add(Op::Rand { shape, dims, attr, seed }, Model::Array, Kind::Array, inputs))
            }
            "range" | "execute" => Err(bind_err(pos, format!("{func}() is not allowed here"))),
            _ => Err(CliError::Undefined { name: func.to_string(), line: pos.line, col: pos.col }),
        }
    }

    fn shape_args(&self, items: &[Val], inputs: &mut Vec<usize>, pos: Pos) -> Result<Vec<ShapeArg>> {
        items
            .iter()
            .map(|v| match v {
                Val::Int(n) if *n > 0 => Ok(ShapeArg::Const(*n as u64)),
                Val::Node(n) if n.kind.is_record() => {
                    inputs.push(n.id);
                    Ok(ShapeArg::Input { input: inputs.len() - 1 })
                }
                v => Err(bind_err(pos, format!("a shape entry must be a positive integer or a count, got {}", v.describe()))),
            })
            .collect()
    }

    /// A string list argument: `'a, b'` or `{'a', 'b'}`.
    fn strings(&self, v: &Val, pos: Pos) -> Result<Vec<String>> {
        match v {
            Val::Str(s) => Ok(split_list(s)),
            Val::List(items) => items
                .iter()
                .map(|i| match i {
                    Val::Str(s) => Ok(s.clone()),
                    other => Err(bind_err(pos, format!("expected strings, got {}", other.describe()))),
                })
                .collect(),
            other => Err(bind_err(pos, format!("expected a string list, got {}", other.describe()))),
        }
    }

    fn uints(&self, v: &Val, pos: Pos) -> Result<Vec<u64>> {
        let one = |x: &Val| match x {
            Val::Int(n) if *n >= 0 => Ok(*n as u64),
            other => Err(bind_err(pos, format!("expected a non-negative integer, got {}", other.describe()))),
        };
        match v {
            Val::List(items) => items.iter().map(one).collect(),
            other => Ok(vec![one(other)?]),
        }
    }

    fn method(&mut self, node: NodeRef, recv: &Expr, name: &str, args: &[Expr], vals: Vec<Val>, pos: Pos) -> Result<Val> {
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if vals.len() < lo || vals.len() > hi {
                let want = if lo == hi { format!("{lo}") } else { format!("{lo} to {hi}") };
                Err(bind_err(pos, format!("{name}() takes {want} arguments, got {}", vals.len())))
            } else {
                Ok(())
            }
        };
        let string = |k: usize| -> Result<String> {
            match &vals[k] {
                Val::Str(s) => Ok(s.clone()),
                v => Err(bind_err(args[k].pos(), format!("{name}() needs a string, got {}", v.describe()))),
            }
        };
        let k = node.kind;
        let model = k.model();
        let rec = k.is_record();
        let unsupported = || bind_err(pos, format!("{name}() is not available on {}", Val::Node(node).describe()));

        match name {
            "filter" if rec => {
                arity(1, 1)?;
                Ok(self.add(Op::Filter { pred: string(0)? }, model, k, vec![node.id]))
            }
            "project" if rec => {
                arity(1, 1)?;
                let items = self.strings(&vals[0], args[0].pos())?;
                Ok(self.add(Op::Project { items }, model, k, vec![node.id]))
            }
            "sort" if rec => {
                arity(1, 1)?;
                let keys = self.strings(&vals[0], args[0].pos())?;
                Ok(self.add(Op::Sort { keys }, model, k, vec![node.id]))
            }
            "limit" if rec => {
                arity(1, 1)?;
                let n = match vals[0] {
                    Val::Int(n) if n >= 0 => n as usize,
                    ref v => return Err(bind_err(args[0].pos(), format!("limit() needs a count, got {}", v.describe()))),
                };
                Ok(self.add(Op::Limit { n }, model, k, vec![node.id]))
            }
            "count" if rec => {
                arity(0, 0)?;
                Ok(self.add(Op::Count, model, k, vec![node.id]))
            }
            "unwind" if rec => {
                arity(1, 1)?;
                Ok(self.add(Op::Unwind { path: string(0)? }, model, k, vec![node.id]))
            }
            "union" if rec => {
                arity(1, 1)?;
                match &vals[0] {
                    Val::Node(o) if o.kind == k => Ok(self.add(Op::Union, model, k, vec![node.id, o.id])),
                    v => Err(bind_err(args[0].pos(), format!("union() needs {}, got {}", Val::Node(node).describe(), v.describe()))),
                }
            }
            "aggregate" if rec => {
                arity(2, 2)?;
                let group = self.strings(&vals[0], args[0].pos())?;
                let aggs = self.strings(&vals[1], args[1].pos())?;
                Ok(self.add(Op::Aggregate { group, aggs }, model, k, vec![node.id]))
            }
            "aggregate" => {
                arity(2, 3)?;
                let dims = self.strings(&vals[0], args[0].pos())?;
                let attr = if vals.len() == 3 { Some(string(2)?) } else { None };
                Ok(self.add(Op::ArrayAggregate { dims, agg: string(1)?, attr }, Model::Array, k, vec![node.id]))
            }
            "toArray" if rec => {
                arity(2, 3)?;
                let dims = self.strings(&vals[0], args[0].pos())?;
                let values = self.strings(&vals[1], args[1].pos())?;
                let mut inputs = vec![node.id];
                let shape = match vals.get(2) {
                    Some(Val::List(items)) => {
                        let mut extra = Vec::new();
                        let s = self.shape_args(items, &mut extra, args[2].pos())?;
                        // shape inputs follow the record input
                        let s = s
                            .into_iter()
                            .map(|a| match a {
                                ShapeArg::Input { input } => ShapeArg::Input { input: input + 1 },
                                c => c,
                            })
                            .collect::<Vec<_>>();
                        inputs.extend(extra);
                        if s.len() != dims.len() {
                            return Err(bind_err(args[2].pos(), format!("{} sizes for {} dimensions", s.len(), dims.len())));
                        }
                        Some(s)
                    }
                    Some(v) => return Err(bind_err(args[2].pos(), format!("toArray() shape must be a list, got {}", v.describe()))),
                    None => None,
                };
                Ok(self.add(Op::ToArray { dims, values, shape }, Model::InterModel, Kind::Array, inputs))
            }
            "toRelation" => {
                arity(0, 0)?;
                if k == Kind::Relation {
                    return Ok(Val::Node(node));
                }
                Ok(self.add(Op::ToRelation, Model::InterModel, Kind::Relation, vec![node.id]))
            }
            "toCollection" => {
                arity(0, 0)?;
                if k == Kind::Collection {
                    return Ok(Val::Node(node));
                }
                Ok(self.add(Op::ToCollection, Model::InterModel, Kind::Collection, vec![node.id]))
            }
            "join" => {
                arity(1, 3)?;
                let Val::Node(other) = &vals[0] else {
                    return Err(bind_err(args[0].pos(), format!("join() needs a dataset, got {}", vals[0].describe())));
                };
                let other = *other;
                let left_alias = alias_of(recv, "left");
                let right_alias = alias_of(&args[0], "right");
                let output = match vals.get(2) {
                    Some(Val::Model(m)) => Some(*m),
                    Some(v) => return Err(bind_err(args[2].pos(), format!("join() output must be a model name, got {}", v.describe()))),
                    None => None,
                };
                if k == Kind::Array && other.kind == Kind::Array {
                    if vals.len() > 1 {
                        return Err(bind_err(pos, "array joins match on coordinates and take no condition"));
                    }
                    return Ok(self.add(Op::SpatialJoin, Model::Array, Kind::Array, vec![node.id, other.id]));
                }
                let pred = match vals.get(1) {
                    Some(Val::Str(s)) => s.clone(),
                    _ => return Err(bind_err(pos, "join() needs a condition string")),
                };
                if k == other.kind && output.is_none_or(|m| m == model) {
                    return Ok(self.add(Op::Join { pred, left_alias, right_alias }, model, k, vec![node.id, other.id]));
                }
                let output = output.unwrap_or(if k == Kind::Array || other.kind == Kind::Array {
                    model
                } else {
                    Model::Document
                });
                let out_kind = Kind::from_model(output).ok_or_else(|| bind_err(pos, "join() output must be a data model"))?;
                if k == other.kind {
                    return Err(bind_err(pos, format!("a join of two {} inputs cannot produce {output} output", model)));
                }
                Ok(self.add(
                    Op::InterJoin { pred, left_alias, right_alias, output },
                    Model::InterModel,
                    out_kind,
                    vec![node.id, other.id],
                ))
            }
            "transpose" if !rec => {
                arity(0, 0)?;
                Ok(self.add(Op::Transpose, Model::Array, k, vec![node.id]))
            }
            "matmul" if !rec => {
                arity(1, 1)?;
                match &vals[0] {
                    Val::Node(o) if o.kind == Kind::Array => Ok(self.add(Op::Matmul, Model::Array, k, vec![node.id, o.id])),
                    v => Err(bind_err(args[0].pos(), format!("matmul() needs an array, got {}", v.describe()))),
                }
            }
            "window" if !rec => {
                arity(2, 3)?;
                let radius = self.uints(&vals[0], args[0].pos())?;
                let attr = if vals.len() == 3 { Some(string(2)?) } else { None };
                Ok(self.add(Op::Window { radius, agg: string(1)?, attr }, Model::Array, k, vec![node.id]))
            }
            "subarray" if !rec => {
                arity(2, 2)?;
                let lo = self.uints(&vals[0], args[0].pos())?;
                let hi = self.uints(&vals[1], args[1].pos())?;
                Ok(self.add(Op::Subarray { lo, hi }, Model::Array, k, vec![node.id]))
            }
            "filter" | "project" | "sort" | "limit" | "count" | "unwind" | "union" | "toArray" | "transpose"
            | "matmul" | "window" | "subarray" => Err(unsupported()),
            _ => Err(bind_err(pos, format!("unknown method '{name}'"))),
        }
    }

    /// Keeps the ancestors of `target`, renumbered in creation order.
    fn finish(self, target: NodeRef) -> Bound {
        let mut keep = BTreeSet::new();
        let mut stack = vec![target.id];
        while let Some(n) = stack.pop() {
            if keep.insert(n) {
                stack.extend(self.plan.node(n).inputs.iter().copied());
            }
        }
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let mut plan = LogicalPlan::new();
        let mut datasets: Vec<(String, Kind)> = Vec::new();
        for &old in &keep {
            let n = self.plan.node(old);
            if let Op::OpenTable { name } | Op::OpenCollection { name } | Op::OpenArray { name } = &n.op {
                let entry = (name.clone(), self.kinds[old]);
                if !datasets.contains(&entry) {
                    datasets.push(entry);
                }
            }
            plan.add(n.op.clone(), n.model, n.inputs.iter().map(|i| remap[i]).collect());
        }
        Bound { plan, target: remap[&target.id], target_kind: target.kind, datasets }
    }
}

pub fn bind(stmts: &[Stmt]) -> Result<Bound> {
    let mut b = Binder { plan: LogicalPlan::new(), kinds: Vec::new(), env: HashMap::new(), target: None, rand_calls: 0 };
    b.stmts(stmts, false)?;
    let Some((target, _)) = b.target else {
        return Err(CliError::Bind { line: 1, col: 1, msg: "script has no execute() statement".into() });
    };
    Ok(b.finish(target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse;

    fn bound(src: &str) -> Result<Bound> {
        bind(&parse(src)?)
    }

    #[test]
    fn undefined_name_is_reported_with_position() {
        match bound("a = openTable('t')\nb = c.filter('x > 1')\nexecute(b)").unwrap_err() {
            CliError::Undefined { name, line, col } => assert_eq!((name.as_str(), line, col), ("c", 2, 5)),
            e => panic!("{e}"),
        }
        assert!(matches!(bound("x = frobnicate(1)\nexecute(x)"), Err(CliError::Undefined { .. })));
    }

    #[test]
    fn execute_exactly_once() {
        assert!(bound("a = openTable('t')").is_err());
        assert!(bound("a = openTable('t')\nexecute(a)\nexecute(a)").is_err());
        assert!(bound("a = openTable('t')\nfor i in range(1):\n  execute(a)").is_err());
    }

    #[test]
    fn loops_unroll_and_unused_nodes_are_dropped() {
        let b = bound(
            "m = openArray('m')\nunused = openTable('t')\nfor i in range(3):\n  m = m * m\nexecute(m)",
        )
        .unwrap();
        assert_eq!(b.plan.len(), 4);
        assert_eq!(b.target, 3);
        assert_eq!(b.datasets, vec![("m".to_string(), Kind::Array)]);
    }

    #[test]
    fn joins_pick_operators_by_input_kinds() {
        let b = bound(
            "t, c, a = openTable('t'), openCollection('c'), openArray('a')\n\
             x = a.join(t, 't.i = a.i', RELATIONAL)\n\
             y = c.join(c, 'c.k = c.k')\n\
             z = t.join(c, 't.k = c.k')\n\
             execute(x.join(y.toRelation(), 'x.i = y.i').join(z.toRelation(), 'l.i = r.i'))",
        )
        .unwrap();
        let kinds: Vec<&str> = b.plan.nodes.iter().map(|n| n.op.name()).collect();
        assert!(kinds.contains(&"inter_join"));
        assert!(kinds.contains(&"join"));
        let ij = b.plan.nodes.iter().find(|n| matches!(n.op, Op::InterJoin { output: Model::Relational, .. })).unwrap();
        assert!(matches!(&ij.op, Op::InterJoin { left_alias, right_alias, .. } if left_alias == "a" && right_alias == "t"));
        let doc = b.plan.nodes.iter().find(|n| matches!(n.op, Op::InterJoin { output: Model::Document, .. }));
        assert!(doc.is_some());
    }

    #[test]
    fn shapes_take_counts_and_constants() {
        let b = bound("n = openTable('c').count()\nk = 2\nw = rand({n, k * 2}, {'c', 'k'}, 'x', 9)\nexecute(w)").unwrap();
        let last = b.plan.node(b.target);
        assert_eq!(
            last.op,
            Op::Rand { shape: vec![ShapeArg::Input { input: 0 }, ShapeArg::Const(4)], dims: vec!["c".into(), "k".into()], attr: "x".into(), seed: 9 }
        );
        assert_eq!(last.inputs, vec![1]);
    }

    #[test]
    fn type_errors_name_the_operation() {
        let e = bound("t = openTable('t')\nx = t @ t\nexecute(x)").unwrap_err();
        assert!(e.to_string().contains("'@'"), "{e}");
        let e = bound("a = openArray('a')\nx = a.filter('v > 1')\nexecute(x)").unwrap_err();
        assert!(e.to_string().contains("filter()"), "{e}");
    }
}
