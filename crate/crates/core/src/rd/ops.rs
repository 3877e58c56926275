use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::expr::{CmpOp, Expr, Row};
use super::RdData;
use crate::model::{cmp_records, split_path, Attribute, Collection, Document, KeyValue, Relation, Schema, Value, ValueType};
use crate::{Error, Result};

/// Where a path points inside a relation row.
#[derive(Debug, Clone)]
enum Col {
    Direct(usize),
    /// Nested field of a document-valued column.
    Nested(usize, Vec<String>),
}

/// Resolves `path` against a relation schema: an exact attribute name, then
/// the path with its leading qualifier removed, then a dotted path into a
/// document-valued attribute.
fn resolve_col(schema: &Schema, path: &str) -> Option<Col> {
    if let Some(i) = schema.index_of(path) {
        return Some(Col::Direct(i));
    }
    let (head, rest) = path.split_once('.')?;
    if let Some(i) = schema.index_of(rest) {
        return Some(Col::Direct(i));
    }
    let i = schema.index_of(head)?;
    Some(Col::Nested(i, rest.split('.').map(str::to_string).collect()))
}

fn unknown(path: &str) -> Error {
    Error::Plan(format!("unknown attribute '{path}'"))
}

#[derive(Clone, Copy)]
enum RowRef<'a> {
    Rel(&'a [Value]),
    Doc(&'a Document),
}

/// Compiled path accessor for one input.
#[derive(Debug, Clone)]
enum Getter {
    Col(Col),
    Doc(Vec<String>),
}

impl Getter {
    fn for_path(data: &RdData, path: &str) -> Result<Getter> {
        match data {
            RdData::Relation(r) => resolve_col(&r.schema, path).map(Getter::Col).ok_or_else(|| unknown(path)),
            RdData::Collection(_) => Ok(Getter::Doc(split_path(path)?.into_iter().map(str::to_string).collect())),
        }
    }

    fn get(&self, row: RowRef) -> Value {
        let nested = |d: &Document, segs: &[String]| {
            let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
            d.get_segments(&segs).cloned().unwrap_or(Value::Null)
        };
        match (self, row) {
            (Getter::Col(Col::Direct(i)), RowRef::Rel(r)) => r[*i].clone(),
            (Getter::Col(Col::Nested(i, segs)), RowRef::Rel(r)) => match &r[*i] {
                Value::Doc(d) => nested(d, segs),
                _ => Value::Null,
            },
            (Getter::Doc(segs), RowRef::Doc(d)) => nested(d, segs),
            _ => Value::Null,
        }
    }

    /// Declared type of the value in a relation, `Any` when unknown.
    fn value_type(&self, data: &RdData) -> ValueType {
        match (self, data) {
            (Getter::Col(Col::Direct(i)), RdData::Relation(r)) => r.schema.attrs()[*i].ty.clone(),
            _ => ValueType::Any,
        }
    }
}

/// Compiled lookup of one path in the rows of a relation or collection.
pub(crate) struct PathReader(Getter);

impl PathReader {
    pub(crate) fn new(data: &RdData, path: &str) -> Result<PathReader> {
        Getter::for_path(data, path).map(PathReader)
    }

    /// Value at row `i`; `Null` when the path is missing.
    pub(crate) fn get(&self, data: &RdData, i: usize) -> Value {
        match data {
            RdData::Relation(r) => self.0.get(RowRef::Rel(&r.rows[i])),
            RdData::Collection(c) => self.0.get(RowRef::Doc(&c.docs[i])),
        }
    }

    pub(crate) fn value_type(&self, data: &RdData) -> ValueType {
        self.0.value_type(data)
    }
}

/// Looks up paths in one row of a relation or collection.
struct SingleRow<'a> {
    getters: &'a HashMap<String, Getter>,
    row: RowRef<'a>,
}

impl Row for SingleRow<'_> {
    fn lookup(&self, path: &str) -> Result<Option<Value>> {
        Ok(self.getters.get(path).map(|g| g.get(self.row)))
    }
}

fn compile_paths(data: &RdData, paths: &[&str]) -> Result<HashMap<String, Getter>> {
    paths.iter().map(|p| Ok((p.to_string(), Getter::for_path(data, p)?))).collect()
}

fn rows(data: &RdData) -> Vec<RowRef<'_>> {
    match data {
        RdData::Relation(r) => r.rows.iter().map(|r| RowRef::Rel(r)).collect(),
        RdData::Collection(c) => c.docs.iter().map(RowRef::Doc).collect(),
    }
}

/// Keeps the rows for which `pred` is true (unknown is dropped).
pub fn filter(data: RdData, pred: &Expr) -> Result<RdData> {
    let getters = compile_paths(&data, &pred.paths())?;
    let keep: Vec<bool> = rows(&data)
        .into_iter()
        .map(|row| pred.matches(&SingleRow { getters: &getters, row }))
        .collect::<Result<_>>()?;
    let mut keep = keep.into_iter();
    Ok(match data {
        RdData::Relation(mut r) => {
            r.rows.retain(|_| keep.next().unwrap_or(false));
            RdData::Relation(r)
        }
        RdData::Collection(mut c) => {
            c.docs.retain(|_| keep.next().unwrap_or(false));
            RdData::Collection(c)
        }
    })
}

/// A projected path, optionally renamed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjItem {
    pub path: String,
    pub alias: Option<String>,
}

impl ProjItem {
    pub fn new(path: impl Into<String>) -> Self {
        ProjItem { path: path.into(), alias: None }
    }
}

impl fmt::Display for ProjItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} AS {a}", self.path),
            None => f.write_str(&self.path),
        }
    }
}

impl FromStr for ProjItem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            [p] => Ok(ProjItem::new(*p)),
            [p, kw, a] if kw.eq_ignore_ascii_case("as") => Ok(ProjItem { path: p.to_string(), alias: Some(a.to_string()) }),
            _ => Err(Error::Spec(format!("bad projection item '{s}'"))),
        }
    }
}

/// Relations keep the projected attributes (named by alias, attribute name,
/// or last path segment). Documents keep the projected paths with their
/// nesting rebuilt; an alias puts the value under a top-level key instead.
pub fn project(data: &RdData, items: &[ProjItem]) -> Result<RdData> {
    match data {
        RdData::Relation(r) => {
            let mut attrs = Vec::with_capacity(items.len());
            let mut cols = Vec::with_capacity(items.len());
            for item in items {
                let col = resolve_col(&r.schema, &item.path).ok_or_else(|| unknown(&item.path))?;
                let (name, ty) = match &col {
                    Col::Direct(i) => (r.schema.attrs()[*i].name.clone(), r.schema.attrs()[*i].ty.clone()),
                    Col::Nested(_, segs) => (segs.last().cloned().unwrap_or_default(), ValueType::Any),
                };
                attrs.push(Attribute::new(item.alias.clone().unwrap_or(name), ty));
                cols.push(Getter::Col(col));
            }
            let rows = r.rows.iter().map(|row| cols.iter().map(|g| g.get(RowRef::Rel(row))).collect()).collect();
            Ok(RdData::Relation(Relation::new_unchecked(Schema::new(attrs)?, rows)))
        }
        RdData::Collection(c) => {
            for item in items {
                split_path(&item.path)?;
            }
            let mut docs = Vec::with_capacity(c.docs.len());
            for doc in &c.docs {
                let mut out = Document::new();
                for item in items {
                    if let Some(v) = doc.dot_get(&item.path)? {
                        match &item.alias {
                            Some(a) => out.insert(a.clone(), v.clone()),
                            None => out.dot_set(&item.path, v.clone())?,
                        }
                    }
                }
                docs.push(out);
            }
            Ok(RdData::Collection(Collection::new(c.name.clone(), docs)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortKey {
    pub path: String,
    pub desc: bool,
}

impl fmt::Display for SortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.path, if self.desc { " DESC" } else { "" })
    }
}

impl FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            [p] => Ok(SortKey { path: p.to_string(), desc: false }),
            [p, d] if d.eq_ignore_ascii_case("desc") => Ok(SortKey { path: p.to_string(), desc: true }),
            [p, d] if d.eq_ignore_ascii_case("asc") => Ok(SortKey { path: p.to_string(), desc: false }),
            _ => Err(Error::Spec(format!("bad sort key '{s}'"))),
        }
    }
}

/// Sorts by the keys under the total value order (nulls first ascending),
/// breaking ties by the whole row so the result is deterministic.
pub fn sort(data: RdData, keys: &[SortKey]) -> Result<RdData> {
    let getters: Vec<Getter> = keys.iter().map(|k| Getter::for_path(&data, &k.path)).collect::<Result<_>>()?;
    let decorated: Vec<(Vec<Value>, usize)> = rows(&data)
        .into_iter()
        .enumerate()
        .map(|(i, row)| (getters.iter().map(|g| g.get(row)).collect(), i))
        .collect();
    let tie_key: Vec<Option<String>> = match &data {
        RdData::Relation(_) => vec![None; decorated.len()],
        RdData::Collection(c) => c.docs.iter().map(|d| Some(d.canonical_json())).collect(),
    };
    let mut order = decorated;
    order.sort_by(|(ka, ia), (kb, ib)| {
        for ((x, y), k) in ka.iter().zip(kb).zip(keys) {
            let o = x.total_cmp(y);
            if o != Ordering::Equal {
                return if k.desc { o.reverse() } else { o };
            }
        }
        match &data {
            RdData::Relation(r) => cmp_records(&r.rows[*ia], &r.rows[*ib]),
            RdData::Collection(_) => tie_key[*ia].cmp(&tie_key[*ib]),
        }
    });
    Ok(match data {
        RdData::Relation(r) => {
            let mut slots: Vec<Option<Vec<Value>>> = r.rows.into_iter().map(Some).collect();
            let rows = order.iter().map(|(_, i)| slots[*i].take().expect("each row once")).collect();
            RdData::Relation(Relation::new_unchecked(r.schema, rows))
        }
        RdData::Collection(c) => {
            let mut slots: Vec<Option<Document>> = c.docs.into_iter().map(Some).collect();
            let docs = order.iter().map(|(_, i)| slots[*i].take().expect("each doc once")).collect();
            RdData::Collection(Collection::new(c.name, docs))
        }
    })
}

pub fn limit(data: RdData, n: usize) -> RdData {
    match data {
        RdData::Relation(mut r) => {
            r.rows.truncate(n);
            RdData::Relation(r)
        }
        RdData::Collection(mut c) => {
            c.docs.truncate(n);
            RdData::Collection(c)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

impl AggFunc {
    fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Avg => "avg",
        }
    }
}

/// `func(path)`, with `path == None` meaning `count(*)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggSpec {
    pub func: AggFunc,
    pub path: Option<String>,
    pub alias: Option<String>,
}

impl AggSpec {
    pub fn count_all() -> Self {
        AggSpec { func: AggFunc::Count, path: None, alias: None }
    }

    pub fn of(func: AggFunc, path: &str) -> Self {
        AggSpec { func, path: Some(path.to_string()), alias: None }
    }

    /// Output attribute name: the alias, `count`, or `<func>_<path>`.
    pub fn output_name(&self) -> String {
        if let Some(a) = &self.alias {
            return a.clone();
        }
        match &self.path {
            None => self.func.name().to_string(),
            Some(p) => format!("{}_{}", self.func.name(), p.replace('.', "_")),
        }
    }
}

impl fmt::Display for AggSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.func.name(), self.path.as_deref().unwrap_or("*"))?;
        if let Some(a) = &self.alias {
            write!(f, " AS {a}")?;
        }
        Ok(())
    }
}

impl FromStr for AggSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("bad aggregate '{s}'"));
        let (call, alias) = match s.to_ascii_lowercase().find(" as ") {
            Some(i) => (s[..i].trim(), Some(s[i + 4..].trim().to_string())),
            None => (s.trim(), None),
        };
        let open = call.find('(').ok_or_else(bad)?;
        let arg = call[open + 1..].strip_suffix(')').ok_or_else(bad)?.trim();
        let func = match call[..open].trim().to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            "avg" => AggFunc::Avg,
            _ => return Err(bad()),
        };
        let path = match arg {
            "*" | "" if func == AggFunc::Count => None,
            "*" | "" => return Err(bad()),
            p => Some(p.to_string()),
        };
        Ok(AggSpec { func, path, alias })
    }
}

#[derive(Debug, Clone)]
struct AggState {
    rows: u64,
    count: u64,
    int_sum: i128,
    float_sum: f64,
    all_int: bool,
    min: Option<Value>,
    max: Option<Value>,
}

impl AggState {
    fn new() -> Self {
        AggState { rows: 0, count: 0, int_sum: 0, float_sum: 0.0, all_int: true, min: None, max: None }
    }

    fn add(&mut self, func: AggFunc, v: Value) -> Result<()> {
        self.rows += 1;
        if v.is_null() {
            return Ok(());
        }
        self.count += 1;
        match func {
            AggFunc::Count => {}
            AggFunc::Sum | AggFunc::Avg => {
                let f = v.as_f64().ok_or_else(|| Error::Type(format!("{} of a {} value", func.name(), v.type_name())))?;
                self.float_sum += f;
                match v {
                    Value::Int(i) => self.int_sum += i as i128,
                    Value::UInt(u) => self.int_sum += u as i128,
                    _ => self.all_int = false,
                }
            }
            AggFunc::Min | AggFunc::Max => {
                let slot = if func == AggFunc::Min { &mut self.min } else { &mut self.max };
                let replace = match slot {
                    None => true,
                    Some(cur) => {
                        let o = v.sql_cmp(cur)?.unwrap_or(Ordering::Equal);
                        if func == AggFunc::Min { o == Ordering::Less } else { o == Ordering::Greater }
                    }
                };
                if replace {
                    *slot = Some(v);
                }
            }
        }
        Ok(())
    }

    fn finish(&self, spec: &AggSpec) -> Value {
        match spec.func {
            AggFunc::Count if spec.path.is_none() => Value::Int(self.rows as i64),
            AggFunc::Count => Value::Int(self.count as i64),
            _ if self.count == 0 => Value::Null,
            AggFunc::Sum if self.all_int => {
                i64::try_from(self.int_sum).map(Value::Int).unwrap_or(Value::Float(self.float_sum))
            }
            AggFunc::Sum => Value::Float(self.float_sum),
            AggFunc::Avg => Value::Float(self.float_sum / self.count as f64),
            AggFunc::Min => self.min.clone().unwrap_or(Value::Null),
            AggFunc::Max => self.max.clone().unwrap_or(Value::Null),
        }
    }
}

/// Groups by `group` paths and computes `aggs` per group. Groups come out
/// sorted by key. Without group keys the result is exactly one row, even
/// for empty input. Nulls only count towards `count(*)`.
pub fn aggregate(data: &RdData, group: &[String], aggs: &[AggSpec]) -> Result<RdData> {
    let group_getters: Vec<Getter> = group.iter().map(|p| Getter::for_path(data, p)).collect::<Result<_>>()?;
    let agg_getters: Vec<Option<Getter>> = aggs
        .iter()
        .map(|a| a.path.as_deref().map(|p| Getter::for_path(data, p)).transpose())
        .collect::<Result<_>>()?;
    let mut index: HashMap<Vec<Option<KeyValue>>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<Value>, Vec<AggState>)> = Vec::new();
    if group.is_empty() {
        groups.push((Vec::new(), vec![AggState::new(); aggs.len()]));
        index.insert(Vec::new(), 0);
    }
    for row in rows(data) {
        let key_vals: Vec<Value> = group_getters.iter().map(|g| g.get(row)).collect();
        let key: Vec<Option<KeyValue>> = key_vals.iter().map(Value::join_key).collect();
        let gi = *index.entry(key).or_insert_with(|| {
            groups.push((key_vals, vec![AggState::new(); aggs.len()]));
            groups.len() - 1
        });
        for ((spec, getter), state) in aggs.iter().zip(&agg_getters).zip(groups[gi].1.iter_mut()) {
            let v = getter.as_ref().map(|g| g.get(row)).unwrap_or(Value::Bool(true));
            state.add(spec.func, v)?;
        }
    }
    groups.sort_by(|a, b| cmp_records(&a.0, &b.0));
    let out_rows = groups.iter().map(|(key, states)| {
        let mut row = key.clone();
        row.extend(aggs.iter().zip(states).map(|(spec, st)| st.finish(spec)));
        row
    });
    match data {
        RdData::Relation(_) => {
            let mut attrs: Vec<Attribute> = group
                .iter()
                .zip(&group_getters)
                .map(|(p, g)| {
                    let name = match g {
                        Getter::Col(Col::Direct(i)) => data.as_relation().expect("relation").schema.attrs()[*i].name.clone(),
                        _ => p.clone(),
                    };
                    Attribute::new(name, g.value_type(data))
                })
                .collect();
            for (spec, g) in aggs.iter().zip(&agg_getters) {
                let input = g.as_ref().map(|g| g.value_type(data)).unwrap_or(ValueType::Any);
                let ty = match spec.func {
                    AggFunc::Count => ValueType::Int,
                    AggFunc::Avg => ValueType::Float,
                    AggFunc::Sum => match input {
                        ValueType::Int | ValueType::UInt => ValueType::Any,
                        ValueType::Float => ValueType::Float,
                        _ => ValueType::Any,
                    },
                    AggFunc::Min | AggFunc::Max => input,
                };
                attrs.push(Attribute::new(spec.output_name(), ty));
            }
            Ok(RdData::Relation(Relation::new_unchecked(Schema::new(attrs)?, out_rows.collect())))
        }
        RdData::Collection(c) => {
            let names: Vec<String> = aggs.iter().map(AggSpec::output_name).collect();
            let mut docs = Vec::new();
            for row in out_rows {
                let mut doc = Document::new();
                for (p, v) in group.iter().zip(&row) {
                    doc.dot_set(p, v.clone())?;
                }
                for (n, v) in names.iter().zip(&row[group.len()..]) {
                    doc.insert(n.clone(), v.clone());
                }
                docs.push(doc);
            }
            Ok(RdData::Collection(Collection::new(c.name.clone(), docs)))
        }
    }
}

/// Concatenates inputs of one model. Relations must agree on arity and
/// attribute types; the first input's names are kept.
pub fn union(inputs: Vec<RdData>) -> Result<RdData> {
    let mut it = inputs.into_iter();
    let first = it.next().ok_or_else(|| Error::Plan("union of no inputs".into()))?;
    match first {
        RdData::Relation(mut acc) => {
            for next in it {
                let r = match next {
                    RdData::Relation(r) => r,
                    RdData::Collection(_) => return Err(Error::Type("union of a relation and a collection".into())),
                };
                let compatible = r.schema.arity() == acc.schema.arity()
                    && r.schema.attrs().iter().zip(acc.schema.attrs()).all(|(a, b)| {
                        a.ty == b.ty || a.ty == ValueType::Any || b.ty == ValueType::Any
                    });
                if !compatible {
                    return Err(Error::Schema("union inputs have different schemas".into()));
                }
                acc.rows.extend(r.rows);
            }
            Ok(RdData::Relation(acc))
        }
        RdData::Collection(mut acc) => {
            for next in it {
                match next {
                    RdData::Collection(c) => acc.docs.extend(c.docs),
                    RdData::Relation(_) => return Err(Error::Type("union of a collection and a relation".into())),
                }
            }
            Ok(RdData::Collection(acc))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    /// Unqualified document path: left document first, then right.
    Either,
}

struct JoinScope<'a> {
    left: &'a RdData,
    right: &'a RdData,
    left_alias: &'a str,
    right_alias: &'a str,
}

impl JoinScope<'_> {
    fn compile(&self, path: &str) -> Result<(Side, Getter, Getter)> {
        let strip = |alias: &str| path.strip_prefix(alias).and_then(|r| r.strip_prefix('.'));
        if let Some(rest) = strip(self.left_alias) {
            if let Ok(g) = Getter::for_path(self.left, rest) {
                return Ok((Side::Left, g.clone(), g));
            }
        }
        if let Some(rest) = strip(self.right_alias) {
            if let Ok(g) = Getter::for_path(self.right, rest) {
                return Ok((Side::Right, g.clone(), g));
            }
        }
        match (self.left, self.right) {
            (RdData::Collection(_), RdData::Collection(_)) => {
                let g = Getter::for_path(self.left, path)?;
                Ok((Side::Either, g.clone(), g))
            }
            _ => {
                if let Some(col) = self.left.as_relation().ok().and_then(|r| resolve_col(&r.schema, path)) {
                    let g = Getter::Col(col);
                    return Ok((Side::Left, g.clone(), g));
                }
                if let Some(col) = self.right.as_relation().ok().and_then(|r| resolve_col(&r.schema, path)) {
                    let g = Getter::Col(col);
                    return Ok((Side::Right, g.clone(), g));
                }
                Err(unknown(path))
            }
        }
    }
}

struct JoinRow<'a> {
    paths: &'a HashMap<String, (Side, Getter, Getter)>,
    left: RowRef<'a>,
    right: RowRef<'a>,
}

impl Row for JoinRow<'_> {
    fn lookup(&self, path: &str) -> Result<Option<Value>> {
        let Some((side, lg, rg)) = self.paths.get(path) else { return Ok(None) };
        Ok(Some(match side {
            Side::Left => lg.get(self.left),
            Side::Right => rg.get(self.right),
            Side::Either => match lg.get(self.left) {
                Value::Null => rg.get(self.right),
                v => v,
            },
        }))
    }
}

/// Inner join of two inputs of the same model under `pred`. Conjuncts of the
/// form `left.path = right.path` drive a hash join; the rest are checked on
/// each candidate pair (a nested loop when there are no equi conjuncts).
/// Relation output is the left attributes then the right ones, with right
/// names that collide renamed to `<right_alias>.<name>`. Document output
/// merges each pair, keeping the left value for shared keys. Output is in
/// left-row order, matches in right-row order.
pub fn join(left: &RdData, right: &RdData, left_alias: &str, right_alias: &str, pred: &Expr) -> Result<RdData> {
    if matches!((left, right), (RdData::Relation(_), RdData::Collection(_)) | (RdData::Collection(_), RdData::Relation(_))) {
        return Err(Error::Plan("a relation/collection join is an inter-model join".into()));
    }
    let pairs = join_pairs(left, right, left_alias, right_alias, pred)?;
    match (left, right) {
        (RdData::Relation(l), RdData::Relation(r)) => {
            let mut attrs = l.schema.attrs().to_vec();
            for a in r.schema.attrs() {
                let mut a = a.clone();
                if attrs.iter().any(|x| x.name == a.name) {
                    a.name = format!("{right_alias}.{}", a.name);
                }
                attrs.push(a);
            }
            let rows = pairs
                .iter()
                .map(|&(li, ri)| l.rows[li].iter().chain(&r.rows[ri]).cloned().collect())
                .collect();
            Ok(RdData::Relation(Relation::new_unchecked(Schema::new(attrs)?, rows)))
        }
        (RdData::Collection(l), RdData::Collection(r)) => {
            let docs = pairs
                .iter()
                .map(|&(li, ri)| {
                    let mut d = l.docs[li].clone();
                    for (k, v) in r.docs[ri].pairs() {
                        if d.get(k).is_none() {
                            d.insert(k.clone(), v.clone());
                        }
                    }
                    d
                })
                .collect();
            Ok(RdData::Collection(Collection::new(l.name.clone(), docs)))
        }
        _ => unreachable!("mixed models rejected above"),
    }
}

/// Matching `(left row, right row)` index pairs of an inner join, in
/// left-row order with matches in right-row order. The inputs may be of
/// different models.
pub fn join_pairs(left: &RdData, right: &RdData, left_alias: &str, right_alias: &str, pred: &Expr) -> Result<Vec<(usize, usize)>> {
    let scope = JoinScope { left, right, left_alias, right_alias };
    let mut paths = HashMap::new();
    for p in pred.paths() {
        paths.insert(p.to_string(), scope.compile(p)?);
    }
    let mut keys: Vec<(Getter, Getter)> = Vec::new();
    let mut residual = Vec::new();
    for c in pred.conjuncts() {
        if let Expr::Cmp(CmpOp::Eq, a, b) = c {
            if let (Expr::Path(pa), Expr::Path(pb)) = (a.as_ref(), b.as_ref()) {
                match (&paths[pa.as_str()], &paths[pb.as_str()]) {
                    ((Side::Left, ga, _), (Side::Right, _, gb)) | ((Side::Right, _, gb), (Side::Left, ga, _)) => {
                        keys.push((ga.clone(), gb.clone()));
                        continue;
                    }
                    _ => {}
                }
            }
        }
        residual.push(c.clone());
    }
    let residual = Expr::and_all(residual);
    let lrows = rows(left);
    let rrows = rows(right);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let check = |li: usize, ri: usize| -> Result<bool> {
        match &residual {
            None => Ok(true),
            Some(e) => e.matches(&JoinRow { paths: &paths, left: lrows[li], right: rrows[ri] }),
        }
    };
    if keys.is_empty() {
        for li in 0..lrows.len() {
            for ri in 0..rrows.len() {
                if check(li, ri)? {
                    pairs.push((li, ri));
                }
            }
        }
    } else {
        let key_of = |row: RowRef, left_side: bool| -> Option<Vec<KeyValue>> {
            keys.iter().map(|(lg, rg)| if left_side { lg.get(row) } else { rg.get(row) }.join_key()).collect()
        };
        // build on the smaller input, then restore left-major order
        let build_left = lrows.len() < rrows.len();
        let (build, probe) = if build_left { (&lrows, &rrows) } else { (&rrows, &lrows) };
        let mut table: HashMap<Vec<KeyValue>, Vec<usize>> = HashMap::new();
        for (i, row) in build.iter().enumerate() {
            if let Some(k) = key_of(*row, build_left) {
                table.entry(k).or_default().push(i);
            }
        }
        for (pi, row) in probe.iter().enumerate() {
            let Some(k) = key_of(*row, !build_left) else { continue };
            for &bi in table.get(&k).map(Vec::as_slice).unwrap_or(&[]) {
                let (li, ri) = if build_left { (bi, pi) } else { (pi, bi) };
                if check(li, ri)? {
                    pairs.push((li, ri));
                }
            }
        }
        if build_left {
            pairs.sort_unstable();
        }
    }
    Ok(pairs)
}

/// One output row per element of the list at `path`, with the list replaced
/// by the element. Rows where the path is missing or null are dropped.
pub fn unwind(data: &RdData, path: &str) -> Result<RdData> {
    let not_list = |v: &Value| Error::Type(format!("unwind of a {} value at '{path}'", v.type_name()));
    match data {
        RdData::Collection(c) => {
            let mut docs = Vec::new();
            for doc in &c.docs {
                match doc.dot_get(path)? {
                    None | Some(Value::Null) => {}
                    Some(Value::List(items)) => {
                        for item in items {
                            let mut d = doc.clone();
                            d.dot_set(path, item.clone())?;
                            docs.push(d);
                        }
                    }
                    Some(v) => return Err(not_list(v)),
                }
            }
            Ok(RdData::Collection(Collection::new(c.name.clone(), docs)))
        }
        RdData::Relation(r) => {
            let Some(Col::Direct(i)) = resolve_col(&r.schema, path) else {
                return Err(unknown(path));
            };
            let mut attrs = r.schema.attrs().to_vec();
            attrs[i].ty = match &attrs[i].ty {
                ValueType::List(elem) => (**elem).clone(),
                _ => ValueType::Any,
            };
            let mut rows = Vec::new();
            for row in &r.rows {
                match &row[i] {
                    Value::Null => {}
                    Value::List(items) => {
                        for item in items {
                            let mut out = row.clone();
                            out[i] = item.clone();
                            rows.push(out);
                        }
                    }
                    v => return Err(not_list(v)),
                }
            }
            Ok(RdData::Relation(Relation::new_unchecked(Schema::new(attrs)?, rows)))
        }
    }
}
