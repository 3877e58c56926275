use std::collections::HashSet;

use super::value::{Value, ValueType};
use crate::{Error, Result};

/// A row of attribute values. Its arity is fixed by the owning relation.
pub type Record = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub ty: ValueType,
}

impl Attribute {
    pub fn new(name: impl Into<String>, ty: ValueType) -> Self {
        Attribute { name: name.into(), ty }
    }
}

/// Ordered, uniquely named attribute list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    attrs: Vec<Attribute>,
}

impl Schema {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attrs {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute '{}'", a.name)));
            }
        }
        Ok(Schema { attrs })
    }

    /// Convenience constructor from `(name, type)` pairs.
    pub fn of(attrs: &[(&str, ValueType)]) -> Result<Self> {
        Schema::new(attrs.iter().map(|(n, t)| Attribute::new(*n, t.clone())).collect())
    }

    pub fn attrs(&self) -> &[Attribute] {
        &self.attrs
    }

    pub fn arity(&self) -> usize {
        self.attrs.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attrs.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }
}

/// A homogeneous multiset of records sharing one schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Relation {
    pub schema: Schema,
    pub rows: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Arity { expected: usize, found: usize },
    /// Attribute positions whose values do not match the declared type.
    Types(Vec<usize>),
}

/// One entry per non-conforming row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowViolation {
    pub row: usize,
    pub violation: Violation,
}

impl Relation {
    /// Builds a relation, failing if any row does not conform to `schema`.
    pub fn new(schema: Schema, rows: Vec<Record>) -> Result<Self> {
        let rel = Relation { schema, rows };
        if let Some(first) = validate_relation(&rel).first() {
            return Err(Error::Schema(format!("row {} does not conform: {:?}", first.row, first.violation)));
        }
        Ok(rel)
    }

    pub fn new_unchecked(schema: Schema, rows: Vec<Record>) -> Self {
        Relation { schema, rows }
    }

    pub fn empty(schema: Schema) -> Self {
        Relation { schema, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows sorted by the total value order; two relations with equal sorted
    /// rows are equal as multisets.
    pub fn sorted_rows(&self) -> Vec<Record> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| super::cmp_records(a, b));
        rows
    }
}

/// Lists every row that violates the schema's arity or attribute types.
/// Never fails; an empty report means the relation is valid.
pub fn validate_relation(rel: &Relation) -> Vec<RowViolation> {
    let arity = rel.schema.arity();
    rel.rows
        .iter()
        .enumerate()
        .filter_map(|(row, values)| {
            if values.len() != arity {
                return Some(RowViolation {
                    row,
                    violation: Violation::Arity { expected: arity, found: values.len() },
                });
            }
            let bad: Vec<usize> = values
                .iter()
                .zip(rel.schema.attrs())
                .enumerate()
                .filter(|(_, (v, a))| !a.ty.admits(v))
                .map(|(i, _)| i)
                .collect();
            (!bad.is_empty()).then(|| RowViolation { row, violation: Violation::Types(bad) })
        })
        .collect()
}
