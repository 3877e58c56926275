//! Relational and document execution: operator trees evaluated one operator
//! at a time over fully materialized inputs.

mod expr;
mod ops;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub use expr::{CmpOp, Expr, Row};
pub(crate) use ops::PathReader;
pub use ops::{aggregate, filter, join, join_pairs, limit, project, sort, union, unwind, AggFunc, AggSpec, ProjItem, SortKey};

use crate::model::{Collection, Relation, Value};
use crate::pool::{BufferObject, BufferPool, EngineTag, ObjectId, Unevictable};
use crate::{Error, Result};

/// Output of a relational or document operator.
#[derive(Debug, Clone, PartialEq)]
pub enum RdData {
    Relation(Relation),
    Collection(Collection),
}

impl RdData {
    pub fn len(&self) -> usize {
        match self {
            RdData::Relation(r) => r.len(),
            RdData::Collection(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_relation(&self) -> Result<&Relation> {
        match self {
            RdData::Relation(r) => Ok(r),
            RdData::Collection(c) => Err(Error::Type(format!("collection '{}' used where a relation is needed", c.name))),
        }
    }

    pub fn as_collection(&self) -> Result<&Collection> {
        match self {
            RdData::Collection(c) => Ok(c),
            RdData::Relation(_) => Err(Error::Type("relation used where a collection is needed".into())),
        }
    }

    /// Rough in-memory footprint, used as the buffer-pool object size.
    pub fn approx_bytes(&self) -> u64 {
        fn value(v: &Value) -> u64 {
            16 + match v {
                Value::Str(s) => s.len() as u64,
                Value::List(items) => items.iter().map(value).sum(),
                Value::Doc(d) => d.pairs().iter().map(|(k, v)| k.len() as u64 + value(v)).sum(),
                _ => 0,
            }
        }
        let body: u64 = match self {
            RdData::Relation(r) => r.rows.iter().flatten().map(value).sum(),
            RdData::Collection(c) => c.docs.iter().map(|d| value(&Value::Doc(d.clone()))).sum(),
        };
        64 + body
    }
}

/// Tree-shaped plan for the relational/document engine. Leaves are scans of
/// named datasets or references to materialized results.
#[derive(Debug, Clone, PartialEq)]
pub enum RdPlanTree {
    Scan(String),
    AliasRef(String),
    Filter { input: Box<RdPlanTree>, pred: Expr },
    Project { input: Box<RdPlanTree>, items: Vec<ProjItem> },
    Sort { input: Box<RdPlanTree>, keys: Vec<SortKey> },
    Limit { input: Box<RdPlanTree>, n: usize },
    Aggregate { input: Box<RdPlanTree>, group: Vec<String>, aggs: Vec<AggSpec> },
    Union { inputs: Vec<RdPlanTree> },
    Join { left: Box<RdPlanTree>, right: Box<RdPlanTree>, left_alias: String, right_alias: String, pred: Expr },
    Unwind { input: Box<RdPlanTree>, path: String },
}

impl RdPlanTree {
    pub fn children(&self) -> Vec<&RdPlanTree> {
        match self {
            RdPlanTree::Scan(_) | RdPlanTree::AliasRef(_) => vec![],
            RdPlanTree::Filter { input, .. }
            | RdPlanTree::Project { input, .. }
            | RdPlanTree::Sort { input, .. }
            | RdPlanTree::Limit { input, .. }
            | RdPlanTree::Aggregate { input, .. }
            | RdPlanTree::Unwind { input, .. } => vec![input],
            RdPlanTree::Union { inputs } => inputs.iter().collect(),
            RdPlanTree::Join { left, right, .. } => vec![left, right],
        }
    }

    /// Names of alias references anywhere in the tree.
    pub fn alias_refs(&self) -> Vec<&str> {
        match self {
            RdPlanTree::AliasRef(n) => vec![n],
            other => other.children().into_iter().flat_map(|c| c.alias_refs()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }
}

impl fmt::Display for RdPlanTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RdPlanTree::Scan(n) => write!(f, "scan({n})"),
            RdPlanTree::AliasRef(n) => write!(f, "@{n}"),
            RdPlanTree::Filter { input, pred } => write!(f, "{input}.filter({pred})"),
            RdPlanTree::Project { input, items } => {
                let items: Vec<String> = items.iter().map(ToString::to_string).collect();
                write!(f, "{input}.project({})", items.join(", "))
            }
            RdPlanTree::Sort { input, keys } => {
                let keys: Vec<String> = keys.iter().map(ToString::to_string).collect();
                write!(f, "{input}.sort({})", keys.join(", "))
            }
            RdPlanTree::Limit { input, n } => write!(f, "{input}.limit({n})"),
            RdPlanTree::Aggregate { input, group, aggs } => {
                let aggs: Vec<String> = aggs.iter().map(ToString::to_string).collect();
                write!(f, "{input}.aggregate([{}], [{}])", group.join(", "), aggs.join(", "))
            }
            RdPlanTree::Union { inputs } => {
                let inputs: Vec<String> = inputs.iter().map(ToString::to_string).collect();
                write!(f, "union({})", inputs.join(", "))
            }
            RdPlanTree::Join { left, right, pred, .. } => write!(f, "{left}.join({right}, {pred})"),
            RdPlanTree::Unwind { input, path } => write!(f, "{input}.unwind({path})"),
        }
    }
}

struct Entry {
    data: Arc<RdData>,
    pooled: Option<ObjectId>,
}

/// Named inputs of the relational/document engine: base datasets and
/// materialized intermediate results. Materialized results are registered
/// with the buffer pool (as record-engine objects that cannot be evicted
/// while the registry holds them) and released when the registry is dropped.
pub struct Registry {
    pool: Option<Arc<BufferPool>>,
    entries: HashMap<String, Entry>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new(None)
    }
}

impl Registry {
    pub fn new(pool: Option<Arc<BufferPool>>) -> Self {
        Registry { pool, entries: HashMap::new() }
    }

    /// Adds a base dataset, replacing any dataset of the same name.
    pub fn insert_base(&mut self, name: impl Into<String>, data: RdData) {
        self.insert_shared(name, Arc::new(data));
    }

    pub fn insert_shared(&mut self, name: impl Into<String>, data: Arc<RdData>) {
        if let Some(old) = self.entries.insert(name.into(), Entry { data, pooled: None }) {
            self.release(old);
        }
    }

    /// Stores a materialized result. Names must be unique.
    pub fn materialize(&mut self, name: impl Into<String>, data: RdData) -> Result<Arc<RdData>> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Plan(format!("result '{name}' materialized twice")));
        }
        let pooled = match &self.pool {
            Some(pool) => {
                let id = pool.allocate_id();
                pool.add(BufferObject::new(id, data.approx_bytes(), EngineTag::Record, Arc::new(Unevictable)))?;
                Some(id)
            }
            None => None,
        };
        let data = Arc::new(data);
        self.entries.insert(name, Entry { data: data.clone(), pooled });
        Ok(data)
    }

    pub fn get(&self, name: &str) -> Option<Arc<RdData>> {
        let entry = self.entries.get(name)?;
        if let (Some(pool), Some(id)) = (&self.pool, entry.pooled) {
            let _ = pool.touch(id);
        }
        Some(entry.data.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Arc<RdData>> {
        let entry = self.entries.remove(name)?;
        let data = entry.data.clone();
        self.release(entry);
        Some(data)
    }

    fn release(&self, entry: Entry) {
        if let (Some(pool), Some(id)) = (&self.pool, entry.pooled) {
            let _ = pool.remove(id);
        }
    }
}

impl Drop for Registry {
    fn drop(&mut self) {
        for (_, entry) in std::mem::take(&mut self.entries) {
            self.release(entry);
        }
    }
}

/// Evaluates an operator tree. Scans and alias references are resolved in
/// `registry`.
pub fn execute_tree(tree: &RdPlanTree, registry: &Registry) -> Result<RdData> {
    Ok(match tree {
        RdPlanTree::Scan(name) => {
            (*registry.get(name).ok_or_else(|| Error::Plan(format!("unknown dataset '{name}'")))?).clone()
        }
        RdPlanTree::AliasRef(name) => {
            (*registry.get(name).ok_or_else(|| Error::Plan(format!("unresolved alias '{name}'")))?).clone()
        }
        RdPlanTree::Filter { input, pred } => filter(execute_tree(input, registry)?, pred)?,
        RdPlanTree::Project { input, items } => project(&execute_tree(input, registry)?, items)?,
        RdPlanTree::Sort { input, keys } => sort(execute_tree(input, registry)?, keys)?,
        RdPlanTree::Limit { input, n } => limit(execute_tree(input, registry)?, *n),
        RdPlanTree::Aggregate { input, group, aggs } => aggregate(&execute_tree(input, registry)?, group, aggs)?,
        RdPlanTree::Union { inputs } => {
            union(inputs.iter().map(|i| execute_tree(i, registry)).collect::<Result<Vec<_>>>()?)?
        }
        RdPlanTree::Join { left, right, left_alias, right_alias, pred } => join(
            &execute_tree(left, registry)?,
            &execute_tree(right, registry)?,
            left_alias,
            right_alias,
            pred,
        )?,
        RdPlanTree::Unwind { input, path } => unwind(&execute_tree(input, registry)?, path)?,
    })
}
