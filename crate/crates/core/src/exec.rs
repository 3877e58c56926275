//! Plan execution: partitions run in topological order, each on the engine
//! for its model, with inter-model nodes handled by the bridge.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::array::{Layout, StoredArray};
use crate::array_ops::{self, ArithOp, CellAgg};
use crate::bridge::{self, ArraySpec, JoinOutput, JoinOutputSpec, JoinStats, Strategy};
use crate::model::{Collection, Relation};
use crate::planner::{self, LogicalPlan, Model, Op, PartitionDag, PlanNode, ShapeArg};
use crate::pool::BufferPool;
use crate::rd::{self, execute_tree, Expr, RdData, Registry};
use crate::{Error, Result};

/// Named base datasets.
#[derive(Debug, Default, Clone)]
pub struct Catalog {
    records: HashMap<String, Arc<RdData>>,
    arrays: HashMap<String, Arc<StoredArray>>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    pub fn add_relation(&mut self, name: impl Into<String>, rel: Relation) {
        self.records.insert(name.into(), Arc::new(RdData::Relation(rel)));
    }

    pub fn add_collection(&mut self, name: impl Into<String>, col: Collection) {
        self.records.insert(name.into(), Arc::new(RdData::Collection(col)));
    }

    pub fn add_array(&mut self, name: impl Into<String>, array: StoredArray) {
        self.arrays.insert(name.into(), Arc::new(array));
    }

    pub fn records(&self, name: &str) -> Option<&Arc<RdData>> {
        self.records.get(name)
    }

    pub fn array(&self, name: &str) -> Option<&Arc<StoredArray>> {
        self.arrays.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.records.keys().chain(self.arrays.keys()).map(String::as_str).collect();
        names.sort();
        names
    }
}

/// Value produced by a plan node.
#[derive(Debug, Clone)]
pub enum NodeValue {
    Rd(Arc<RdData>),
    Array(Arc<StoredArray>),
}

impl NodeValue {
    pub fn as_rd(&self) -> Result<&Arc<RdData>> {
        match self {
            NodeValue::Rd(d) => Ok(d),
            NodeValue::Array(_) => Err(Error::Type("array used where records are needed".into())),
        }
    }

    pub fn as_array(&self) -> Result<&Arc<StoredArray>> {
        match self {
            NodeValue::Array(a) => Ok(a),
            NodeValue::Rd(_) => Err(Error::Type("records used where an array is needed".into())),
        }
    }

    fn from_join(out: JoinOutput) -> NodeValue {
        match out {
            JoinOutput::Rd(d) => NodeValue::Rd(Arc::new(d)),
            JoinOutput::Array(a) => NodeValue::Array(Arc::new(a)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub strategy: Strategy,
    /// Layout of arrays built from records.
    pub layout: Layout,
    /// Tile extent of generated arrays; derived from the rank when `None`.
    pub tile_extent: Option<u64>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { strategy: Strategy::Auto, layout: Layout::Coo, tile_extent: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub id: usize,
    pub model: Model,
    pub nodes: Vec<usize>,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct ExecResult {
    pub value: NodeValue,
    pub partitions: Vec<PartitionReport>,
    pub joins: Vec<JoinStats>,
}

/// Runs every partition of `plan` and returns the value of `target`.
pub fn execute(
    plan: &LogicalPlan,
    target: usize,
    catalog: &Catalog,
    pool: &Arc<BufferPool>,
    config: &ExecConfig,
) -> Result<ExecResult> {
    if target >= plan.len() {
        return Err(Error::Plan(format!("target node {target} is not in the plan")));
    }
    let pd = planner::partition(plan)?;
    let order = planner::topo_order(&pd)?;
    let mut run = Run { plan, pd: &pd, catalog, pool, config, values: HashMap::new(), joins: Vec::new() };
    let mut reports = Vec::with_capacity(order.len());
    for p in order {
        let start = Instant::now();
        run.partition(p).map_err(|e| Error::InPartition { partition: p, source: Box::new(e) })?;
        let part = &pd.partitions[p];
        reports.push(PartitionReport { id: p, model: part.model, nodes: part.nodes.clone(), elapsed: start.elapsed() });
    }
    let value = run.values.remove(&target).ok_or_else(|| Error::Internal(format!("node {target} was not evaluated")))?;
    Ok(ExecResult { value, partitions: reports, joins: run.joins })
}

struct Run<'a> {
    plan: &'a LogicalPlan,
    pd: &'a PartitionDag,
    catalog: &'a Catalog,
    pool: &'a Arc<BufferPool>,
    config: &'a ExecConfig,
    values: HashMap<usize, NodeValue>,
    joins: Vec<JoinStats>,
}

impl Run<'_> {
    fn value(&self, id: usize) -> Result<&NodeValue> {
        self.values.get(&id).ok_or_else(|| Error::Internal(format!("node {id} used before evaluation")))
    }

    fn partition(&mut self, p: usize) -> Result<()> {
        let part = &self.pd.partitions[p];
        match part.model {
            Model::Relational | Model::Document => self.record_partition(p),
            Model::Array => {
                for &n in &self.ordered(&part.nodes) {
                    let v = self.array_node(self.plan.node(n))?;
                    self.values.insert(n, NodeValue::Array(Arc::new(v)));
                }
                Ok(())
            }
            Model::InterModel => {
                let node = self.plan.node(part.nodes[0]);
                let v = self.inter_node(node)?;
                self.values.insert(node.id, v);
                Ok(())
            }
        }
    }

    /// Members of a partition with producers first, ties by id.
    fn ordered(&self, nodes: &[usize]) -> Vec<usize> {
        let members: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut done = BTreeSet::new();
        let mut out = Vec::with_capacity(nodes.len());
        while out.len() < nodes.len() {
            let next = members
                .iter()
                .copied()
                .find(|n| {
                    !done.contains(n)
                        && self.plan.node(*n).inputs.iter().all(|i| !members.contains(i) || done.contains(i))
                })
                .expect("partitions are acyclic");
            done.insert(next);
            out.push(next);
        }
        out
    }

    fn record_partition(&mut self, p: usize) -> Result<()> {
        let part = &self.pd.partitions[p];
        let mut registry = Registry::new(Some(self.pool.clone()));
        for &n in &part.nodes {
            let node = self.plan.node(n);
            if let Op::OpenTable { name } | Op::OpenCollection { name } = &node.op {
                let data = self.catalog.records(name).ok_or_else(|| Error::Plan(format!("unknown dataset '{name}'")))?;
                let is_rel = matches!(**data, RdData::Relation(_));
                if is_rel != matches!(node.op, Op::OpenTable { .. }) {
                    let kind = if is_rel { "a table" } else { "a collection" };
                    return Err(Error::Plan(format!("'{name}' is {kind}")));
                }
                registry.insert_shared(name.clone(), data.clone());
            }
            for &i in &node.inputs {
                if self.pd.node_partition[i] != p {
                    registry.insert_shared(planner::node_alias(i), self.value(i)?.as_rd()?.clone());
                }
            }
        }
        let (main, list) = planner::dag_to_trees(self.plan, self.pd, p)?;
        let by_alias: HashMap<String, usize> = part.nodes.iter().map(|&n| (planner::node_alias(n), n)).collect();
        for (alias, tree) in list {
            let data = execute_tree(&tree, &registry)?;
            let data = registry.materialize(alias.clone(), data)?;
            self.values.insert(by_alias[&alias], NodeValue::Rd(data));
        }
        let out = self.pd.output_node(self.plan, p);
        let data = execute_tree(&main, &registry)?;
        self.values.insert(out, NodeValue::Rd(Arc::new(data)));
        Ok(())
    }

    fn array_input(&self, node: &PlanNode, k: usize) -> Result<Arc<StoredArray>> {
        let id = *node.inputs.get(k).ok_or_else(|| Error::Plan(format!("{} is missing input {k}", node.op.name())))?;
        Ok(self.value(id)?.as_array()?.clone())
    }

    fn shape(&self, node: &PlanNode, args: &[ShapeArg]) -> Result<Vec<u64>> {
        args.iter()
            .map(|a| match a {
                ShapeArg::Const(c) => Ok(*c),
                ShapeArg::Input { input } => {
                    let id = *node.inputs.get(*input).ok_or_else(|| Error::Plan(format!("shape input {input} missing")))?;
                    scalar_count(self.value(id)?.as_rd()?)
                }
            })
            .collect()
    }

    fn tile_extent(&self, ndim: usize) -> u64 {
        self.config.tile_extent.unwrap_or_else(|| bridge::default_tile_extent(ndim))
    }

    fn array_node(&self, node: &PlanNode) -> Result<StoredArray> {
        let a = |k: usize| -> Result<Arc<StoredArray>> { self.array_input(node, k) };
        match &node.op {
            Op::OpenArray { name } => {
                let arr = self.catalog.array(name).ok_or_else(|| Error::Plan(format!("unknown array '{name}'")))?;
                // copy so that later operators own their inputs
                array_ops::subarray(arr, &vec![0; arr.meta().ndim()], arr.meta().size())
            }
            Op::Ewise { op } => array_ops::ewise(op.parse::<ArithOp>()?, &*a(0)?, &*a(1)?),
            Op::Matmul => array_ops::matmul(&*a(0)?, &*a(1)?),
            Op::Transpose => array_ops::transpose(&*a(0)?),
            Op::Window { radius, agg, attr } => {
                array_ops::window(&*a(0)?, radius, agg.parse::<CellAgg>()?, attr.as_deref())
            }
            Op::Subarray { lo, hi } => array_ops::subarray(&*a(0)?, lo, hi),
            Op::ArrayAggregate { dims, agg, attr } => {
                let dims: Vec<&str> = dims.iter().map(String::as_str).collect();
                array_ops::aggregate(&*a(0)?, &dims, agg.parse::<CellAgg>()?, attr.as_deref())
            }
            Op::Rand { shape, dims, attr, seed } => {
                let shape = self.shape(node, shape)?;
                let dims: Vec<&str> = dims.iter().map(String::as_str).collect();
                array_ops::rand(&shape, &dims, attr, *seed, self.tile_extent(shape.len()), self.pool.clone())
            }
            Op::SpatialJoin => array_ops::spatial_join_array(&*a(0)?, &*a(1)?),
            other => Err(Error::Plan(format!("{} is not an array operation", other.name()))),
        }
    }

    fn inter_node(&mut self, node: &PlanNode) -> Result<NodeValue> {
        let input = |k: usize| -> Result<&NodeValue> {
            let id = *node.inputs.get(k).ok_or_else(|| Error::Plan(format!("{} is missing input {k}", node.op.name())))?;
            self.value(id)
        };
        Ok(match &node.op {
            Op::ToArray { dims, values, shape } => {
                let data = input(0)?.as_rd()?.clone();
                let mut spec = ArraySpec::new(dims.clone(), values.clone());
                spec.layout = self.config.layout;
                if let Some(shape) = shape {
                    let size = self.shape(node, shape)?;
                    let e = self.tile_extent(size.len());
                    spec.tile = Some(size.iter().map(|&s| s.min(e)).collect());
                    spec.size = Some(size);
                } else if let Some(e) = self.config.tile_extent {
                    spec.tile = Some(vec![e; dims.len()]);
                }
                NodeValue::Array(Arc::new(bridge::to_array(&data, &spec, self.pool.clone())?))
            }
            Op::ToRelation => match input(0)? {
                NodeValue::Array(a) => NodeValue::Rd(Arc::new(RdData::Relation(bridge::to_relation(a)?))),
                NodeValue::Rd(d) => match &**d {
                    RdData::Relation(_) => NodeValue::Rd(d.clone()),
                    RdData::Collection(c) => {
                        let keys = bridge::collection_keys(c);
                        NodeValue::Rd(Arc::new(RdData::Relation(bridge::collection_to_relation(c, &keys, true)?)))
                    }
                },
            },
            Op::ToCollection => match input(0)? {
                NodeValue::Array(a) => NodeValue::Rd(Arc::new(RdData::Collection(bridge::array_to_collection(a, "array")?))),
                NodeValue::Rd(d) => match &**d {
                    RdData::Relation(r) => NodeValue::Rd(Arc::new(RdData::Collection(bridge::relation_to_collection(r, "relation")))),
                    RdData::Collection(_) => NodeValue::Rd(d.clone()),
                },
            },
            Op::InterJoin { pred, left_alias, right_alias, output } => {
                let pred = Expr::parse(pred)?;
                let (l, r) = (input(0)?.clone(), input(1)?.clone());
                match (&l, &r) {
                    (NodeValue::Array(a), NodeValue::Rd(d)) | (NodeValue::Rd(d), NodeValue::Array(a)) => {
                        let (rec_alias, arr_alias) =
                            if matches!(l, NodeValue::Array(_)) { (right_alias, left_alias) } else { (left_alias, right_alias) };
                        let spec = JoinOutputSpec::new(*output).with_alias(arr_alias.clone());
                        let (out, stats) = bridge::inter_join(d, a, &pred, rec_alias, &spec, self.config.strategy)?;
                        self.joins.push(stats);
                        NodeValue::from_join(out)
                    }
                    (NodeValue::Rd(ld), NodeValue::Rd(rd_)) => {
                        NodeValue::Rd(Arc::new(record_inter_join(ld, rd_, left_alias, right_alias, &pred, *output)?))
                    }
                    (NodeValue::Array(_), NodeValue::Array(_)) => {
                        return Err(Error::Plan("array-array joins are spatial joins, not inter-model joins".into()))
                    }
                }
            }
            other => return Err(Error::Plan(format!("{} is not an inter-model operation", other.name()))),
        })
    }
}

/// A count-like input: the only value of a one-row, one-column relation.
fn scalar_count(data: &RdData) -> Result<u64> {
    let rel = data.as_relation()?;
    match rel.rows.as_slice() {
        [row] if row.len() == 1 => {
            row[0].as_coord().ok_or_else(|| Error::Type(format!("shape value {} is not a non-negative integer", row[0])))
        }
        _ => Err(Error::Type(format!("shape input has {} rows; a single count is needed", rel.len()))),
    }
}

/// Relation/collection join: the relation side becomes documents and the
/// join runs in the document engine.
fn record_inter_join(
    left: &RdData,
    right: &RdData,
    left_alias: &str,
    right_alias: &str,
    pred: &Expr,
    output: Model,
) -> Result<RdData> {
    let as_docs = |d: &RdData| match d {
        RdData::Relation(r) => RdData::Collection(bridge::relation_to_collection(r, "relation")),
        RdData::Collection(c) => RdData::Collection(c.clone()),
    };
    let joined = rd::join(&as_docs(left), &as_docs(right), left_alias, right_alias, pred)?;
    match output {
        Model::Document => Ok(joined),
        Model::Relational => {
            let c = joined.as_collection()?;
            Ok(RdData::Relation(bridge::collection_to_relation(c, &bridge::collection_keys(c), true)?))
        }
        other => Err(Error::Spec(format!("a relation/collection join cannot produce {other} output"))),
    }
}
