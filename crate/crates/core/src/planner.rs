//! Logical plans, their partitioning by data model, partition ordering, and
//! the decomposition of relational/document partitions into trees.

use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::rd::{AggSpec, Expr, ProjItem, RdPlanTree, SortKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Relational,
    Document,
    Array,
    InterModel,
}

impl Model {
    pub fn is_record(self) -> bool {
        matches!(self, Model::Relational | Model::Document)
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Relational => "relational",
            Model::Document => "document",
            Model::Array => "array",
            Model::InterModel => "inter-model",
        })
    }
}

/// A dimension length given directly or read from a count-like input (a
/// one-row, one-column relation), by index into the node's inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShapeArg {
    Const(u64),
    Input { input: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    OpenTable { name: String },
    OpenCollection { name: String },
    OpenArray { name: String },
    Filter { pred: String },
    Project { items: Vec<String> },
    Sort { keys: Vec<String> },
    Limit { n: usize },
    Aggregate { group: Vec<String>, aggs: Vec<String> },
    Count,
    Union,
    Join { pred: String, left_alias: String, right_alias: String },
    Unwind { path: String },
    Ewise { op: String },
    Matmul,
    Transpose,
    Window { radius: Vec<u64>, agg: String, attr: Option<String> },
    Subarray { lo: Vec<u64>, hi: Vec<u64> },
    ArrayAggregate { dims: Vec<String>, agg: String, attr: Option<String> },
    Rand { shape: Vec<ShapeArg>, dims: Vec<String>, attr: String, seed: u64 },
    SpatialJoin,
    ToArray { dims: Vec<String>, values: Vec<String>, shape: Option<Vec<ShapeArg>> },
    ToRelation,
    ToCollection,
    InterJoin { pred: String, left_alias: String, right_alias: String, output: Model },
}

impl Op {
    /// Short operator name used in explain output.
    pub fn name(&self) -> &'static str {
        match self {
            Op::OpenTable { .. } => "open_table",
            Op::OpenCollection { .. } => "open_collection",
            Op::OpenArray { .. } => "open_array",
            Op::Filter { .. } => "filter",
            Op::Project { .. } => "project",
            Op::Sort { .. } => "sort",
            Op::Limit { .. } => "limit",
            Op::Aggregate { .. } => "aggregate",
            Op::Count => "count",
            Op::Union => "union",
            Op::Join { .. } => "join",
            Op::Unwind { .. } => "unwind",
            Op::Ewise { .. } => "ewise",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Window { .. } => "window",
            Op::Subarray { .. } => "subarray",
            Op::ArrayAggregate { .. } => "array_aggregate",
            Op::Rand { .. } => "rand",
            Op::SpatialJoin => "spatial_join",
            Op::ToArray { .. } => "to_array",
            Op::ToRelation => "to_relation",
            Op::ToCollection => "to_collection",
            Op::InterJoin { .. } => "inter_join",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: usize,
    pub op: Op,
    pub model: Model,
    pub inputs: Vec<usize>,
}

/// Operation DAG. Node ids are creation indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogicalPlan {
    pub nodes: Vec<PlanNode>,
}

impl LogicalPlan {
    pub fn new() -> Self {
        LogicalPlan::default()
    }

    pub fn add(&mut self, op: Op, model: Model, inputs: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(PlanNode { id, op, model, inputs });
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &PlanNode {
        &self.nodes[id]
    }

    /// Consumer ids of every node, one entry per input edge, in the order
    /// the edges were created.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            for &i in &n.inputs {
                out[i].push(n.id);
            }
        }
        out
    }

    /// Checks ids, input references and acyclicity.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Plan(format!("node at position {i} has id {}", n.id)));
            }
            if let Some(bad) = n.inputs.iter().find(|&&x| x >= self.nodes.len()) {
                return Err(Error::Plan(format!("node {i} reads undefined node {bad}")));
            }
        }
        let order = topo_sort(self.nodes.len(), self.nodes.iter().flat_map(|n| n.inputs.iter().map(move |&i| (i, n.id))));
        if order.len() != self.nodes.len() {
            return Err(Error::Plan("plan contains a cycle".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<LogicalPlan> {
        let plan: LogicalPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Kahn's algorithm over `n` vertices, always taking the smallest ready
/// index. Returns fewer than `n` vertices when there is a cycle.
fn topo_sort(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, b) in edges {
        out[a].push(b);
        indeg[b] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(Reverse(w));
            }
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub model: Model,
    /// Member node ids, ascending.
    pub nodes: Vec<usize>,
}

impl Partition {
    /// Creation index: the smallest member node id.
    pub fn creation_index(&self) -> usize {
        self.nodes[0]
    }
}

/// Disjoint partitions of a plan and the edges between them. Partitions are
/// numbered by creation index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionDag {
    pub partitions: Vec<Partition>,
    /// Distinct `(producer, consumer)` partition pairs, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Partition of every plan node.
    pub node_partition: Vec<usize>,
}

impl PartitionDag {
    fn build(plan: &LogicalPlan, sets: Vec<BTreeSet<usize>>) -> PartitionDag {
        let mut sets = sets;
        sets.sort_by_key(|s| *s.iter().next().expect("non-empty partition"));
        let mut node_partition = vec![0; plan.len()];
        for (p, s) in sets.iter().enumerate() {
            for &n in s {
                node_partition[n] = p;
            }
        }
        let edges: BTreeSet<(usize, usize)> = plan
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(move |&i| (i, n.id)))
            .map(|(a, b)| (node_partition[a], node_partition[b]))
            .filter(|(a, b)| a != b)
            .collect();
        let partitions = sets
            .into_iter()
            .map(|s| Partition { model: plan.node(*s.iter().next().unwrap()).model, nodes: s.into_iter().collect() })
            .collect();
        PartitionDag { partitions, edges: edges.into_iter().collect(), node_partition }
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Nodes of partition `p` with no consumer inside `p`.
    pub fn output_nodes(&self, plan: &LogicalPlan, p: usize) -> Vec<usize> {
        output_nodes(plan, &self.partitions[p].nodes.iter().copied().collect())
    }

    /// The single output node of partition `p`.
    pub fn output_node(&self, plan: &LogicalPlan, p: usize) -> usize {
        *self.output_nodes(plan, p).last().expect("partition has an output")
    }

    /// Nodes of partition `p` whose value is needed by another partition.
    pub fn exported_nodes(&self, plan: &LogicalPlan, p: usize) -> Vec<usize> {
        let consumers = plan.consumers();
        self.partitions[p]
            .nodes
            .iter()
            .copied()
            .filter(|&n| consumers[n].iter().any(|&c| self.node_partition[c] != p))
            .collect()
    }
}

fn output_nodes(plan: &LogicalPlan, set: &BTreeSet<usize>) -> Vec<usize> {
    let consumers = plan.consumers();
    set.iter().copied().filter(|&n| !consumers[n].iter().any(|c| set.contains(c))).collect()
}

/// Working state of the merge: partitions keyed by representative.
struct Merger<'a> {
    plan: &'a LogicalPlan,
    consumers: Vec<Vec<usize>>,
    owner: Vec<usize>,
    members: HashMap<usize, BTreeSet<usize>>,
}

impl Merger<'_> {
    /// Consumer partitions of `p`, ordered by the creation order of the
    /// edges leaving it.
    fn consumer_parts(&self, p: usize) -> Vec<usize> {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &n in &self.members[&p] {
            for &c in &self.consumers[n] {
                if self.owner[c] != p {
                    edges.push((c, self.owner[c]));
                }
            }
        }
        edges.sort();
        let mut seen = BTreeSet::new();
        edges.into_iter().filter(|(_, q)| seen.insert(*q)).map(|(_, q)| q).collect()
    }

    fn producer_parts(&self, p: usize) -> BTreeSet<usize> {
        self.members[&p]
            .iter()
            .flat_map(|&n| self.plan.node(n).inputs.iter().map(|&i| self.owner[i]))
            .filter(|&q| q != p)
            .collect()
    }

    /// Whether `to` is reachable from `from` in the partition graph without
    /// using the direct edge `from -> to`.
    fn indirect_path(&self, from: usize, to: usize) -> bool {
        let mut stack: Vec<usize> = self.consumer_parts(from).into_iter().filter(|&q| q != to).collect();
        let mut seen: BTreeSet<usize> = stack.iter().copied().collect();
        while let Some(q) = stack.pop() {
            if q == to {
                return true;
            }
            for r in self.consumer_parts(q) {
                if seen.insert(r) {
                    stack.push(r);
                }
            }
        }
        false
    }

    fn can_merge(&self, p: usize, c: usize) -> bool {
        let model = self.plan.node(p).model;
        // condition 1, with inter-model operations always kept alone
        if model == Model::InterModel || self.plan.node(c).model != model {
            return false;
        }
        // condition 2
        let union: BTreeSet<usize> = self.members[&p].union(&self.members[&c]).copied().collect();
        if output_nodes(self.plan, &union).len() != 1 {
            return false;
        }
        // condition 3: p -> c is a direct edge, so a cycle appears exactly
        // when some other path leads from one to the other
        !self.indirect_path(p, c) && !self.indirect_path(c, p)
    }

    fn merge(&mut self, p: usize, c: usize) {
        let moved = self.members.remove(&c).expect("live partition");
        for &n in &moved {
            self.owner[n] = p;
        }
        self.members.get_mut(&p).expect("live partition").extend(moved);
    }

    /// Depth-first pass; returns whether anything merged.
    fn dfs(&mut self, p: usize, visited: &mut BTreeSet<usize>) -> bool {
        let mut merged = false;
        let p = self.owner[p];
        if !visited.insert(p) {
            return false;
        }
        loop {
            let next = self.consumer_parts(p).into_iter().find(|&c| self.can_merge(p, c));
            match next {
                Some(c) => {
                    self.merge(p, c);
                    merged = true;
                }
                None => break,
            }
        }
        for c in self.consumer_parts(p) {
            merged |= self.dfs(c, visited);
        }
        merged
    }
}

/// Partitions a plan by data model with bottom-up merging: starting from
/// singleton partitions, a depth-first traversal from the partitions without
/// producers merges a partition with a consumer partition whenever both hold
/// operations of the same model, the merged partition has exactly one output
/// node, and the partition graph stays acyclic. Passes repeat until no merge
/// applies. Inter-model operations stay in singleton partitions.
pub fn partition(plan: &LogicalPlan) -> Result<PartitionDag> {
    plan.validate()?;
    let mut m = Merger {
        plan,
        consumers: plan.consumers(),
        owner: (0..plan.len()).collect(),
        members: (0..plan.len()).map(|i| (i, BTreeSet::from([i]))).collect(),
    };
    loop {
        let mut reps: Vec<usize> = m.members.keys().copied().collect();
        reps.sort_by_key(|r| *m.members[r].iter().next().unwrap());
        let roots: Vec<usize> = reps.into_iter().filter(|&r| m.producer_parts(r).is_empty()).collect();
        let mut visited = BTreeSet::new();
        let mut merged = false;
        for r in roots {
            merged |= m.dfs(r, &mut visited);
        }
        if !merged {
            break;
        }
    }
    Ok(PartitionDag::build(plan, m.members.into_values().collect()))
}

/// Execution order of partitions: producers before consumers, ties broken
/// by creation index.
pub fn topo_order(pd: &PartitionDag) -> Result<Vec<usize>> {
    let order = topo_sort(pd.len(), pd.edges.iter().copied());
    if order.len() != pd.len() {
        return Err(Error::Internal("partition graph has a cycle".into()));
    }
    Ok(order)
}

/// Registry name of a node's materialized value.
pub fn node_alias(id: usize) -> String {
    format!("#{id}")
}

/// Converts a relational/document partition into a main tree plus a list
/// of detached trees to run (and materialize under [`node_alias`]) first.
/// Nodes are visited bottom-up; a node with more than one consumer at
/// visit time (consumers inside the partition, plus one if another
/// partition reads it) is detached and replaced by alias references.
/// Inputs from other partitions become alias references too.
pub fn dag_to_trees(plan: &LogicalPlan, pd: &PartitionDag, p: usize) -> Result<(RdPlanTree, Vec<(String, RdPlanTree)>)> {
    let part = &pd.partitions[p];
    if !part.model.is_record() {
        return Err(Error::Plan(format!("partition {p} is a {} partition", part.model)));
    }
    let members: BTreeSet<usize> = part.nodes.iter().copied().collect();
    let output = pd.output_node(plan, p);
    let exported: BTreeSet<usize> = pd.exported_nodes(plan, p).into_iter().collect();
    let consumers = plan.consumers();
    let internal_edges = part.nodes.iter().flat_map(|&n| plan.node(n).inputs.iter().filter(|i| members.contains(i)).map(move |&i| (i, n)));
    let index: HashMap<usize, usize> = part.nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let order: Vec<usize> = topo_sort(part.nodes.len(), internal_edges.map(|(a, b)| (index[&a], index[&b])))
        .into_iter()
        .map(|k| part.nodes[k])
        .collect();

    let mut built: HashMap<usize, RdPlanTree> = HashMap::new();
    let mut detached: BTreeSet<usize> = BTreeSet::new();
    let mut list = Vec::new();
    for &n in &order {
        let node = plan.node(n);
        let mut children = Vec::with_capacity(node.inputs.len());
        for &i in &node.inputs {
            if !members.contains(&i) || detached.contains(&i) {
                children.push(RdPlanTree::AliasRef(node_alias(i)));
            } else {
                let tree = built.remove(&i).ok_or_else(|| Error::Internal(format!("node {i} consumed twice")))?;
                children.push(tree);
            }
        }
        let tree = rd_node(&node.op, children)?;
        let count = consumers[n].iter().filter(|c| members.contains(c)).count() + usize::from(exported.contains(&n) && n != output);
        if n != output && count > 1 {
            list.push((node_alias(n), tree));
            detached.insert(n);
        } else {
            built.insert(n, tree);
        }
    }
    let main = built.remove(&output).ok_or_else(|| Error::Internal("output node not built".into()))?;
    if !built.is_empty() {
        return Err(Error::Internal(format!("unconsumed nodes {:?} in partition {p}", built.keys().collect::<Vec<_>>())));
    }
    Ok((main, list))
}

/// Builds the relational/document operator for `op` over `children`.
pub fn rd_node(op: &Op, mut children: Vec<RdPlanTree>) -> Result<RdPlanTree> {
    let arity = |n: usize, children: &Vec<RdPlanTree>| -> Result<()> {
        if children.len() != n {
            return Err(Error::Plan(format!("{} takes {n} inputs, got {}", op.name(), children.len())));
        }
        Ok(())
    };
    let one = |children: &mut Vec<RdPlanTree>| -> Result<Box<RdPlanTree>> {
        arity(1, children)?;
        Ok(Box::new(children.pop().expect("one child")))
    };
    Ok(match op {
        Op::OpenTable { name } | Op::OpenCollection { name } => {
            arity(0, &children)?;
            RdPlanTree::Scan(name.clone())
        }
        Op::Filter { pred } => RdPlanTree::Filter { input: one(&mut children)?, pred: Expr::parse(pred)? },
        Op::Project { items } => RdPlanTree::Project {
            input: one(&mut children)?,
            items: items.iter().map(|s| s.parse()).collect::<Result<Vec<ProjItem>>>()?,
        },
        Op::Sort { keys } => RdPlanTree::Sort {
            input: one(&mut children)?,
            keys: keys.iter().map(|s| s.parse()).collect::<Result<Vec<SortKey>>>()?,
        },
        Op::Limit { n } => RdPlanTree::Limit { input: one(&mut children)?, n: *n },
        Op::Aggregate { group, aggs } => RdPlanTree::Aggregate {
            input: one(&mut children)?,
            group: group.clone(),
            aggs: aggs.iter().map(|s| s.parse()).collect::<Result<Vec<AggSpec>>>()?,
        },
        Op::Count => RdPlanTree::Aggregate { input: one(&mut children)?, group: vec![], aggs: vec![AggSpec::count_all()] },
        Op::Union => {
            if children.is_empty() {
                return Err(Error::Plan("union takes at least one input".into()));
            }
            RdPlanTree::Union { inputs: children }
        }
        Op::Join { pred, left_alias, right_alias } => {
            arity(2, &children)?;
            let right = Box::new(children.pop().unwrap());
            let left = Box::new(children.pop().unwrap());
            RdPlanTree::Join { left, right, left_alias: left_alias.clone(), right_alias: right_alias.clone(), pred: Expr::parse(pred)? }
        }
        Op::Unwind { path } => RdPlanTree::Unwind { input: one(&mut children)?, path: path.clone() },
        other => return Err(Error::Plan(format!("{} is not a relational/document operation", other.name()))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> LogicalPlan {
        let mut plan = LogicalPlan::new();
        let mut prev = plan.add(Op::OpenTable { name: "t".into() }, Model::Relational, vec![]);
        for i in 1..n {
            prev = plan.add(Op::Limit { n: i }, Model::Relational, vec![prev]);
        }
        plan
    }

    #[test]
    fn linear_chain_is_one_partition() {
        let plan = chain(5);
        let pd = partition(&plan).unwrap();
        assert_eq!(pd.len(), 1);
        assert_eq!(topo_order(&pd).unwrap(), vec![0]);
        let (main, list) = dag_to_trees(&plan, &pd, 0).unwrap();
        assert!(list.is_empty());
        assert_eq!(main.node_count(), 5);
    }

    #[test]
    fn inter_model_nodes_stay_alone() {
        let mut plan = LogicalPlan::new();
        let a = plan.add(Op::OpenCollection { name: "c".into() }, Model::Document, vec![]);
        let b = plan.add(Op::ToArray { dims: vec!["x".into()], values: vec![], shape: None }, Model::InterModel, vec![a]);
        let c = plan.add(Op::ToRelation, Model::InterModel, vec![b]);
        plan.add(Op::Limit { n: 1 }, Model::Relational, vec![c]);
        let pd = partition(&plan).unwrap();
        assert_eq!(pd.len(), 4);
        assert_eq!(pd.edges, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn diamond_orders_source_first_and_sink_last() {
        let mut plan = LogicalPlan::new();
        let s = plan.add(Op::OpenTable { name: "t".into() }, Model::Relational, vec![]);
        let l = plan.add(Op::ToArray { dims: vec![], values: vec![], shape: None }, Model::InterModel, vec![s]);
        let r = plan.add(Op::ToCollection, Model::InterModel, vec![s]);
        plan.add(Op::InterJoin { pred: String::new(), left_alias: "a".into(), right_alias: "b".into(), output: Model::Relational }, Model::InterModel, vec![l, r]);
        let pd = partition(&plan).unwrap();
        assert_eq!(topo_order(&pd).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn shared_scan_is_detached_once() {
        let mut plan = LogicalPlan::new();
        let scan = plan.add(Op::OpenTable { name: "t".into() }, Model::Relational, vec![]);
        let other = plan.add(Op::OpenTable { name: "u".into() }, Model::Relational, vec![]);
        let j1 = plan.add(Op::Join { pred: "t.a = u.a".into(), left_alias: "t".into(), right_alias: "u".into() }, Model::Relational, vec![scan, other]);
        let j2 = plan.add(Op::Join { pred: "l.a = t.a".into(), left_alias: "l".into(), right_alias: "t".into() }, Model::Relational, vec![j1, scan]);
        let pd = partition(&plan).unwrap();
        assert_eq!(pd.len(), 1);
        assert_eq!(pd.output_node(&plan, 0), j2);
        let (main, list) = dag_to_trees(&plan, &pd, 0).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0], (node_alias(scan), RdPlanTree::Scan("t".into())));
        assert_eq!(main.alias_refs(), vec!["#0", "#0"]);
    }

    #[test]
    fn cycles_are_rejected() {
        let mut plan = chain(2);
        plan.nodes[0].inputs.push(1);
        assert!(matches!(partition(&plan), Err(Error::Plan(_))));
    }

    #[test]
    fn plan_json_roundtrip() {
        let mut plan = chain(3);
        plan.add(
            Op::Rand { shape: vec![ShapeArg::Input { input: 0 }, ShapeArg::Const(2)], dims: vec!["i".into(), "j".into()], attr: "v".into(), seed: 7 },
            Model::Array,
            vec![2],
        );
        let text = plan.to_json();
        assert!(text.contains("\"kind\": \"rand\""));
        assert_eq!(LogicalPlan::from_json(&text).unwrap(), plan);
    }
}
