//! Independent oracles and generators shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use mmdb::array::{Layout, StoredArray};
use mmdb::model::{ArrayMeta, AttrType, CellSchema, Relation, Scalar, Schema, Value, ValueType};
use mmdb::planner::{self, LogicalPlan, Model, Op, PartitionDag};
use mmdb::pool::BufferPool;
use mmdb::rd::{self, Expr, RdData, Registry};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- joins

/// A random join instance: records with unsigned columns `d0..` plus an
/// integer `tag`, and a sparse array with one float attribute `v`.
pub struct JoinInstance {
    pub records: RdData,
    pub array: StoredArray,
    pub ndim: usize,
}

pub fn dims(ndim: usize) -> Vec<String> {
    (0..ndim).map(|d| format!("d{d}")).collect()
}

/// `cell_budget` caps the expected cell count (density is lowered to fit).
pub fn join_instance(seed: u64, ndim: usize, layout: Layout, max_records: usize, cell_budget: usize, pool: Arc<BufferPool>) -> JoinInstance {
    let mut r = rng(seed);
    let size: Vec<u64> = (0..ndim).map(|_| r.gen_range(1..=match ndim { 2 => 120, 3 => 50, _ => 16 })).collect();
    let tile: Vec<u64> = size.iter().map(|&s| r.gen_range(1..=s.min(20))).collect();
    let total: u64 = size.iter().product();
    let density = (cell_budget as f64 / total as f64).min(r.gen_range(0.05..1.0));
    let meta = ArrayMeta::new(CellSchema::new(dims(ndim), vec![("v".into(), AttrType::Float)]).unwrap(), size.clone(), tile).unwrap();
    let mut cells = Vec::new();
    for idx in 0..total {
        if r.gen_bool(density) {
            let mut c = vec![0; ndim];
            let mut rest = idx;
            for d in (0..ndim).rev() {
                c[d] = rest % size[d];
                rest /= size[d];
            }
            cells.push((c, vec![Scalar::Float(r.gen_range(-1e6..1e6))]));
        }
    }
    cells.shuffle(&mut r);
    let array = StoredArray::build(meta, layout, pool, cells).unwrap();

    let n = r.gen_range(0..=max_records);
    let mut attrs: Vec<(String, ValueType)> = dims(ndim).into_iter().map(|d| (d, ValueType::UInt)).collect();
    attrs.push(("tag".into(), ValueType::Int));
    let attrs: Vec<(&str, ValueType)> = attrs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let schema = Schema::of(&attrs).unwrap();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<Value> = size
                .iter()
                // a few coordinates fall outside the array
                .map(|&s| Value::UInt(r.gen_range(0..s + s / 10 + 1)))
                .collect();
            row.push(Value::Int(i as i64));
            row
        })
        .collect();
    JoinInstance { records: RdData::Relation(Relation::new(schema, rows).unwrap()), array, ndim }
}

/// Nested-loop inner join of every record with every cell on equal
/// coordinates; rows are the record then the cell's values, sorted.
pub fn nested_loop_join(records: &RdData, cells: &[(Vec<u64>, Vec<Scalar>)], ndim: usize) -> Vec<Vec<Value>> {
    let rel = records.as_relation().unwrap();
    let mut out = Vec::new();
    for row in &rel.rows {
        for (coord, values) in cells {
            let hit = (0..ndim).all(|d| row[d] == Value::UInt(coord[d]));
            if hit {
                out.push(row.iter().cloned().chain(values.iter().map(|s| s.to_value())).collect::<Vec<_>>());
            }
        }
    }
    out.sort_by(|a, b| mmdb::model::cmp_records(a, b));
    out
}

/// Referenced tiles of an instance: tiles containing a record's
/// coordinate, for records inside the array.
pub fn referenced_tiles(records: &RdData, array: &StoredArray, ndim: usize) -> BTreeSet<usize> {
    let meta = array.meta();
    records
        .as_relation()
        .unwrap()
        .rows
        .iter()
        .filter_map(|row| {
            let c: Vec<u64> = (0..ndim).map(|d| row[d].as_coord().unwrap()).collect();
            meta.contains(&c).then(|| meta.tile_index(&meta.split(&c).0).unwrap())
        })
        .collect()
}

/// Tile reads of a one-tile cache over an access string: a read whenever
/// the tile differs from the previous access.
pub fn one_tile_cache_reads(accesses: &[usize]) -> usize {
    let mut last = None;
    let mut reads = 0;
    for &t in accesses {
        if last != Some(t) {
            reads += 1;
            last = Some(t);
        }
    }
    reads
}

// ----------------------------------------------------------------- pool

/// Straightforward LRU-with-skip model of the buffer pool: objects in a
/// vector ordered from least to most recently used.
#[derive(Debug, Default)]
pub struct LruSim {
    pub capacity: u64,
    /// (id, size, pinned)
    pub objects: Vec<(u64, u64, bool)>,
    pub evicted: Vec<u64>,
}

impl LruSim {
    pub fn new(capacity: u64) -> Self {
        LruSim { capacity, ..Default::default() }
    }

    fn used(&self) -> u64 {
        self.objects.iter().map(|o| o.1).sum()
    }

    /// Returns false when the object cannot be made to fit.
    pub fn add(&mut self, id: u64, size: u64, pinned: bool) -> bool {
        if size == 0 || size > self.capacity || self.objects.iter().any(|o| o.0 == id) {
            return false;
        }
        let mut i = 0;
        while self.capacity - self.used() < size && i < self.objects.len() {
            if self.objects[i].2 {
                i += 1;
            } else {
                let (victim, _, _) = self.objects.remove(i);
                self.evicted.push(victim);
            }
        }
        if self.capacity - self.used() < size {
            return false;
        }
        self.objects.push((id, size, pinned));
        true
    }

    pub fn touch(&mut self, id: u64) -> bool {
        match self.objects.iter().position(|o| o.0 == id) {
            Some(i) => {
                let o = self.objects.remove(i);
                self.objects.push(o);
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, id: u64) -> bool {
        match self.objects.iter().position(|o| o.0 == id) {
            Some(i) => {
                self.objects.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn set_pinned(&mut self, id: u64, pinned: bool) {
        if let Some(o) = self.objects.iter_mut().find(|o| o.0 == id) {
            o.2 = pinned;
        }
    }
}

// -------------------------------------------------------------- planner

/// Random DAG of at most `max_nodes` nodes; every node reads up to two
/// earlier nodes. Models are drawn from relational, array and inter-model.
pub fn random_dag(seed: u64, max_nodes: usize) -> LogicalPlan {
    let mut r = rng(seed);
    let n = r.gen_range(1..=max_nodes);
    let mut plan = LogicalPlan::new();
    for i in 0..n {
        let k = if i == 0 { 0 } else { r.gen_range(0..=2.min(i)) };
        let mut inputs: Vec<usize> = (0..k).map(|_| r.gen_range(0..i)).collect();
        inputs.sort();
        inputs.dedup();
        let model = [Model::Relational, Model::Array, Model::InterModel][r.gen_range(0..3)];
        let op = match model {
            Model::Relational => Op::Limit { n: i },
            Model::Array => Op::Transpose,
            _ => Op::ToRelation,
        };
        plan.add(op, model, inputs);
    }
    plan
}

fn outputs(plan: &LogicalPlan, set: &BTreeSet<usize>) -> usize {
    set.iter().filter(|&&n| !plan.nodes.iter().any(|c| set.contains(&c.id) && c.inputs.contains(&n))).count()
}

fn has_cycle(plan: &LogicalPlan, owner: &[usize]) -> bool {
    let parts: BTreeSet<usize> = owner.iter().copied().collect();
    let mut adj: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for n in &plan.nodes {
        for &i in &n.inputs {
            if owner[i] != owner[n.id] {
                adj.entry(owner[i]).or_default().insert(owner[n.id]);
            }
        }
    }
    // colour-marking DFS
    fn visit(v: usize, adj: &HashMap<usize, BTreeSet<usize>>, state: &mut HashMap<usize, u8>) -> bool {
        state.insert(v, 1);
        for &w in adj.get(&v).into_iter().flatten() {
            match state.get(&w) {
                Some(1) => return true,
                Some(_) => {}
                None => {
                    if visit(w, adj, state) {
                        return true;
                    }
                }
            }
        }
        state.insert(v, 2);
        false
    }
    let mut state = HashMap::new();
    parts.into_iter().any(|p| !state.contains_key(&p) && visit(p, &adj, &mut state))
}

/// Brute-force check of a partitioning: every node in exactly one
/// partition, one model per partition, inter-model nodes alone, exactly
/// one output node per partition, an acyclic partition graph, and no pair
/// of adjacent partitions that could still be merged.
pub fn check_partition(plan: &LogicalPlan, pd: &PartitionDag) -> Result<(), String> {
    let mut seen = vec![0usize; plan.len()];
    for (p, part) in pd.partitions.iter().enumerate() {
        for &n in &part.nodes {
            seen[n] += 1;
            if pd.node_partition[n] != p {
                return Err(format!("node {n} listed in {p} but mapped to {}", pd.node_partition[n]));
            }
            if plan.node(n).model != part.model {
                return Err(format!("partition {p} mixes models"));
            }
        }
        if part.model == Model::InterModel && part.nodes.len() != 1 {
            return Err(format!("inter-model partition {p} has {} nodes", part.nodes.len()));
        }
        let set: BTreeSet<usize> = part.nodes.iter().copied().collect();
        if outputs(plan, &set) != 1 {
            return Err(format!("partition {p} has {} output nodes", outputs(plan, &set)));
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("node conservation violated".into());
    }
    if has_cycle(plan, &pd.node_partition) {
        return Err("partition graph has a cycle".into());
    }
    for &(a, b) in &pd.edges {
        let model = pd.partitions[a].model;
        if model != pd.partitions[b].model || model == Model::InterModel {
            continue;
        }
        let merged: BTreeSet<usize> = pd.partitions[a].nodes.iter().chain(&pd.partitions[b].nodes).copied().collect();
        if outputs(plan, &merged) != 1 {
            continue;
        }
        let owner: Vec<usize> = pd.node_partition.iter().map(|&p| if p == b { a } else { p }).collect();
        if !has_cycle(plan, &owner) {
            return Err(format!("partitions {a} and {b} could still be merged"));
        }
    }
    Ok(())
}

/// Checks that `order` lists every partition once with producers first.
pub fn check_order(pd: &PartitionDag, order: &[usize]) -> Result<(), String> {
    let mut pos = vec![usize::MAX; pd.len()];
    for (i, &p) in order.iter().enumerate() {
        pos[p] = i;
    }
    if order.len() != pd.len() || pos.contains(&usize::MAX) {
        return Err("order is not a permutation".into());
    }
    match pd.edges.iter().find(|(a, b)| pos[*a] > pos[*b]) {
        Some(e) => Err(format!("edge {e:?} runs backwards")),
        None => Ok(()),
    }
}

/// Random executable relational DAG over tables `t0..t2` with columns
/// `(a, b)`; every node yields those two columns.
pub fn random_relational_dag(seed: u64, max_nodes: usize) -> LogicalPlan {
    let mut r = rng(seed);
    let n = r.gen_range(1..=max_nodes);
    let mut plan = LogicalPlan::new();
    let rel = Model::Relational;
    // join nodes are wrapped in a projection and never read directly
    let mut usable: Vec<usize> = Vec::new();
    while plan.len() < n {
        let i = plan.len();
        let avail = usable.clone();
        let pick = |r: &mut ChaCha8Rng| avail[r.gen_range(0..avail.len())];
        let choice = if i == 0 { 0 } else { r.gen_range(0..7) };
        match choice {
            0 => {
                plan.add(Op::OpenTable { name: format!("t{}", r.gen_range(0..3)) }, rel, vec![]);
            }
            1 => {
                let pred = format!("{} {} {}", ["a", "b"][r.gen_range(0..2)], [">", "<", "<=", "!="][r.gen_range(0..4)], r.gen_range(0..20));
                let input = pick(&mut r);
                plan.add(Op::Filter { pred }, rel, vec![input]);
            }
            2 => {
                let keys = vec![["a DESC", "b", "a"][r.gen_range(0..3)].to_string(), "a".into(), "b".into()];
                let input = pick(&mut r);
                plan.add(Op::Sort { keys }, rel, vec![input]);
            }
            3 => {
                let input = pick(&mut r);
                // limits follow a sort so that the kept rows are well defined
                let s = plan.add(Op::Sort { keys: vec!["a".into(), "b".into()] }, rel, vec![input]);
                plan.add(Op::Limit { n: r.gen_range(0..15) }, rel, vec![s]);
                usable.push(s);
                usable.push(s + 1);
                continue;
            }
            4 => {
                let (x, y) = (pick(&mut r), pick(&mut r));
                plan.add(Op::Union, rel, vec![x, y]);
            }
            5 => {
                let (x, y) = (pick(&mut r), pick(&mut r));
                let j = plan.add(Op::Join { pred: "l.a = r.b".into(), left_alias: "l".into(), right_alias: "r".into() }, rel, vec![x, y]);
                plan.add(Op::Project { items: vec!["a".into(), "r.a AS b".into()] }, rel, vec![j]);
                usable.push(j + 1);
                continue;
            }
            _ => {
                let input = pick(&mut r);
                plan.add(Op::Project { items: vec!["b AS a".into(), "a AS b".into()] }, rel, vec![input]);
            }
        }
        usable.push(i);
    }
    plan
}

pub fn relational_tables(seed: u64) -> HashMap<String, RdData> {
    let mut r = rng(seed);
    let schema = Schema::of(&[("a", ValueType::Int), ("b", ValueType::Int)]).unwrap();
    (0..3)
        .map(|t| {
            let rows = (0..r.gen_range(0..12)).map(|_| vec![Value::Int(r.gen_range(0..20)), Value::Int(r.gen_range(0..20))]).collect();
            (format!("t{t}"), RdData::Relation(Relation::new(schema.clone(), rows).unwrap()))
        })
        .collect()
}

/// Evaluates every node of a relational DAG directly, node by node.
pub fn reference_eval(plan: &LogicalPlan, tables: &HashMap<String, RdData>) -> Vec<RdData> {
    let mut vals: Vec<RdData> = Vec::with_capacity(plan.len());
    for node in &plan.nodes {
        let arg = |k: usize| vals[node.inputs[k]].clone();
        let v = match &node.op {
            Op::OpenTable { name } => tables[name].clone(),
            Op::Filter { pred } => rd::filter(arg(0), &Expr::parse(pred).unwrap()).unwrap(),
            Op::Sort { keys } => rd::sort(arg(0), &keys.iter().map(|k| k.parse().unwrap()).collect::<Vec<_>>()).unwrap(),
            Op::Limit { n } => rd::limit(arg(0), *n),
            Op::Union => rd::union(node.inputs.iter().map(|&i| vals[i].clone()).collect()).unwrap(),
            Op::Join { pred, left_alias, right_alias } => {
                rd::join(&arg(0), &arg(1), left_alias, right_alias, &Expr::parse(pred).unwrap()).unwrap()
            }
            Op::Project { items } => rd::project(&arg(0), &items.iter().map(|k| k.parse().unwrap()).collect::<Vec<_>>()).unwrap(),
            other => panic!("unexpected op {other:?}"),
        };
        vals.push(v);
    }
    vals
}

/// Runs each partition as its tree list then main tree and returns the
/// value of every partition output and detached node.
pub fn decomposed_eval(plan: &LogicalPlan, tables: &HashMap<String, RdData>) -> HashMap<usize, RdData> {
    let pd = planner::partition(plan).unwrap();
    let mut values: HashMap<usize, RdData> = HashMap::new();
    for p in planner::topo_order(&pd).unwrap() {
        let mut reg = Registry::new(None);
        for (name, t) in tables {
            reg.insert_base(name.clone(), t.clone());
        }
        for &n in &pd.partitions[p].nodes {
            for &i in &plan.node(n).inputs {
                if pd.node_partition[i] != p {
                    reg.insert_base(planner::node_alias(i), values[&i].clone());
                }
            }
        }
        let (main, list) = planner::dag_to_trees(plan, &pd, p).unwrap();
        for (alias, tree) in list {
            let v = rd::execute_tree(&tree, &reg).unwrap();
            let id: usize = alias.trim_start_matches('#').parse().unwrap();
            values.insert(id, v.clone());
            reg.materialize(alias, v).unwrap();
        }
        values.insert(pd.output_node(plan, p), rd::execute_tree(&main, &reg).unwrap());
    }
    values
}
