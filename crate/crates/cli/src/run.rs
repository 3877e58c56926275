//! Script execution against a data directory.
//!
//! A data directory holds one file per dataset: `<name>.csv` for tables,
//! `<name>.jsonl` for collections and `<name>.array` for arrays.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mmdb::array::StoredArray;
use mmdb::bridge;
use mmdb::exec::{self, Catalog, ExecConfig, ExecResult, NodeValue};
use mmdb::model::io;
use mmdb::planner::{self, LogicalPlan};
use mmdb::pool::BufferPool;
use mmdb::rd::RdData;
use serde_json::json;

use crate::bind::{self, Bound, Kind};
use crate::error::{CliError, Result};
use crate::script;

pub const DEFAULT_BUFFER_BYTES: u64 = 256 << 20;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub buffer_bytes: u64,
    pub exec: ExecConfig,
}

impl RunConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        RunConfig { data_dir: data_dir.into(), buffer_bytes: DEFAULT_BUFFER_BYTES, exec: ExecConfig::default() }
    }
}

pub fn compile(src: &str) -> Result<Bound> {
    bind::bind(&script::parse(src)?)
}

/// Plan, target and partitioning as JSON. The `plan` member is in the
/// planner's plan format.
pub fn explain(bound: &Bound) -> Result<serde_json::Value> {
    let pd = planner::partition(&bound.plan)?;
    let order = planner::topo_order(&pd)?;
    let plan: serde_json::Value = serde_json::from_str(&bound.plan.to_json())?;
    let partitions: Vec<_> = pd
        .partitions
        .iter()
        .enumerate()
        .map(|(i, p)| json!({ "id": i, "model": p.model, "nodes": p.nodes, "output": pd.output_node(&bound.plan, i) }))
        .collect();
    Ok(json!({
        "plan": plan,
        "target": bound.target,
        "partitions": partitions,
        "edges": pd.edges,
        "order": order,
    }))
}

/// Reads the plan back out of [`explain`] output.
pub fn plan_from_explain(text: &str) -> Result<LogicalPlan> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let plan = v.get("plan").ok_or_else(|| CliError::Config("explain output has no plan".into()))?;
    Ok(LogicalPlan::from_json(&plan.to_string())?)
}

pub fn dataset_path(dir: &Path, name: &str, kind: Kind) -> PathBuf {
    let ext = match kind {
        Kind::Relation => "csv",
        Kind::Collection => "jsonl",
        Kind::Array => "array",
    };
    dir.join(format!("{name}.{ext}"))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

/// Loads the datasets a script opens.
pub fn load_catalog(bound: &Bound, dir: &Path, pool: &Arc<BufferPool>) -> Result<Catalog> {
    let mut catalog = Catalog::new();
    for (name, kind) in &bound.datasets {
        let path = dataset_path(dir, name, *kind);
        if !path.is_file() {
            return Err(CliError::MissingDataset(name.clone()));
        }
        match kind {
            Kind::Relation => catalog.add_relation(name.clone(), io::read_csv(open(&path)?)?),
            Kind::Collection => catalog.add_collection(name.clone(), io::read_jsonl(name, BufReader::new(open(&path)?))?),
            Kind::Array => catalog.add_array(name.clone(), StoredArray::open(&path, pool.clone())?),
        }
    }
    Ok(catalog)
}

pub struct RunOutput {
    pub bound: Bound,
    pub result: ExecResult,
}

pub fn run_source(src: &str, config: &RunConfig) -> Result<RunOutput> {
    let bound = compile(src)?;
    let pool = Arc::new(BufferPool::new(config.buffer_bytes));
    let catalog = load_catalog(&bound, &config.data_dir, &pool)?;
    let result = exec::execute(&bound.plan, bound.target, &catalog, &pool, &config.exec)?;
    Ok(RunOutput { bound, result })
}

pub fn run_script(path: &Path, config: &RunConfig) -> Result<RunOutput> {
    let src = std::fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })?;
    run_source(&src, config)
}

/// Relations as CSV, collections as JSON lines, arrays as one CSV row
/// per cell.
pub fn write_value<W: Write>(value: &NodeValue, out: W) -> Result<()> {
    match value {
        NodeValue::Rd(d) => match &**d {
            RdData::Relation(r) => io::write_csv(r, out)?,
            RdData::Collection(c) => io::write_jsonl(c, out)?,
        },
        NodeValue::Array(a) => io::write_csv(&bridge::to_relation(a)?, out)?,
    }
    Ok(())
}
