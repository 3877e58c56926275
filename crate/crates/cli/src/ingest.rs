//! Copies external files into a data directory.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mmdb::array::Layout;
use mmdb::bridge::{self, ArraySpec};
use mmdb::model::{io, ValueType};
use mmdb::pool::BufferPool;
use mmdb::rd::RdData;

use crate::bind::Kind;
use crate::error::{CliError, Result};
use crate::run::dataset_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
    /// A CSV of cells: dimension columns then attribute columns.
    Coo,
}

/// Array options for [`Format::Coo`]. Without `dims`, the leading
/// integer columns are the dimensions.
#[derive(Debug, Clone, Default)]
pub struct CooOptions {
    pub dims: Option<Vec<String>>,
    pub values: Option<Vec<String>>,
    pub size: Option<Vec<u64>>,
    pub tile: Option<Vec<u64>>,
    pub layout: Option<Layout>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

/// Reads `src` and writes dataset `name` into `dir`; returns the written
/// file.
pub fn ingest(format: Format, src: &Path, name: &str, dir: &Path, coo: &CooOptions) -> Result<PathBuf> {
    if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
        return Err(CliError::Config(format!("bad dataset name '{name}'")));
    }
    std::fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.to_path_buf(), source })?;
    match format {
        Format::Csv => {
            let rel = io::read_csv(open(src)?)?;
            let out = dataset_path(dir, name, Kind::Relation);
            io::write_csv(&rel, create(&out)?)?;
            Ok(out)
        }
        Format::Jsonl => {
            let col = io::read_jsonl(name, BufReader::new(open(src)?))?;
            let out = dataset_path(dir, name, Kind::Collection);
            io::write_jsonl(&col, create(&out)?)?;
            Ok(out)
        }
        Format::Coo => {
            let rel = io::read_csv(open(src)?)?;
            let dims = match &coo.dims {
                Some(d) => d.clone(),
                None => rel
                    .schema
                    .attrs()
                    .iter()
                    .take_while(|a| matches!(a.ty, ValueType::Int | ValueType::UInt))
                    .map(|a| a.name.clone())
                    .collect(),
            };
            let values = match &coo.values {
                Some(v) => v.clone(),
                None => rel.schema.names().filter(|n| !dims.iter().any(|d| d == n)).map(String::from).collect(),
            };
            if dims.is_empty() || values.is_empty() {
                return Err(CliError::Config("a cell file needs dimension and attribute columns".into()));
            }
            let mut spec = ArraySpec::new(dims, values);
            spec.size = coo.size.clone();
            spec.tile = coo.tile.clone();
            if let Some(l) = coo.layout {
                spec.layout = l;
            }
            let pool = Arc::new(BufferPool::new(u64::MAX));
            let array = bridge::to_array(&RdData::Relation(rel), &spec, pool)?;
            let out = dataset_path(dir, name, Kind::Array);
            array.save(&out)?;
            Ok(out)
        }
    }
}
