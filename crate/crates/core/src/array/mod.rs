mod store;
mod tile;

pub use store::{PinnedTile, StoredArray, TileWriter, MAGIC, VERSION};
pub use tile::{Column, Layout, LocalCell, Tile};

pub(crate) use tile::{delinearize, linearize};

use std::io::Read;
use std::sync::Arc;

use crate::model::{ArrayMeta, AttrType, CellSchema, Scalar};
use crate::pool::BufferPool;
use crate::{Error, Result};

/// Reads a COO CSV (columns `dim_0..dim_{d-1}` followed by attribute columns)
/// into an array. The header names the dimensions and attributes; attribute
/// columns are integer if every value parses as `i64`, else float. `size`
/// defaults to one past the largest coordinate in each dimension.
pub fn read_coo_csv<R: Read>(
    reader: R,
    ndim: usize,
    size: Option<Vec<u64>>,
    tile_extent: u64,
    layout: Layout,
    pool: Arc<BufferPool>,
) -> Result<StoredArray> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < ndim || ndim == 0 {
        return Err(Error::Schema(format!("COO file has {} columns, need at least {ndim}", header.len())));
    }
    let mut coords = Vec::new();
    let mut raw = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let coord = rec
            .iter()
            .take(ndim)
            .map(|f| f.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<u64>, _>>()
            .map_err(|e| Error::parse(line + 2, 1, format!("bad coordinate: {e}")))?;
        coords.push(coord);
        raw.push(rec.iter().skip(ndim).map(str::to_string).collect::<Vec<_>>());
    }
    let nattrs = header.len() - ndim;
    let types: Vec<AttrType> = (0..nattrs)
        .map(|a| {
            if raw.iter().all(|r| r[a].trim().parse::<i64>().is_ok()) {
                AttrType::Int
            } else {
                AttrType::Float
            }
        })
        .collect();
    let schema = CellSchema::new(
        header[..ndim].to_vec(),
        header[ndim..].iter().cloned().zip(types.iter().copied()).collect(),
    )?;
    let size = match size {
        Some(s) => s,
        None => (0..ndim).map(|i| coords.iter().map(|c| c[i] + 1).max().unwrap_or(1)).collect(),
    };
    let meta = ArrayMeta::with_default_tiles(schema, size, tile_extent)?;
    let mut cells = Vec::with_capacity(coords.len());
    for (line, (coord, fields)) in coords.into_iter().zip(raw).enumerate() {
        let values = fields
            .iter()
            .zip(&types)
            .map(|(f, ty)| match ty {
                AttrType::Int => Ok(Scalar::Int(f.trim().parse().expect("checked above"))),
                _ => f.trim().parse::<f64>().map(Scalar::Float).map_err(|e| Error::parse(line + 2, 1, e.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push((coord, values));
    }
    StoredArray::build(meta, layout.for_ndim(ndim), pool, cells)
}

/// Writes an array as COO CSV, cells in tile-major order.
pub fn write_coo_csv<W: std::io::Write>(array: &StoredArray, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = array.schema();
    w.write_record(schema.dims().iter().chain(schema.attrs().iter().map(|(n, _)| n)))?;
    for (coord, values) in array.cells()? {
        let mut row: Vec<String> = coord.iter().map(u64::to_string).collect();
        row.extend(values.iter().map(|v| v.to_value().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
