//! Array operators evaluated tile by tile over [`StoredArray`]s.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{linearize, Column, Layout, LocalCell, StoredArray, Tile};
use crate::model::{ArrayMeta, AttrType, CellSchema, Scalar};
use crate::pool::BufferPool;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
            ArithOp::Mul => a * b,
            ArithOp::Div => a / b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

impl std::str::FromStr for ArithOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" => Ok(ArithOp::Add),
            "-" => Ok(ArithOp::Sub),
            "*" => Ok(ArithOp::Mul),
            "/" => Ok(ArithOp::Div),
            _ => Err(Error::Spec(format!("unknown arithmetic operator '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellAgg {
    Sum,
    Avg,
    Min,
    Max,
    Count,
}

impl std::str::FromStr for CellAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(CellAgg::Sum),
            "avg" => Ok(CellAgg::Avg),
            "min" => Ok(CellAgg::Min),
            "max" => Ok(CellAgg::Max),
            "count" => Ok(CellAgg::Count),
            other => Err(Error::Spec(format!("unknown aggregate '{other}'"))),
        }
    }
}

/// Running state of one aggregate.
#[derive(Debug, Clone, Copy)]
struct Acc {
    sum: f64,
    count: u64,
    min: f64,
    max: f64,
}

impl Acc {
    const EMPTY: Acc = Acc { sum: 0.0, count: 0, min: f64::INFINITY, max: f64::NEG_INFINITY };

    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn finish(&self, agg: CellAgg) -> f64 {
        match agg {
            CellAgg::Sum => self.sum,
            CellAgg::Avg => self.sum / self.count as f64,
            CellAgg::Min => self.min,
            CellAgg::Max => self.max,
            CellAgg::Count => self.count as f64,
        }
    }
}

fn single_attr(a: &StoredArray, what: &str) -> Result<String> {
    match a.schema().attrs() {
        [(name, _)] => Ok(name.clone()),
        attrs => Err(Error::Shape(format!("{what} needs a single-attribute array, got {} attributes", attrs.len()))),
    }
}

fn attr_pos(a: &StoredArray, attr: Option<&str>) -> Result<usize> {
    match attr {
        Some(name) => a.schema().attr_index(name).ok_or_else(|| Error::Schema(format!("no attribute '{name}'"))),
        None if a.schema().nattrs() > 0 => Ok(0),
        None => Err(Error::Schema("array has no attributes".into())),
    }
}

fn float_schema(dims: Vec<String>, attr: String) -> Result<CellSchema> {
    CellSchema::new(dims, vec![(attr, AttrType::Float)])
}

/// Writes a dense single-attribute float tile; positions outside the array
/// (in edge tiles) stay invalid.
fn put_dense(out: &StoredArray, tc: &[u64], values: Vec<f64>, valid: Vec<bool>) -> Result<()> {
    let tile = Tile::dense(tc.to_vec(), out.meta().tile_size().to_vec(), valid, vec![Column::Float(values)])?;
    out.put_tile(&tile)
}

/// Validity mask of the in-array positions of tile `tc`.
fn in_bounds_mask(meta: &ArrayMeta, tc: &[u64]) -> Vec<bool> {
    let ts = meta.tile_size();
    let n = meta.tile_cells();
    (0..n)
        .map(|pos| {
            let cc = crate::array::delinearize(pos, ts);
            meta.contains(&meta.join(tc, &cc))
        })
        .collect()
}

fn tile_cells_f64(tile: &Tile, attr: usize) -> Vec<(Vec<u64>, f64)> {
    tile.cells().into_iter().map(|(cc, pos)| (cc, tile.columns()[attr].get_f64(pos))).collect()
}

/// Element-wise arithmetic of two single-attribute arrays with identical
/// size and tiling. A missing cell counts as 0 for `+ - *` (output covers
/// the union of cells); for `/` the output only has cells where the divisor
/// has one. The result is a float array named after `a`'s attribute, in
/// `a`'s layout.
pub fn ewise(op: ArithOp, a: &StoredArray, b: &StoredArray) -> Result<StoredArray> {
    if a.meta().size() != b.meta().size() || a.meta().tile_size() != b.meta().tile_size() {
        return Err(Error::Shape(format!(
            "element-wise {} of {:?} (tiles {:?}) and {:?} (tiles {:?})",
            op.symbol(),
            a.meta().size(),
            a.meta().tile_size(),
            b.meta().size(),
            b.meta().tile_size()
        )));
    }
    let name = single_attr(a, "element-wise arithmetic")?;
    single_attr(b, "element-wise arithmetic")?;
    let meta = ArrayMeta::new(
        float_schema(a.schema().dims().to_vec(), name)?,
        a.meta().size().to_vec(),
        a.meta().tile_size().to_vec(),
    )?;
    let out = StoredArray::create(meta, a.layout(), a.pool().clone())?;
    for idx in 0..a.meta().tile_count() {
        let tc = a.meta().tile_coord(idx);
        if !a.has_tile(&tc)? && !b.has_tile(&tc)? {
            continue;
        }
        let mut cells: BTreeMap<Vec<u64>, (Option<f64>, Option<f64>)> = BTreeMap::new();
        {
            let ta = a.pin(&tc)?;
            for (cc, v) in tile_cells_f64(&ta, 0) {
                cells.entry(cc).or_default().0 = Some(v);
            }
        }
        {
            let tb = b.pin(&tc)?;
            for (cc, v) in tile_cells_f64(&tb, 0) {
                cells.entry(cc).or_default().1 = Some(v);
            }
        }
        let local: Vec<LocalCell> = cells
            .into_iter()
            .filter_map(|(cc, (x, y))| match (op, y) {
                (ArithOp::Div, None) => None,
                _ => Some((cc, vec![Scalar::Float(op.apply(x.unwrap_or(0.0), y.unwrap_or(0.0)))])),
            })
            .collect();
        out.write_tile(&tc, local)?;
    }
    Ok(out)
}

/// Copies the first attribute of a 2-d array's tiles covering rows
/// `rows` and columns `cols` into a row-major dense buffer. Missing cells
/// are 0.
fn dense_block(a: &StoredArray, rows: std::ops::Range<u64>, cols: std::ops::Range<u64>) -> Result<Vec<f64>> {
    let meta = a.meta();
    let ts = meta.tile_size();
    let width = (cols.end - cols.start) as usize;
    let mut buf = vec![0.0; (rows.end - rows.start) as usize * width];
    for tr in rows.start / ts[0]..rows.end.div_ceil(ts[0]) {
        for tcol in cols.start / ts[1]..cols.end.div_ceil(ts[1]) {
            let tc = [tr, tcol];
            if !a.has_tile(&tc)? {
                continue;
            }
            let tile = a.pin(&tc)?;
            for (cc, v) in tile_cells_f64(&tile, 0) {
                let g = meta.join(&tc, &cc);
                if rows.contains(&g[0]) && cols.contains(&g[1]) {
                    buf[(g[0] - rows.start) as usize * width + (g[1] - cols.start) as usize] = v;
                }
            }
        }
    }
    Ok(buf)
}

/// Matrix product of two single-attribute 2-d arrays. Missing cells are 0.
/// The result is dense, tiled `(TS(a)_0, TS(b)_1)`, with dimensions
/// `(a.dim_0, b.dim_1)`. Each output value sums `k` in ascending order
/// starting from 0.0.
pub fn matmul(a: &StoredArray, b: &StoredArray) -> Result<StoredArray> {
    let (ma, mb) = (a.meta(), b.meta());
    if ma.ndim() != 2 || mb.ndim() != 2 || ma.size()[1] != mb.size()[0] {
        return Err(Error::Shape(format!("cannot multiply {:?} by {:?}", ma.size(), mb.size())));
    }
    let name = single_attr(a, "matmul")?;
    single_attr(b, "matmul")?;
    let mut dims = vec![a.schema().dims()[0].clone(), b.schema().dims()[1].clone()];
    if dims[0] == dims[1] {
        dims[1].push_str("_r");
    }
    let (n, k, m) = (ma.size()[0], ma.size()[1], mb.size()[1]);
    let meta = ArrayMeta::new(float_schema(dims, name)?, vec![n, m], vec![ma.tile_size()[0], mb.tile_size()[1]])?;
    let out = StoredArray::create(meta.clone(), Layout::Dense, a.pool().clone())?;
    let (ts0, ts1) = (meta.tile_size()[0], meta.tile_size()[1]);
    let kk = k as usize;
    for ti in 0..meta.grid()[0] {
        let rows = ti * ts0..((ti + 1) * ts0).min(n);
        let a_band = dense_block(a, rows.clone(), 0..k)?;
        for tj in 0..meta.grid()[1] {
            let cols = tj * ts1..((tj + 1) * ts1).min(m);
            let width = (cols.end - cols.start) as usize;
            let b_band = dense_block(b, 0..k, cols.clone())?;
            let mut values = vec![0.0; (ts0 * ts1) as usize];
            let mut valid = vec![false; values.len()];
            for r in 0..(rows.end - rows.start) as usize {
                for c in 0..width {
                    let mut s = 0.0;
                    for x in 0..kk {
                        s += a_band[r * kk + x] * b_band[x * width + c];
                    }
                    let pos = r * ts1 as usize + c;
                    values[pos] = s;
                    valid[pos] = true;
                }
            }
            put_dense(&out, &[ti, tj], values, valid)?;
        }
    }
    Ok(out)
}

/// Swaps the two coordinates of every cell, and the dimension names and
/// tile sizes with them.
pub fn transpose(a: &StoredArray) -> Result<StoredArray> {
    let m = a.meta();
    if m.ndim() != 2 {
        return Err(Error::Shape(format!("transpose needs a 2-d array, got {} dims", m.ndim())));
    }
    let dims = vec![a.schema().dims()[1].clone(), a.schema().dims()[0].clone()];
    let schema = CellSchema::new(dims, a.schema().attrs().to_vec())?;
    let meta = ArrayMeta::new(schema, vec![m.size()[1], m.size()[0]], vec![m.tile_size()[1], m.tile_size()[0]])?;
    let out = StoredArray::create(meta, a.layout(), a.pool().clone())?;
    for idx in 0..m.tile_count() {
        let tc = m.tile_coord(idx);
        if !a.has_tile(&tc)? {
            continue;
        }
        let cells: Vec<LocalCell> =
            a.pin(&tc)?.local_cells().into_iter().map(|(cc, v)| (vec![cc[1], cc[0]], v)).collect();
        out.write_tile(&[tc[1], tc[0]], cells)?;
    }
    Ok(out)
}

/// Aggregates, for every position, the cells of `attr` within `radius`
/// along each dimension, clipped to the array bounds. An output cell exists
/// where its neighborhood contains at least one cell.
pub fn window(a: &StoredArray, radius: &[u64], agg: CellAgg, attr: Option<&str>) -> Result<StoredArray> {
    let m = a.meta();
    if radius.len() != m.ndim() {
        return Err(Error::Shape(format!("{} radii for a {}-d array", radius.len(), m.ndim())));
    }
    let ai = attr_pos(a, attr)?;
    let name = a.schema().attrs()[ai].0.clone();
    let meta = ArrayMeta::new(float_schema(a.schema().dims().to_vec(), name)?, m.size().to_vec(), m.tile_size().to_vec())?;
    let out = StoredArray::create(meta, a.layout(), a.pool().clone())?;
    let ts = m.tile_size();
    let grid = m.grid();
    for idx in 0..m.tile_count() {
        let tc = m.tile_coord(idx);
        let lo: Vec<u64> = tc.iter().zip(ts).map(|(t, s)| t * s).collect();
        let hi: Vec<u64> = (0..m.ndim()).map(|i| ((tc[i] + 1) * ts[i]).min(m.size()[i])).collect();
        let mut accs = vec![Acc::EMPTY; m.tile_cells()];
        // input tiles overlapping the output tile grown by the radius
        let in_lo: Vec<u64> = (0..m.ndim()).map(|i| lo[i].saturating_sub(radius[i]) / ts[i]).collect();
        let in_hi: Vec<u64> =
            (0..m.ndim()).map(|i| ((hi[i] - 1 + radius[i]) / ts[i]).min(grid[i] - 1)).collect();
        for_each_in_box(&in_lo, &in_hi, |itc| {
            if !a.has_tile(itc)? {
                return Ok(());
            }
            let tile = a.pin(itc)?;
            for (cc, v) in tile_cells_f64(&tile, ai) {
                let g = m.join(itc, &cc);
                let olo: Vec<u64> = (0..g.len()).map(|i| g[i].saturating_sub(radius[i]).max(lo[i])).collect();
                let ohi: Vec<u64> = (0..g.len()).map(|i| (g[i] + radius[i]).min(hi[i] - 1)).collect();
                if olo.iter().zip(&ohi).any(|(l, h)| l > h) {
                    continue;
                }
                for_each_in_box(&olo, &ohi, |o| {
                    let local: Vec<u64> = o.iter().zip(&lo).map(|(x, l)| x - l).collect();
                    accs[linearize(&local, ts)].add(v);
                    Ok(())
                })?;
            }
            Ok(())
        })?;
        let cells: Vec<LocalCell> = accs
            .iter()
            .enumerate()
            .filter(|(_, acc)| acc.count > 0)
            .map(|(pos, acc)| (crate::array::delinearize(pos, ts), vec![Scalar::Float(acc.finish(agg))]))
            .collect();
        out.write_tile(&tc, cells)?;
    }
    Ok(out)
}

/// Calls `f` for every coordinate in the inclusive box `[lo, hi]`, row-major.
fn for_each_in_box(lo: &[u64], hi: &[u64], mut f: impl FnMut(&[u64]) -> Result<()>) -> Result<()> {
    let mut cur = lo.to_vec();
    loop {
        f(&cur)?;
        let mut i = cur.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if cur[i] < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i];
        }
    }
}

/// Cells with `lo <= coord < hi`, shifted so that `lo` becomes the origin.
/// Tile sizes are kept, clipped to the new size.
pub fn subarray(a: &StoredArray, lo: &[u64], hi: &[u64]) -> Result<StoredArray> {
    let m = a.meta();
    if lo.len() != m.ndim() || hi.len() != m.ndim() {
        return Err(Error::Shape(format!("subarray bounds of rank {} / {} on a {}-d array", lo.len(), hi.len(), m.ndim())));
    }
    if let Some(i) = (0..m.ndim()).find(|&i| lo[i] >= hi[i] || hi[i] > m.size()[i]) {
        return Err(Error::Bounds(format!("subarray range {}..{} in dimension {i} of size {}", lo[i], hi[i], m.size()[i])));
    }
    let size: Vec<u64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    let tile = m.tile_size().iter().zip(&size).map(|(t, s)| (*t).min(*s)).collect();
    let out = StoredArray::create(m.reshaped(size, tile)?, a.layout(), a.pool().clone())?;
    let ts = m.tile_size();
    let first: Vec<u64> = lo.iter().zip(ts).map(|(l, t)| l / t).collect();
    let last: Vec<u64> = hi.iter().zip(ts).map(|(h, t)| (h - 1) / t).collect();
    let mut w = crate::array::TileWriter::new(&out);
    for_each_in_box(&first, &last, |tc| {
        if !a.has_tile(tc)? {
            return Ok(());
        }
        let tile = a.pin(tc)?;
        for (cc, pos) in tile.cells() {
            let g = m.join(tc, &cc);
            if g.iter().zip(lo).zip(hi).all(|((x, l), h)| x >= l && x < h) {
                let shifted: Vec<u64> = g.iter().zip(lo).map(|(x, l)| x - l).collect();
                w.write_cell(&shifted, tile.values(pos))?;
            }
        }
        Ok(())
    })?;
    w.finish()?;
    Ok(out)
}

/// Collapses the named dimensions by aggregating `attr` over them. The
/// remaining dimensions keep their size and tiling; collapsing every
/// dimension yields a 1-d array of size 1 with dimension `i`.
pub fn aggregate(a: &StoredArray, collapse: &[&str], agg: CellAgg, attr: Option<&str>) -> Result<StoredArray> {
    let m = a.meta();
    let mut drop = vec![false; m.ndim()];
    for name in collapse {
        let i = a.schema().dim_index(name).ok_or_else(|| Error::Schema(format!("no dimension '{name}'")))?;
        drop[i] = true;
    }
    let ai = attr_pos(a, attr)?;
    let keep: Vec<usize> = (0..m.ndim()).filter(|&i| !drop[i]).collect();
    let (dims, size, tile) = if keep.is_empty() {
        (vec!["i".to_string()], vec![1], vec![1])
    } else {
        (
            keep.iter().map(|&i| a.schema().dims()[i].clone()).collect(),
            keep.iter().map(|&i| m.size()[i]).collect(),
            keep.iter().map(|&i| m.tile_size()[i]).collect(),
        )
    };
    let mut groups: BTreeMap<Vec<u64>, Acc> = BTreeMap::new();
    a.for_each_cell(|g, tile, pos| {
        let key = if keep.is_empty() { vec![0] } else { keep.iter().map(|&i| g[i]).collect() };
        groups.entry(key).or_insert(Acc::EMPTY).add(tile.columns()[ai].get_f64(pos));
        Ok(())
    })?;
    let name = a.schema().attrs()[ai].0.clone();
    let layout = a.layout().for_ndim(dims.len());
    let meta = ArrayMeta::new(float_schema(dims, name)?, size, tile)?;
    StoredArray::build(meta, layout, a.pool().clone(), groups.into_iter().map(|(k, acc)| (k, vec![Scalar::Float(acc.finish(agg))])))
}

/// Value of the cell at row-major linear index `index` of a random array.
/// Each index draws from its own position of the seeded ChaCha8 stream, so
/// values do not depend on tiling.
pub fn rand_value(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * index as u128);
    rng.gen::<f64>()
}

/// Dense array of uniform `[0, 1)` floats; the seed is kept in the array.
pub fn rand(
    shape: &[u64],
    dims: &[&str],
    attr: &str,
    seed: u64,
    tile_extent: u64,
    pool: Arc<BufferPool>,
) -> Result<StoredArray> {
    if shape.len() != dims.len() {
        return Err(Error::Shape(format!("{} sizes for {} dimensions", shape.len(), dims.len())));
    }
    let schema = float_schema(dims.iter().map(|d| d.to_string()).collect(), attr.to_string())?;
    let meta = ArrayMeta::with_default_tiles(schema, shape.to_vec(), tile_extent)?;
    let mut out = StoredArray::create(meta.clone(), Layout::Dense, pool)?;
    out.set_seed(Some(seed));
    let ts = meta.tile_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in 0..meta.tile_count() {
        let tc = meta.tile_coord(idx);
        let valid = in_bounds_mask(&meta, &tc);
        let values = valid
            .iter()
            .enumerate()
            .map(|(pos, &ok)| {
                if !ok {
                    return 0.0;
                }
                let g = meta.join(&tc, &crate::array::delinearize(pos, ts));
                rng.set_word_pos(2 * linearize(&g, meta.size()) as u128);
                rng.gen::<f64>()
            })
            .collect();
        put_dense(&out, &tc, values, valid)?;
    }
    Ok(out)
}

/// Inner join on identical coordinates; output attributes are `a`'s then
/// `b`'s, with `_r` appended to colliding names from `b`.
pub fn spatial_join_array(a: &StoredArray, b: &StoredArray) -> Result<StoredArray> {
    if a.meta().size() != b.meta().size() || a.meta().tile_size() != b.meta().tile_size() {
        return Err(Error::Shape(format!("spatial join of {:?} and {:?}", a.meta().size(), b.meta().size())));
    }
    let mut attrs = a.schema().attrs().to_vec();
    for (name, ty) in b.schema().attrs() {
        let mut name = name.clone();
        while attrs.iter().any(|(n, _)| *n == name) || a.schema().dim_index(&name).is_some() {
            name.push_str("_r");
        }
        attrs.push((name, *ty));
    }
    let schema = CellSchema::new(a.schema().dims().to_vec(), attrs)?;
    let meta = ArrayMeta::new(schema, a.meta().size().to_vec(), a.meta().tile_size().to_vec())?;
    let out = StoredArray::create(meta, a.layout(), a.pool().clone())?;
    for idx in 0..a.meta().tile_count() {
        let tc = a.meta().tile_coord(idx);
        if !a.has_tile(&tc)? || !b.has_tile(&tc)? {
            continue;
        }
        let ta = a.pin(&tc)?;
        let tb = b.pin(&tc)?;
        let mut cells = Vec::new();
        for (cc, pos) in ta.cells() {
            if let Some(vb) = tb.get_cell(&cc)? {
                let mut v = ta.values(pos);
                v.extend(vb);
                cells.push((cc, v));
            }
        }
        drop((ta, tb));
        out.write_tile(&tc, cells)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn pool() -> Arc<BufferPool> {
        Arc::new(BufferPool::new(1 << 24))
    }

    fn grid_array(rows: &[&[f64]], tile: [u64; 2], layout: Layout, p: &Arc<BufferPool>) -> StoredArray {
        let schema = float_schema(vec!["i".into(), "j".into()], "v".into()).unwrap();
        let meta = ArrayMeta::new(schema, vec![rows.len() as u64, rows[0].len() as u64], tile.to_vec()).unwrap();
        let cells = rows.iter().enumerate().flat_map(|(i, r)| {
            r.iter().enumerate().map(move |(j, v)| (vec![i as u64, j as u64], vec![Scalar::Float(*v)]))
        });
        StoredArray::build(meta, layout, p.clone(), cells).unwrap()
    }

    fn to_map(a: &StoredArray) -> BTreeMap<Vec<u64>, f64> {
        a.cells().unwrap().into_iter().map(|(c, v)| (c, v[0].as_f64())).collect()
    }

    fn sparse(size: [u64; 2], tile: [u64; 2], cells: &[(u64, u64, f64)], p: &Arc<BufferPool>) -> StoredArray {
        let schema = float_schema(vec!["i".into(), "j".into()], "v".into()).unwrap();
        let meta = ArrayMeta::new(schema, size.to_vec(), tile.to_vec()).unwrap();
        StoredArray::build(meta, Layout::Coo, p.clone(), cells.iter().map(|&(i, j, v)| (vec![i, j], vec![Scalar::Float(v)])))
            .unwrap()
    }

    #[test]
    fn ewise_identity_and_product() {
        let p = pool();
        let a = grid_array(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], &[9.0, 1.0, 2.0, 3.0], &[4.0, 5.0, 6.0, 7.0]], [2, 2], Layout::Dense, &p);
        let b = grid_array(&[&[2.0; 4], &[0.5; 4], &[1.0, 0.0, -1.0, 2.0], &[3.0; 4]], [2, 2], Layout::Dense, &p);
        let zero = grid_array(&[&[0.0; 4] as &[f64]; 4], [2, 2], Layout::Dense, &p);
        assert_eq!(to_map(&ewise(ArithOp::Add, &a, &zero).unwrap()), to_map(&a));
        let prod = to_map(&ewise(ArithOp::Mul, &a, &b).unwrap());
        let (ma, mb) = (to_map(&a), to_map(&b));
        for (k, v) in &prod {
            assert_eq!(*v, ma[k] * mb[k]);
        }
        assert_eq!(prod.len(), 16);
    }

    #[test]
    fn ewise_sparse_semantics() {
        let p = pool();
        let a = sparse([4, 4], [2, 2], &[(0, 0, 6.0), (3, 3, 1.0)], &p);
        let b = sparse([4, 4], [2, 2], &[(0, 0, 2.0), (1, 2, 5.0)], &p);
        let sum = to_map(&ewise(ArithOp::Sub, &a, &b).unwrap());
        assert_eq!(sum, BTreeMap::from([(vec![0, 0], 4.0), (vec![1, 2], -5.0), (vec![3, 3], 1.0)]));
        let div = to_map(&ewise(ArithOp::Div, &a, &b).unwrap());
        assert_eq!(div, BTreeMap::from([(vec![0, 0], 3.0), (vec![1, 2], 0.0)]));
        let by_zero = ewise(ArithOp::Div, &a, &sparse([4, 4], [2, 2], &[(0, 0, 0.0)], &p)).unwrap();
        assert!(to_map(&by_zero)[&vec![0, 0]].is_infinite());
        let other = sparse([4, 4], [4, 4], &[], &p);
        assert!(matches!(ewise(ArithOp::Add, &a, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let p = pool();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..30).map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..20).map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ar: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let br: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        let sa = grid_array(&ar, [7, 6], Layout::Coo, &p);
        let sb = grid_array(&br, [4, 3], Layout::Dense, &p);
        let c = matmul(&sa, &sb).unwrap();
        assert_eq!(c.meta().tile_size(), &[7, 3]);
        let got = to_map(&c);
        for i in 0..30 {
            for j in 0..10 {
                let expect: f64 = (0..20).map(|k| a[i][k] * b[k][j]).sum();
                let g = got[&vec![i as u64, j as u64]];
                assert!((g - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            }
        }
        assert!(matmul(&sa, &sa).is_err());
    }

    #[test]
    fn matmul_identity_and_associativity() {
        let p = pool();
        let a = grid_array(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], [2, 1], Layout::Dense, &p);
        let id = sparse([2, 2], [2, 2], &[(0, 0, 1.0), (1, 1, 1.0)], &p);
        assert_eq!(to_map(&matmul(&a, &id).unwrap()), to_map(&a));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..20).map(|_| (0..20).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
        };
        let (x, y, z) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let arr = |m: &Vec<Vec<f64>>| grid_array(&m.iter().map(Vec::as_slice).collect::<Vec<_>>(), [6, 6], Layout::Dense, &p);
        let (x, y, z) = (arr(&x), arr(&y), arr(&z));
        let left = to_map(&matmul(&matmul(&x, &y).unwrap(), &z).unwrap());
        let right = to_map(&matmul(&x, &matmul(&y, &z).unwrap()).unwrap());
        let diff = left.iter().map(|(k, v)| (v - right[k]).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-6);
    }

    #[test]
    fn transpose_swaps_coordinates() {
        let p = pool();
        let a = sparse([3, 5], [2, 2], &[(0, 4, 1.0), (2, 1, 2.0), (1, 1, 3.0)], &p);
        let t = transpose(&a).unwrap();
        assert_eq!(t.meta().size(), &[5, 3]);
        let swapped: BTreeMap<Vec<u64>, f64> = to_map(&a).into_iter().map(|(c, v)| (vec![c[1], c[0]], v)).collect();
        assert_eq!(to_map(&t), swapped);
        assert_eq!(to_map(&transpose(&t).unwrap()), to_map(&a));
        let row = grid_array(&[&[1.0, 2.0, 3.0]], [1, 2], Layout::Dense, &p);
        assert_eq!(transpose(&row).unwrap().meta().size(), &[3, 1]);
    }

    #[test]
    fn window_clips_at_edges() {
        let p = pool();
        let ones = grid_array(&[&[1.0; 3] as &[f64]; 3], [2, 2], Layout::Dense, &p);
        let w = to_map(&window(&ones, &[1, 1], CellAgg::Sum, None).unwrap());
        assert_eq!(w[&vec![1, 1]], 9.0);
        assert_eq!(w[&vec![0, 1]], 6.0);
        assert_eq!(w[&vec![2, 2]], 4.0);
        assert_eq!(to_map(&window(&ones, &[0, 0], CellAgg::Sum, None).unwrap()), to_map(&ones));
    }

    #[test]
    fn window_matches_brute_force_on_sparse_input() {
        let p = pool();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let cells: BTreeSet<(u64, u64)> = (0..25).map(|_| (rng.gen_range(0..12), rng.gen_range(0..9))).collect();
            let list: Vec<(u64, u64, f64)> = cells.iter().map(|&(i, j)| (i, j, rng.gen_range(-5.0..5.0))).collect();
            let a = sparse([12, 9], [5, 4], &list, &p);
            let r = [rng.gen_range(0..3), rng.gen_range(0..3)];
            for agg in [CellAgg::Sum, CellAgg::Max, CellAgg::Count] {
                let got = to_map(&window(&a, &r, agg, Some("v")).unwrap());
                let mut expect = BTreeMap::new();
                for i in 0..12u64 {
                    for j in 0..9u64 {
                        let near: Vec<f64> = list
                            .iter()
                            .filter(|(x, y, _)| x.abs_diff(i) <= r[0] && y.abs_diff(j) <= r[1])
                            .map(|c| c.2)
                            .collect();
                        if near.is_empty() {
                            continue;
                        }
                        let v = match agg {
                            CellAgg::Sum => near.iter().sum(),
                            CellAgg::Max => near.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                            _ => near.len() as f64,
                        };
                        expect.insert(vec![i, j], v);
                    }
                }
                assert_eq!(got.len(), expect.len());
                for (k, v) in expect {
                    assert!((got[&k] - v).abs() < 1e-9, "{k:?}");
                }
            }
        }
    }

    #[test]
    fn subarray_and_aggregate() {
        let p = pool();
        let ones = grid_array(&[&[1.0; 10] as &[f64]; 10], [3, 4], Layout::Dense, &p);
        assert_eq!(to_map(&subarray(&ones, &[0, 0], &[10, 10]).unwrap()), to_map(&ones));
        let sub = subarray(&ones, &[2, 3], &[5, 9]).unwrap();
        assert_eq!(sub.meta().size(), &[3, 6]);
        assert_eq!(sub.cell_count().unwrap(), 18);
        assert!(matches!(subarray(&ones, &[5, 0], &[2, 10]), Err(Error::Bounds(_))));
        assert!(matches!(subarray(&ones, &[0, 0], &[11, 10]), Err(Error::Bounds(_))));

        let total = aggregate(&ones, &["i", "j"], CellAgg::Sum, None).unwrap();
        assert_eq!(to_map(&total), BTreeMap::from([(vec![0], 100.0)]));
        let rows = aggregate(&ones, &["j"], CellAgg::Avg, None).unwrap();
        assert_eq!(rows.meta().size(), &[10]);
        assert!(to_map(&rows).values().all(|v| *v == 1.0));
    }

    #[test]
    fn rand_is_deterministic_and_tiling_independent() {
        let p = pool();
        let a = rand(&[7, 5], &["i", "j"], "v", 42, 3, p.clone()).unwrap();
        let b = rand(&[7, 5], &["i", "j"], "v", 42, 3, p.clone()).unwrap();
        let c = rand(&[7, 5], &["i", "j"], "v", 42, 100, p.clone()).unwrap();
        assert_eq!(a.cells().unwrap(), b.cells().unwrap());
        assert_eq!(to_map(&a), to_map(&c));
        assert_eq!(a.cell_count().unwrap(), 35);
        assert_eq!(a.seed(), Some(42));
        assert!(to_map(&a).values().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(to_map(&a)[&vec![3, 2]], rand_value(42, 17));
        let d = rand(&[7, 5], &["i", "j"], "v", 43, 3, p).unwrap();
        assert_ne!(to_map(&a), to_map(&d));
    }

    #[test]
    fn spatial_join_intersects_coordinates() {
        let p = pool();
        let a = sparse([6, 6], [3, 3], &[(0, 0, 1.0), (2, 5, 2.0), (4, 4, 3.0)], &p);
        let b = sparse([6, 6], [3, 3], &[(2, 5, 7.0), (4, 4, 8.0), (5, 5, 9.0)], &p);
        let j = spatial_join_array(&a, &b).unwrap();
        assert_eq!(j.schema().attrs().iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["v", "v_r"]);
        let got: Vec<(Vec<u64>, Vec<f64>)> =
            j.cells().unwrap().into_iter().map(|(c, v)| (c, v.iter().map(|s| s.as_f64()).collect())).collect();
        assert_eq!(got, vec![(vec![2, 5], vec![2.0, 7.0]), (vec![4, 4], vec![3.0, 8.0])]);
        let disjoint = sparse([6, 6], [3, 3], &[(1, 1, 1.0)], &p);
        assert_eq!(spatial_join_array(&a, &disjoint).unwrap().cell_count().unwrap(), 0);
        let selfj = spatial_join_array(&a, &a).unwrap();
        assert!(selfj.cells().unwrap().iter().all(|(_, v)| v[0] == v[1]));
    }
}
