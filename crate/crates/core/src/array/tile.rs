use std::cmp::Ordering;

use crate::model::{AttrType, Scalar};
use crate::{Error, Result};

/// Physical cell layout of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Every position allocated, coordinates implied by position.
    Dense,
    /// Coordinate list sorted lexicographically.
    Coo,
    /// Compressed sparse rows; 2-d tiles only.
    Csr,
}

impl Layout {
    pub fn tag(self) -> u8 {
        match self {
            Layout::Dense => 0,
            Layout::Coo => 1,
            Layout::Csr => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Layout> {
        match tag {
            0 => Some(Layout::Dense),
            1 => Some(Layout::Coo),
            2 => Some(Layout::Csr),
            _ => None,
        }
    }

    /// CSR only exists in two dimensions; other ranks fall back to COO.
    pub fn for_ndim(self, ndim: usize) -> Layout {
        if self == Layout::Csr && ndim != 2 {
            Layout::Coo
        } else {
            self
        }
    }

    pub fn is_sparse(self) -> bool {
        self != Layout::Dense
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(Layout::Dense),
            "coo" | "sorted-coo" => Ok(Layout::Coo),
            "csr" => Ok(Layout::Csr),
            other => Err(Error::Spec(format!("unknown layout '{other}'"))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Dense => "dense",
            Layout::Coo => "coo",
            Layout::Csr => "csr",
        })
    }
}

/// One attribute's values, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int(Vec<i64>),
    UInt(Vec<u64>),
    Float(Vec<f64>),
}

impl Column {
    pub fn with_capacity(ty: AttrType, n: usize) -> Column {
        match ty {
            AttrType::Int => Column::Int(Vec::with_capacity(n)),
            AttrType::UInt => Column::UInt(Vec::with_capacity(n)),
            AttrType::Float => Column::Float(Vec::with_capacity(n)),
        }
    }

    pub fn zeros(ty: AttrType, n: usize) -> Column {
        match ty {
            AttrType::Int => Column::Int(vec![0; n]),
            AttrType::UInt => Column::UInt(vec![0; n]),
            AttrType::Float => Column::Float(vec![0.0; n]),
        }
    }

    pub fn ty(&self) -> AttrType {
        match self {
            Column::Int(_) => AttrType::Int,
            Column::UInt(_) => AttrType::UInt,
            Column::Float(_) => AttrType::Float,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int(v) => v.len(),
            Column::UInt(v) => v.len(),
            Column::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            Column::Int(v) => Scalar::Int(v[i]),
            Column::UInt(v) => Scalar::UInt(v[i]),
            Column::Float(v) => Scalar::Float(v[i]),
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            Column::Int(v) => v[i] as f64,
            Column::UInt(v) => v[i] as f64,
            Column::Float(v) => v[i],
        }
    }

    /// Appends a value that has already been converted to this column's type.
    fn push(&mut self, s: Scalar) {
        match (self, s) {
            (Column::Int(v), Scalar::Int(x)) => v.push(x),
            (Column::UInt(v), Scalar::UInt(x)) => v.push(x),
            (Column::Float(v), Scalar::Float(x)) => v.push(x),
            (c, s) => unreachable!("{:?} value pushed into {:?} column", s.attr_type(), c.ty()),
        }
    }

    fn set(&mut self, i: usize, s: Scalar) {
        match (self, s) {
            (Column::Int(v), Scalar::Int(x)) => v[i] = x,
            (Column::UInt(v), Scalar::UInt(x)) => v[i] = x,
            (Column::Float(v), Scalar::Float(x)) => v[i] = x,
            (c, s) => unreachable!("{:?} value stored into {:?} column", s.attr_type(), c.ty()),
        }
    }

    fn word(&self, i: usize) -> u64 {
        self.get(i).bits()
    }

    fn from_words(ty: AttrType, words: impl Iterator<Item = u64>) -> Column {
        match ty {
            AttrType::Int => Column::Int(words.map(|w| w as i64).collect()),
            AttrType::UInt => Column::UInt(words.collect()),
            AttrType::Float => Column::Float(words.map(f64::from_bits).collect()),
        }
    }
}

/// Converts a scalar to the attribute type of its column, allowing the
/// widening conversions `Scalar::from_value` allows.
fn coerce(s: Scalar, ty: AttrType) -> Result<Scalar> {
    if s.attr_type() == ty {
        Ok(s)
    } else {
        Scalar::from_value(&s.to_value(), ty)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Dense { valid: Vec<bool> },
    /// Flattened in-tile coordinates, `ndim` per cell, lexicographically increasing.
    Coo { coords: Vec<u32> },
    Csr { row_ptr: Vec<u32>, col_idx: Vec<u32> },
}

/// A rectangular block of cells: the unit of storage and buffering.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    coord: Vec<u64>,
    extent: Vec<u64>,
    layout: Layout,
    payload: Payload,
    columns: Vec<Column>,
}

/// A cell given by its in-tile coordinate and attribute values.
pub type LocalCell = (Vec<u64>, Vec<Scalar>);

impl Tile {
    pub fn empty(coord: Vec<u64>, extent: Vec<u64>, layout: Layout, types: &[AttrType]) -> Tile {
        let layout = layout.for_ndim(extent.len());
        let (payload, n) = match layout {
            Layout::Dense => {
                let n = extent.iter().product::<u64>() as usize;
                (Payload::Dense { valid: vec![false; n] }, n)
            }
            Layout::Coo => (Payload::Coo { coords: Vec::new() }, 0),
            Layout::Csr => (
                Payload::Csr { row_ptr: vec![0; extent[0] as usize + 1], col_idx: Vec::new() },
                0,
            ),
        };
        let columns = types.iter().map(|&t| Column::zeros(t, n)).collect();
        Tile { coord, extent, layout, payload, columns }
    }

    /// Builds a tile from cells given in any order. Fails on coordinates
    /// outside the tile, duplicated coordinates, or unconvertible values.
    pub fn from_cells(
        coord: Vec<u64>,
        extent: Vec<u64>,
        layout: Layout,
        types: &[AttrType],
        mut cells: Vec<LocalCell>,
    ) -> Result<Tile> {
        let ndim = extent.len();
        let layout = layout.for_ndim(ndim);
        for (cc, values) in &cells {
            check_local(cc, &extent)?;
            if values.len() != types.len() {
                return Err(Error::Shape(format!(
                    "cell has {} attributes, schema has {}",
                    values.len(),
                    types.len()
                )));
            }
        }
        let global = |cc: &[u64]| -> Vec<u64> {
            coord.iter().zip(cc).zip(&extent).map(|((t, c), e)| t * e + c).collect()
        };
        match layout {
            Layout::Dense => {
                let mut tile = Tile::empty(coord.clone(), extent.clone(), layout, types);
                for (cc, values) in cells {
                    let pos = linearize(&cc, &extent);
                    let Payload::Dense { valid } = &mut tile.payload else { unreachable!() };
                    if valid[pos] {
                        return Err(Error::DuplicateCell(global(&cc)));
                    }
                    valid[pos] = true;
                    for (col, (v, &ty)) in tile.columns.iter_mut().zip(values.iter().zip(types)) {
                        col.set(pos, coerce(*v, ty)?);
                    }
                }
                Ok(tile)
            }
            Layout::Coo | Layout::Csr => {
                cells.sort_by(|a, b| a.0.cmp(&b.0));
                if let Some(w) = cells.windows(2).find(|w| w[0].0 == w[1].0) {
                    return Err(Error::DuplicateCell(global(&w[0].0)));
                }
                let mut columns: Vec<Column> =
                    types.iter().map(|&t| Column::with_capacity(t, cells.len())).collect();
                for (_, values) in &cells {
                    for (col, (v, &ty)) in columns.iter_mut().zip(values.iter().zip(types)) {
                        col.push(coerce(*v, ty)?);
                    }
                }
                let payload = if layout == Layout::Coo {
                    Payload::Coo {
                        coords: cells.iter().flat_map(|(cc, _)| cc.iter().map(|&c| c as u32)).collect(),
                    }
                } else {
                    let rows = extent[0] as usize;
                    let mut row_ptr = vec![0u32; rows + 1];
                    for (cc, _) in &cells {
                        row_ptr[cc[0] as usize + 1] += 1;
                    }
                    for r in 0..rows {
                        row_ptr[r + 1] += row_ptr[r];
                    }
                    Payload::Csr { row_ptr, col_idx: cells.iter().map(|(cc, _)| cc[1] as u32).collect() }
                };
                Ok(Tile { coord, extent, layout, payload, columns })
            }
        }
    }

    /// Dense tile from a validity mask and full-length columns.
    pub fn dense(coord: Vec<u64>, extent: Vec<u64>, valid: Vec<bool>, columns: Vec<Column>) -> Result<Tile> {
        let n = extent.iter().product::<u64>() as usize;
        if valid.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!("dense tile of {n} cells built from mismatched columns")));
        }
        Ok(Tile { coord, extent, layout: Layout::Dense, payload: Payload::Dense { valid }, columns })
    }

    pub fn coord(&self) -> &[u64] {
        &self.coord
    }

    pub fn extent(&self) -> &[u64] {
        &self.extent
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn ndim(&self) -> usize {
        self.extent.len()
    }

    /// Number of cells actually present.
    pub fn cell_count(&self) -> usize {
        match &self.payload {
            Payload::Dense { valid } => valid.iter().filter(|v| **v).count(),
            Payload::Coo { coords } => coords.len() / self.ndim().max(1),
            Payload::Csr { col_idx, .. } => col_idx.len(),
        }
    }

    /// Approximate decoded footprint, used as the buffer-pool object size.
    pub fn byte_size(&self) -> u64 {
        let attr_bytes = 8 * self.columns.len() as u64;
        let body = match &self.payload {
            Payload::Dense { valid } => valid.len() as u64 * (1 + attr_bytes),
            Payload::Coo { coords } => coords.len() as u64 * 4 + self.cell_count() as u64 * attr_bytes,
            Payload::Csr { row_ptr, col_idx } => {
                (row_ptr.len() + col_idx.len()) as u64 * 4 + col_idx.len() as u64 * attr_bytes
            }
        };
        64 + body
    }

    /// Position of the cell at in-tile coordinate `cc`, if present.
    pub fn locate(&self, cc: &[u64]) -> Result<Option<usize>> {
        let mut comparisons = 0;
        self.locate_counted(cc, &mut comparisons)
    }

    /// Like [`Tile::locate`], adding the number of coordinate comparisons
    /// made by the sparse binary searches to `comparisons`.
    pub fn locate_counted(&self, cc: &[u64], comparisons: &mut u64) -> Result<Option<usize>> {
        check_local(cc, &self.extent)?;
        Ok(match &self.payload {
            Payload::Dense { valid } => {
                let pos = linearize(cc, &self.extent);
                valid[pos].then_some(pos)
            }
            Payload::Coo { coords } => {
                let d = self.ndim();
                let n = coords.len() / d;
                let (mut lo, mut hi) = (0usize, n);
                let mut found = None;
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    let probe = &coords[mid * d..mid * d + d];
                    let mut ord = Ordering::Equal;
                    for (p, c) in probe.iter().zip(cc) {
                        *comparisons += 1;
                        ord = (*p as u64).cmp(c);
                        if ord != Ordering::Equal {
                            break;
                        }
                    }
                    match ord {
                        Ordering::Less => lo = mid + 1,
                        Ordering::Greater => hi = mid,
                        Ordering::Equal => {
                            found = Some(mid);
                            break;
                        }
                    }
                }
                found
            }
            Payload::Csr { row_ptr, col_idx } => {
                let row = cc[0] as usize;
                let (mut lo, mut hi) = (row_ptr[row] as usize, row_ptr[row + 1] as usize);
                *comparisons += 1;
                let mut found = None;
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    *comparisons += 1;
                    match (col_idx[mid] as u64).cmp(&cc[1]) {
                        Ordering::Less => lo = mid + 1,
                        Ordering::Greater => hi = mid,
                        Ordering::Equal => {
                            found = Some(mid);
                            break;
                        }
                    }
                }
                found
            }
        })
    }

    pub fn values(&self, pos: usize) -> Vec<Scalar> {
        self.columns.iter().map(|c| c.get(pos)).collect()
    }

    /// Attribute values of the cell at `cc`, or `None` if there is no cell.
    pub fn get_cell(&self, cc: &[u64]) -> Result<Option<Vec<Scalar>>> {
        Ok(self.locate(cc)?.map(|pos| self.values(pos)))
    }

    /// In-tile coordinates and positions of present cells, in layout order
    /// (row-major for dense and CSR, sorted order for COO).
    pub fn cells(&self) -> Vec<(Vec<u64>, usize)> {
        match &self.payload {
            Payload::Dense { valid } => valid
                .iter()
                .enumerate()
                .filter(|(_, v)| **v)
                .map(|(pos, _)| (delinearize(pos, &self.extent), pos))
                .collect(),
            Payload::Coo { coords } => coords
                .chunks(self.ndim())
                .enumerate()
                .map(|(pos, c)| (c.iter().map(|&x| x as u64).collect(), pos))
                .collect(),
            Payload::Csr { row_ptr, col_idx } => {
                let mut out = Vec::with_capacity(col_idx.len());
                for r in 0..row_ptr.len() - 1 {
                    for pos in row_ptr[r] as usize..row_ptr[r + 1] as usize {
                        out.push((vec![r as u64, col_idx[pos] as u64], pos));
                    }
                }
                out
            }
        }
    }

    /// All present cells with their values.
    pub fn local_cells(&self) -> Vec<LocalCell> {
        self.cells().into_iter().map(|(cc, pos)| (cc, self.values(pos))).collect()
    }

    /// Serialized block body (little-endian). The layout, rank, extent and
    /// attribute types live in the array header, not in the block.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let n_stored = self.columns.first().map_or_else(
            || match &self.payload {
                Payload::Dense { valid } => valid.len(),
                _ => self.cell_count(),
            },
            Column::len,
        );
        out.extend_from_slice(&(n_stored as u64).to_le_bytes());
        match &self.payload {
            Payload::Dense { valid } => {
                let mut bits = vec![0u8; valid.len().div_ceil(8)];
                for (i, v) in valid.iter().enumerate() {
                    if *v {
                        bits[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bits);
            }
            Payload::Coo { coords } => {
                for c in coords {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            Payload::Csr { row_ptr, col_idx } => {
                for x in row_ptr.iter().chain(col_idx) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        for col in &self.columns {
            for i in 0..col.len() {
                out.extend_from_slice(&col.word(i).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(
        bytes: &[u8],
        coord: Vec<u64>,
        extent: Vec<u64>,
        layout: Layout,
        types: &[AttrType],
    ) -> Result<Tile> {
        let mut r = Reader { bytes, pos: 0 };
        let n = r.u64()? as usize;
        let d = extent.len();
        let full = extent.iter().product::<u64>() as usize;
        let payload = match layout {
            Layout::Dense => {
                if n != full {
                    return Err(Error::Format(format!("dense block holds {n} cells, tile has {full}")));
                }
                let bits = r.take(n.div_ceil(8))?;
                Payload::Dense { valid: (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect() }
            }
            Layout::Coo => {
                let coords = r.u32s(n * d)?;
                for (i, cell) in coords.chunks(d).enumerate() {
                    if cell.iter().zip(&extent).any(|(c, e)| *c as u64 >= *e) {
                        return Err(Error::Format(format!("COO cell {i} outside tile")));
                    }
                    if i > 0 && coords[(i - 1) * d..i * d] >= *cell {
                        return Err(Error::Format("COO coordinates not strictly increasing".into()));
                    }
                }
                Payload::Coo { coords }
            }
            Layout::Csr => {
                if d != 2 {
                    return Err(Error::Format("CSR block in a non-2-d array".into()));
                }
                let row_ptr = r.u32s(extent[0] as usize + 1)?;
                let col_idx = r.u32s(n)?;
                if row_ptr[0] != 0
                    || row_ptr.windows(2).any(|w| w[0] > w[1])
                    || *row_ptr.last().unwrap() as usize != n
                    || col_idx.iter().any(|c| *c as u64 >= extent[1])
                {
                    return Err(Error::Format("malformed CSR row pointers".into()));
                }
                Payload::Csr { row_ptr, col_idx }
            }
        };
        let mut columns = Vec::with_capacity(types.len());
        for &ty in types {
            let raw = r.take(n * 8)?;
            columns.push(Column::from_words(
                ty,
                raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())),
            ));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in tile block", bytes.len() - r.pos)));
        }
        Ok(Tile { coord, extent, layout, payload, columns })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated tile block".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn check_local(cc: &[u64], extent: &[u64]) -> Result<()> {
    if cc.len() != extent.len() || cc.iter().zip(extent).any(|(c, e)| c >= e) {
        return Err(Error::Bounds(format!("cell {cc:?} outside tile extent {extent:?}")));
    }
    Ok(())
}

/// Row-major position, last dimension fastest.
pub(crate) fn linearize(cc: &[u64], extent: &[u64]) -> usize {
    cc.iter().zip(extent).fold(0u64, |acc, (c, e)| acc * e + c) as usize
}

pub(crate) fn delinearize(pos: usize, extent: &[u64]) -> Vec<u64> {
    let mut rest = pos as u64;
    let mut cc = vec![0; extent.len()];
    for (i, e) in extent.iter().enumerate().rev() {
        cc[i] = rest % e;
        rest /= e;
    }
    cc
}
