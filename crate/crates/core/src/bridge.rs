//! Inter-model operations: conversions between arrays and records, and
//! joins between a relation or collection and an array.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::array::{Layout, StoredArray, TileWriter};
use crate::model::{
    cmp_records, split_path, ArrayMeta, AttrType, Attribute, CellSchema, Collection, Document, Record, Relation, Scalar,
    Schema, Value, ValueType,
};
use crate::planner::Model;
use crate::pool::BufferPool;
use crate::rd::{join_pairs, CmpOp, Expr, PathReader, RdData};
use crate::{Error, Result};

/// Records per block when counting record-side block scans.
pub const RECORDS_PER_BLOCK: usize = 1024;

/// Cells per tile used when a conversion does not give tile sizes.
pub const DEFAULT_TILE_CELLS: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Mshj,
    Convert,
    ProbeOnly,
    Auto,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mshj => "mshj",
            Strategy::Convert => "convert",
            Strategy::ProbeOnly => "probe-only",
            Strategy::Auto => "auto",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        Ok(match s {
            "mshj" => Strategy::Mshj,
            "convert" | "rel" => Strategy::Convert,
            "probe-only" | "probe_only" | "onlyprobe" => Strategy::ProbeOnly,
            "auto" => Strategy::Auto,
            other => return Err(Error::Spec(format!("unknown join strategy '{other}'"))),
        })
    }
}

/// Record-side paths bound to the array dimensions, in dimension order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimBinding {
    paths: Vec<String>,
}

impl DimBinding {
    pub fn new<S: Into<String>>(paths: impl IntoIterator<Item = S>) -> DimBinding {
        DimBinding { paths: paths.into_iter().map(Into::into).collect() }
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn ndim(&self) -> usize {
        self.paths.len()
    }

    /// Recognizes a conjunction of `record.path = array.dim` equalities that
    /// binds every dimension exactly once. Array dimensions must be qualified
    /// with `array_alias`; a `record_alias.` prefix on the record side is
    /// removed. Anything else gives `None`.
    pub fn from_predicate(pred: &Expr, record_alias: &str, array_alias: &str, dims: &[String]) -> Option<DimBinding> {
        let dim_of = |p: &str| {
            let rest = p.strip_prefix(array_alias)?.strip_prefix('.')?;
            dims.iter().position(|d| d == rest)
        };
        let mut paths: Vec<Option<String>> = vec![None; dims.len()];
        for c in pred.conjuncts() {
            let Expr::Cmp(CmpOp::Eq, a, b) = c else { return None };
            let (Expr::Path(a), Expr::Path(b)) = (a.as_ref(), b.as_ref()) else { return None };
            let (d, rec) = match (dim_of(a), dim_of(b)) {
                (Some(d), None) => (d, b),
                (None, Some(d)) => (d, a),
                _ => return None,
            };
            if paths[d].is_some() {
                return None;
            }
            let rec = rec.strip_prefix(record_alias).and_then(|r| r.strip_prefix('.')).unwrap_or(rec);
            paths[d] = Some(rec.to_string());
        }
        paths.into_iter().collect::<Option<Vec<_>>>().map(|paths| DimBinding { paths })
    }

    /// The equivalent join predicate.
    pub fn to_predicate(&self, record_alias: &str, array_alias: &str, dims: &[String]) -> Result<Expr> {
        if dims.len() != self.paths.len() {
            return Err(Error::Binding(format!("{} bound paths for {} dimensions", self.paths.len(), dims.len())));
        }
        let conj = self
            .paths
            .iter()
            .zip(dims)
            .map(|(p, d)| {
                Expr::Cmp(
                    CmpOp::Eq,
                    Box::new(Expr::Path(format!("{record_alias}.{p}"))),
                    Box::new(Expr::Path(format!("{array_alias}.{d}"))),
                )
            })
            .collect();
        Ok(Expr::and_all(conj).unwrap_or(Expr::Lit(Value::Bool(true))))
    }
}

/// Output model and projection of an inter-model join.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinOutputSpec {
    pub model: Model,
    /// Output attributes to keep, in order; everything when `None`.
    pub project: Option<Vec<String>>,
    /// Qualifier for cell attributes whose names collide with record ones.
    pub array_alias: String,
}

impl JoinOutputSpec {
    pub fn new(model: Model) -> JoinOutputSpec {
        JoinOutputSpec { model, project: None, array_alias: "array".into() }
    }

    pub fn with_alias(mut self, alias: impl Into<String>) -> Self {
        self.array_alias = alias.into();
        self
    }

    pub fn with_projection<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.project = Some(names.into_iter().map(Into::into).collect());
        self
    }
}

/// Result of an inter-model operation.
#[derive(Debug)]
pub enum JoinOutput {
    Rd(RdData),
    Array(StoredArray),
}

impl JoinOutput {
    pub fn len(&self) -> Result<usize> {
        match self {
            JoinOutput::Rd(d) => Ok(d.len()),
            JoinOutput::Array(a) => a.cell_count(),
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    pub fn into_rd(self) -> Result<RdData> {
        match self {
            JoinOutput::Rd(d) => Ok(d),
            JoinOutput::Array(_) => Err(Error::Type("array result used where records are needed".into())),
        }
    }

    pub fn into_array(self) -> Result<StoredArray> {
        match self {
            JoinOutput::Array(a) => Ok(a),
            JoinOutput::Rd(_) => Err(Error::Type("record result used where an array is needed".into())),
        }
    }

    /// Output as a sorted multiset of rows: relation rows, single-document
    /// rows, or cell coordinates followed by values.
    pub fn sorted_rows(&self) -> Result<Vec<Record>> {
        let mut rows: Vec<Record> = match self {
            JoinOutput::Rd(RdData::Relation(r)) => r.rows.clone(),
            JoinOutput::Rd(RdData::Collection(c)) => c.docs.iter().map(|d| vec![Value::Doc(d.clone())]).collect(),
            JoinOutput::Array(a) => a
                .cells()?
                .into_iter()
                .map(|(c, v)| c.into_iter().map(Value::UInt).chain(v.into_iter().map(Scalar::to_value)).collect())
                .collect(),
        };
        rows.sort_by(|a, b| cmp_records(a, b));
        Ok(rows)
    }
}

/// Counters and timings of one join.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinStats {
    pub strategy: Strategy,
    pub records: usize,
    /// Records with a null or missing bound value, or outside the array.
    pub dropped: usize,
    pub output_rows: usize,
    /// Full passes over the record side (building stages plus the probe).
    pub record_passes: usize,
    /// Record-side blocks read, [`RECORDS_PER_BLOCK`] records per block.
    pub block_scans: u64,
    pub tile_pins: u64,
    pub tile_reads: u64,
    /// Coordinate comparisons made by sparse-tile lookups.
    pub comparisons: u64,
    /// Tile coordinates in the order they were pinned.
    pub pinned: Vec<Vec<u64>>,
    pub build_time: Duration,
    pub probe_time: Duration,
    /// Array-to-relation conversion (and result conversion) time.
    pub convert_time: Duration,
    pub total_time: Duration,
}

impl JoinStats {
    fn new(strategy: Strategy, records: usize) -> JoinStats {
        JoinStats {
            strategy,
            records,
            dropped: 0,
            output_rows: 0,
            record_passes: 0,
            block_scans: 0,
            tile_pins: 0,
            tile_reads: 0,
            comparisons: 0,
            pinned: Vec::new(),
            build_time: Duration::ZERO,
            probe_time: Duration::ZERO,
            convert_time: Duration::ZERO,
            total_time: Duration::ZERO,
        }
    }

    fn scan(&mut self, rows: usize) {
        self.record_passes += 1;
        self.block_scans += rows.div_ceil(RECORDS_PER_BLOCK) as u64;
    }
}

/// Bound dimension values of every record. Records whose bound values are
/// null or missing are marked absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundKeys {
    ndim: usize,
    coords: Vec<u64>,
    present: Vec<bool>,
}

impl BoundKeys {
    /// Reads the bound values. A value that is not a non-negative integer is
    /// a binding error; null or missing values mark the record absent, or
    /// fail too when `strict`.
    pub fn extract(data: &RdData, binding: &DimBinding, strict: bool) -> Result<BoundKeys> {
        let readers = binding.paths.iter().map(|p| PathReader::new(data, p)).collect::<Result<Vec<_>>>()?;
        let n = data.len();
        let ndim = binding.ndim();
        let mut coords = vec![0u64; n * ndim];
        let mut present = vec![true; n];
        for i in 0..n {
            for (d, reader) in readers.iter().enumerate() {
                let v = reader.get(data, i);
                match v.as_coord() {
                    Some(c) => coords[i * ndim + d] = c,
                    None if v.is_null() && !strict => present[i] = false,
                    None => {
                        return Err(Error::Binding(format!(
                            "'{}' of record {i} is {v}, not a non-negative integer",
                            binding.paths[d]
                        )))
                    }
                }
            }
        }
        Ok(BoundKeys { ndim, coords, present })
    }

    pub fn from_coords(ndim: usize, coords: &[Vec<u64>]) -> BoundKeys {
        BoundKeys {
            ndim,
            coords: coords.iter().flat_map(|c| c.iter().copied()).collect(),
            present: vec![true; coords.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Bound coordinate of record `i`, if it has one.
    pub fn coord(&self, i: usize) -> Option<&[u64]> {
        self.present[i].then(|| &self.coords[i * self.ndim..(i + 1) * self.ndim])
    }
}

/// Result of the building phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageBuckets {
    /// Bucket contents (record indices) of every stage, when kept.
    pub stages: Vec<Vec<Vec<usize>>>,
    /// Record order after the last stage.
    pub order: Vec<usize>,
    /// Records without a coordinate or with one outside the array.
    pub dropped: usize,
}

impl StageBuckets {
    /// Buckets the records through one stage per dimension. Stage `d` has
    /// one bucket per tile along `d` and puts each record, taken in the
    /// order left by the previous stage, into bucket `v_d / TS_d`. Records
    /// outside the array are dropped in stage 0.
    pub fn build(keys: &BoundKeys, meta: &ArrayMeta, keep_stages: bool) -> StageBuckets {
        let ts = meta.tile_size();
        let grid = meta.grid();
        let d = keys.ndim;
        let mut stages = Vec::new();
        let mut dropped = 0;
        let mut order: Vec<usize> = Vec::new();
        for stage in 0..d {
            let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); grid[stage] as usize];
            if stage == 0 {
                for i in 0..keys.len() {
                    match keys.coord(i) {
                        Some(c) if meta.contains(c) => buckets[(c[0] / ts[0]) as usize].push(i),
                        _ => dropped += 1,
                    }
                }
            } else {
                for &i in &order {
                    let v = keys.coords[i * d + stage];
                    buckets[(v / ts[stage]) as usize].push(i);
                }
            }
            order.clear();
            for b in &buckets {
                order.extend_from_slice(b);
            }
            if keep_stages {
                stages.push(buckets);
            }
        }
        StageBuckets { stages, order, dropped }
    }
}

/// One probed record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeStep {
    pub record: usize,
    pub tc: Vec<u64>,
    pub cc: Vec<u64>,
    /// Whether this record caused a pin.
    pub pinned: bool,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MshjTrace {
    pub buckets: StageBuckets,
    pub probes: Vec<ProbeStep>,
}

enum OutCol {
    Record(PathReader),
    Cell(usize),
}

enum Sink<'a> {
    Rows(Vec<Record>),
    Docs(Vec<Document>),
    Cells(TileWriter<'a>),
    Buffered(&'a StoredArray, Vec<(Vec<u64>, Vec<Scalar>)>),
    /// Array output whose target is not created yet.
    Pending,
}

/// Assembles joined (record, cell) pairs in the requested output model.
struct Emitter<'a> {
    records: &'a RdData,
    cols: Vec<(String, OutCol)>,
    /// Document output keeps the whole record unless projected.
    whole_doc: bool,
    types: Vec<AttrType>,
    schema: Option<Schema>,
    sink: Sink<'a>,
    rows: usize,
}

fn rename(name: &str, taken: &HashSet<String>, alias: &str) -> String {
    if taken.contains(name) {
        format!("{alias}.{name}")
    } else {
        name.to_string()
    }
}

fn record_names(records: &RdData) -> Vec<String> {
    match records {
        RdData::Relation(r) => r.schema.names().map(str::to_string).collect(),
        RdData::Collection(_) => Vec::new(),
    }
}

/// Common attribute type of numeric values: integers of one signedness keep
/// it, anything else numeric widens to float.
fn infer_attr_type<'v>(name: &str, values: impl Iterator<Item = &'v Value>) -> Result<AttrType> {
    let mut ty: Option<AttrType> = None;
    for v in values {
        let t = match v {
            Value::Null => continue,
            Value::Int(_) => AttrType::Int,
            Value::UInt(_) => AttrType::UInt,
            Value::Float(_) => AttrType::Float,
            other => return Err(Error::Type(format!("'{name}' holds a {} value; cells are numeric", other.type_name()))),
        };
        ty = Some(match ty {
            None => t,
            Some(prev) if prev == t => t,
            Some(_) => AttrType::Float,
        });
    }
    Ok(ty.unwrap_or(AttrType::Float))
}

fn attr_type_of(data: &RdData, reader: &PathReader, name: &str) -> Result<AttrType> {
    if let Some(t) = AttrType::from_value_type(&reader.value_type(data)) {
        return Ok(t);
    }
    let values: Vec<Value> = (0..data.len()).map(|i| reader.get(data, i)).collect();
    infer_attr_type(name, values.iter())
}

fn last_segment(path: &str) -> &str {
    path.rsplit('.').next().unwrap_or(path)
}

impl<'a> Emitter<'a> {
    fn new(
        records: &'a RdData,
        array: &StoredArray,
        binding: &DimBinding,
        spec: &JoinOutputSpec,
        out: Option<&'a StoredArray>,
        buffered: bool,
    ) -> Result<Emitter<'a>> {
        let cell_attrs = array.schema().attrs();
        let rec_names = record_names(records);
        let taken: HashSet<String> = rec_names.iter().cloned().collect();
        let cell_cols: Vec<(String, usize)> =
            cell_attrs.iter().enumerate().map(|(i, (n, _))| (rename(n, &taken, &spec.array_alias), i)).collect();
        let record_col = |name: &str| -> Result<(String, OutCol)> {
            Ok((name.to_string(), OutCol::Record(PathReader::new(records, name)?)))
        };
        // resolves a projected name against the default output names
        let resolve = |name: &str| -> Result<(String, OutCol)> {
            if let Some((n, i)) = cell_cols.iter().find(|(n, _)| n == name) {
                return Ok((n.clone(), OutCol::Cell(*i)));
            }
            if rec_names.iter().any(|n| n == name) || matches!(records, RdData::Collection(_)) {
                return record_col(name);
            }
            if let Some(i) = cell_attrs.iter().position(|(n, _)| n == name) {
                return Ok((cell_cols[i].0.clone(), OutCol::Cell(i)));
            }
            Err(Error::Plan(format!("unknown output attribute '{name}'")))
        };
        let cells_only = || cell_cols.iter().map(|(n, i)| (n.clone(), OutCol::Cell(*i)));

        let mut whole_doc = false;
        let mut schema = None;
        let mut types = Vec::new();
        let (cols, sink) = match spec.model {
            Model::Relational => {
                if !matches!(records, RdData::Relation(_)) {
                    return Err(Error::Spec("relational join output needs a relation on the record side".into()));
                }
                let cols: Vec<(String, OutCol)> = match &spec.project {
                    None => rec_names.iter().map(|n| record_col(n)).chain(cells_only().map(Ok)).collect::<Result<_>>()?,
                    Some(names) => names.iter().map(|n| resolve(n)).collect::<Result<_>>()?,
                };
                let attrs = cols
                    .iter()
                    .map(|(n, c)| {
                        let ty = match c {
                            OutCol::Record(r) => r.value_type(records),
                            OutCol::Cell(i) => cell_attrs[*i].1.value_type(),
                        };
                        Attribute::new(n.clone(), ty)
                    })
                    .collect();
                schema = Some(Schema::new(attrs)?);
                (cols, Sink::Rows(Vec::new()))
            }
            Model::Document => {
                let cols = match &spec.project {
                    None => {
                        whole_doc = true;
                        cells_only().collect()
                    }
                    Some(names) => names.iter().map(|n| resolve(n)).collect::<Result<_>>()?,
                };
                (cols, Sink::Docs(Vec::new()))
            }
            Model::Array => {
                let bound = |n: &str| binding.paths.iter().any(|p| p == n);
                let cols: Vec<(String, OutCol)> = match &spec.project {
                    None => rec_names
                        .iter()
                        .filter(|n| !binding.paths.iter().any(|p| p == *n || last_segment(p) == n.as_str()))
                        .map(|n| record_col(n))
                        .chain(cells_only().map(Ok))
                        .collect::<Result<_>>()?,
                    Some(names) => {
                        if let Some(missing) = binding.paths.iter().find(|p| !names.contains(p)) {
                            return Err(Error::Spec(format!(
                                "array output needs every bound dimension projected; '{missing}' is not"
                            )));
                        }
                        names.iter().filter(|n| !bound(n)).map(|n| resolve(n)).collect::<Result<_>>()?
                    }
                };
                types = cols
                    .iter()
                    .map(|(n, c)| match c {
                        OutCol::Record(r) => attr_type_of(records, r, n),
                        OutCol::Cell(i) => Ok(cell_attrs[*i].1),
                    })
                    .collect::<Result<_>>()?;
                let sink = match out {
                    None => Sink::Pending,
                    Some(out) if buffered => Sink::Buffered(out, Vec::new()),
                    Some(out) => Sink::Cells(TileWriter::new(out)),
                };
                (cols, sink)
            }
            Model::InterModel => return Err(Error::Spec("join output must be relational, document or array".into())),
        };
        Ok(Emitter { records, cols, whole_doc, types, schema, sink, rows: 0 })
    }

    /// Output schema of an array result.
    fn array_schema(
        records: &RdData,
        array: &StoredArray,
        binding: &DimBinding,
        spec: &JoinOutputSpec,
    ) -> Result<CellSchema> {
        let e = Emitter::new(records, array, binding, spec, None, true)?;
        let attrs = e.cols.iter().map(|(n, _)| n.clone()).zip(e.types.iter().copied()).collect();
        CellSchema::new(array.schema().dims().to_vec(), attrs)
    }

    fn push(&mut self, record: usize, coord: &[u64], cell: &[Scalar]) -> Result<()> {
        self.rows += 1;
        match &mut self.sink {
            Sink::Rows(rows) => {
                let row = self
                    .cols
                    .iter()
                    .map(|(_, c)| match c {
                        OutCol::Record(r) => r.get(self.records, record),
                        OutCol::Cell(i) => cell[*i].to_value(),
                    })
                    .collect();
                rows.push(row);
            }
            Sink::Docs(docs) => {
                let mut doc = if self.whole_doc {
                    match self.records {
                        RdData::Collection(c) => c.docs[record].clone(),
                        RdData::Relation(r) => {
                            let mut d = Document::new();
                            for (a, v) in r.schema.attrs().iter().zip(&r.rows[record]) {
                                d.insert(a.name.clone(), v.clone());
                            }
                            d
                        }
                    }
                } else {
                    Document::new()
                };
                for (name, c) in &self.cols {
                    let v = match c {
                        OutCol::Record(r) => r.get(self.records, record),
                        OutCol::Cell(i) => cell[*i].to_value(),
                    };
                    if matches!(c, OutCol::Record(_)) && v.is_null() {
                        continue;
                    }
                    if self.whole_doc && doc.get(name).is_none() && !name.contains('.') {
                        doc.insert(name.clone(), v);
                    } else {
                        doc.dot_set(name, v)?;
                    }
                }
                docs.push(doc);
            }
            Sink::Pending => return Err(Error::Internal("array output without a target array".into())),
            Sink::Cells(_) | Sink::Buffered(..) => {
                let values = self
                    .cols
                    .iter()
                    .zip(&self.types)
                    .map(|((name, c), &ty)| match c {
                        OutCol::Record(r) => {
                            let v = r.get(self.records, record);
                            if v.is_null() {
                                return Err(Error::Type(format!("'{name}' is null; cells cannot hold nulls")));
                            }
                            Scalar::from_value(&v, ty)
                        }
                        OutCol::Cell(i) => Ok(cell[*i]),
                    })
                    .collect::<Result<Vec<_>>>()?;
                match &mut self.sink {
                    Sink::Cells(w) => w.write_cell(coord, values)?,
                    Sink::Buffered(_, cells) => cells.push((coord.to_vec(), values)),
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Option<RdData>> {
        match self.sink {
            Sink::Rows(rows) => Ok(Some(RdData::Relation(Relation::new_unchecked(
                self.schema.expect("relational output has a schema"),
                rows,
            )))),
            Sink::Docs(docs) => {
                let name = match self.records {
                    RdData::Collection(c) => c.name.clone(),
                    RdData::Relation(_) => "join".into(),
                };
                Ok(Some(RdData::Collection(Collection::new(name, docs))))
            }
            Sink::Cells(w) => {
                w.finish()?;
                Ok(None)
            }
            Sink::Buffered(out, cells) => {
                write_grouped(out, cells)?;
                Ok(None)
            }
            Sink::Pending => Ok(None),
        }
    }
}

/// Writes cells tile by tile after bucketing them by tile coordinate.
fn write_grouped(out: &StoredArray, cells: Vec<(Vec<u64>, Vec<Scalar>)>) -> Result<u64> {
    let meta = out.meta();
    if let Some((c, _)) = cells.iter().find(|(c, _)| !meta.contains(c)) {
        return Err(Error::Bounds(format!("cell {c:?} outside array {:?}", meta.size())));
    }
    let coords: Vec<Vec<u64>> = cells.iter().map(|(c, _)| c.clone()).collect();
    let buckets = StageBuckets::build(&BoundKeys::from_coords(meta.ndim(), &coords), meta, false);
    let mut cells: Vec<Option<(Vec<u64>, Vec<Scalar>)>> = cells.into_iter().map(Some).collect();
    let mut writer = TileWriter::new(out);
    for i in buckets.order {
        let (c, v) = cells[i].take().expect("each cell written once");
        writer.write_cell(&c, v)?;
    }
    writer.finish()
}

fn output_array(
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
) -> Result<Option<StoredArray>> {
    if spec.model != Model::Array {
        return Ok(None);
    }
    let schema = Emitter::array_schema(records, array, binding, spec)?;
    let meta = ArrayMeta::new(schema, array.meta().size().to_vec(), array.meta().tile_size().to_vec())?;
    StoredArray::create(meta, array.layout(), array.pool().clone()).map(Some)
}

fn check_binding(array: &StoredArray, binding: &DimBinding) -> Result<()> {
    if binding.ndim() != array.meta().ndim() {
        return Err(Error::Binding(format!(
            "{} bound paths for a {}-d array",
            binding.ndim(),
            array.meta().ndim()
        )));
    }
    Ok(())
}

fn finish_output(emitted: Option<RdData>, out: Option<StoredArray>) -> JoinOutput {
    match (emitted, out) {
        (Some(d), _) => JoinOutput::Rd(d),
        (None, Some(a)) => JoinOutput::Array(a),
        (None, None) => unreachable!("array sink always has an array"),
    }
}

/// Probes `order` against the array with a cache of the current tile.
fn probe(
    keys: &BoundKeys,
    order: &[usize],
    array: &StoredArray,
    emitter: &mut Emitter<'_>,
    stats: &mut JoinStats,
    mut trace: Option<&mut Vec<ProbeStep>>,
) -> Result<()> {
    let meta = array.meta();
    let ts = meta.tile_size();
    let d = meta.ndim();
    let mut current: Option<(Vec<u64>, crate::array::PinnedTile<'_>)> = None;
    let mut tc = vec![0u64; d];
    let mut cc = vec![0u64; d];
    for &r in order {
        let coord = keys.coord(r).expect("probed records have coordinates");
        for k in 0..d {
            tc[k] = coord[k] / ts[k];
            cc[k] = coord[k] % ts[k];
        }
        let fresh = current.as_ref().is_none_or(|(t, _)| *t != tc);
        if fresh {
            // unpin before pinning so a one-tile pool can hold the next tile
            drop(current.take());
            let tile = array.pin(&tc)?;
            stats.pinned.push(tc.clone());
            current = Some((tc.clone(), tile));
        }
        let tile = &current.as_ref().expect("tile pinned").1;
        let pos = tile.locate_counted(&cc, &mut stats.comparisons)?;
        if let Some(pos) = pos {
            let values = tile.values(pos);
            emitter.push(r, coord, &values)?;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(ProbeStep { record: r, tc: tc.clone(), cc: cc.clone(), pinned: fresh, matched: pos.is_some() });
        }
    }
    Ok(())
}

fn counters(array: &StoredArray) -> (u64, u64) {
    (array.total_pins(), array.total_reads())
}

fn run_probe_join(
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
    strategy: Strategy,
    trace: Option<&mut MshjTrace>,
) -> Result<(JoinOutput, JoinStats)> {
    let start = Instant::now();
    check_binding(array, binding)?;
    let out = output_array(records, array, binding, spec)?;
    let mut emitter = Emitter::new(records, array, binding, spec, out.as_ref(), false)?;
    let mut stats = JoinStats::new(strategy, records.len());
    let (pins0, reads0) = counters(array);

    let build_start = Instant::now();
    let keys = BoundKeys::extract(records, binding, false)?;
    let order = if strategy == Strategy::Mshj {
        let buckets = StageBuckets::build(&keys, array.meta(), trace.is_some());
        for _ in 0..binding.ndim() {
            stats.scan(records.len());
        }
        stats.dropped = buckets.dropped;
        buckets
    } else {
        let order: Vec<usize> =
            (0..keys.len()).filter(|&i| keys.coord(i).is_some_and(|c| array.meta().contains(c))).collect();
        StageBuckets { stages: Vec::new(), dropped: keys.len() - order.len(), order }
    };
    stats.dropped = order.dropped;
    stats.build_time = build_start.elapsed();

    let probe_start = Instant::now();
    stats.scan(order.order.len());
    let mut steps = Vec::new();
    probe(&keys, &order.order, array, &mut emitter, &mut stats, trace.is_some().then_some(&mut steps))?;
    stats.output_rows = emitter.rows;
    let emitted = emitter.finish()?;
    stats.probe_time = probe_start.elapsed();

    let (pins1, reads1) = counters(array);
    stats.tile_pins = pins1 - pins0;
    stats.tile_reads = reads1 - reads0;
    if let Some(t) = trace {
        *t = MshjTrace { buckets: order, probes: steps };
    }
    stats.total_time = start.elapsed();
    Ok((finish_output(emitted, out), stats))
}

/// Multi-stage hash join of records with an array on all dimensions: the
/// records are bucketed by tile through one stage per dimension, then
/// probed in bucket order so that each referenced tile is pinned once.
/// Records with no matching cell produce nothing.
pub fn mshj(
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
) -> Result<(JoinOutput, JoinStats)> {
    run_probe_join(records, array, binding, spec, Strategy::Mshj, None)
}

/// [`mshj`] that also returns the bucket contents and every probe step.
pub fn mshj_traced(
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
) -> Result<(JoinOutput, JoinStats, MshjTrace)> {
    let mut trace = MshjTrace { buckets: StageBuckets { stages: vec![], order: vec![], dropped: 0 }, probes: vec![] };
    let (out, stats) = run_probe_join(records, array, binding, spec, Strategy::Mshj, Some(&mut trace))?;
    Ok((out, stats, trace))
}

/// Probes records in input order with the same one-tile cache as [`mshj`],
/// without the building phase.
pub fn join_probe_only(
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
) -> Result<(JoinOutput, JoinStats)> {
    run_probe_join(records, array, binding, spec, Strategy::ProbeOnly, None)
}

/// Join condition for [`join_via_conversion`].
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Binding(DimBinding),
    /// Any predicate over `record_alias.*` paths and `array_alias.*`
    /// dimensions and attributes.
    Pred { pred: Expr, record_alias: String },
}

/// Converts the array to a relation of dimension and attribute columns,
/// joins it with the records in the relational engine, then writes the
/// result in the requested model.
pub fn join_via_conversion(
    records: &RdData,
    array: &StoredArray,
    cond: &Condition,
    spec: &JoinOutputSpec,
) -> Result<(JoinOutput, JoinStats)> {
    let start = Instant::now();
    let dims = array.schema().dims().to_vec();
    let (pred, record_alias) = match cond {
        Condition::Binding(b) => {
            check_binding(array, b)?;
            let alias = if spec.array_alias == "record" { "records" } else { "record" };
            (b.to_predicate(alias, &spec.array_alias, &dims)?, alias.to_string())
        }
        Condition::Pred { pred, record_alias } => (pred.clone(), record_alias.clone()),
    };
    // array output needs the bound paths; without a binding, dimensions are
    // bound through equalities in the predicate when there are any
    let binding = match cond {
        Condition::Binding(b) => b.clone(),
        Condition::Pred { .. } => DimBinding::from_predicate(&pred, &record_alias, &spec.array_alias, &dims)
            .unwrap_or_else(|| DimBinding::new(dims.clone())),
    };
    let mut stats = JoinStats::new(Strategy::Convert, records.len());
    let (pins0, reads0) = counters(array);

    let convert_start = Instant::now();
    let cells = array.cells()?;
    let as_rel = RdData::Relation(cells_to_relation(array, &cells)?);
    stats.convert_time = convert_start.elapsed();

    let join_start = Instant::now();
    let pairs = join_pairs(records, &as_rel, &record_alias, &spec.array_alias, &pred)?;
    stats.scan(records.len());
    stats.build_time = join_start.elapsed();

    let out = output_array(records, array, &binding, spec)?;
    let emit_start = Instant::now();
    let mut emitter = Emitter::new(records, array, &binding, spec, out.as_ref(), true)?;
    for (r, a) in pairs {
        let (coord, values) = &cells[a];
        emitter.push(r, coord, values)?;
    }
    stats.output_rows = emitter.rows;
    let emitted = emitter.finish()?;
    let emit_time = emit_start.elapsed();
    if spec.model == Model::Array {
        stats.convert_time += emit_time;
    } else {
        stats.probe_time = emit_time;
    }

    let (pins1, reads1) = counters(array);
    stats.tile_pins = pins1 - pins0;
    stats.tile_reads = reads1 - reads0;
    stats.total_time = start.elapsed();
    Ok((finish_output(emitted, out), stats))
}

/// Inter-model join dispatch. `Auto` uses [`mshj`] when the predicate is an
/// equi-join on every array dimension and [`join_via_conversion`]
/// otherwise.
pub fn inter_join(
    records: &RdData,
    array: &StoredArray,
    pred: &Expr,
    record_alias: &str,
    spec: &JoinOutputSpec,
    strategy: Strategy,
) -> Result<(JoinOutput, JoinStats)> {
    let dims = array.schema().dims();
    let binding = DimBinding::from_predicate(pred, record_alias, &spec.array_alias, dims);
    let need = |b: Option<DimBinding>| {
        b.ok_or_else(|| Error::Plan(format!("'{pred}' is not an equi-join on every array dimension; use the convert strategy")))
    };
    match strategy {
        Strategy::Mshj => mshj(records, array, &need(binding)?, spec),
        Strategy::ProbeOnly => join_probe_only(records, array, &need(binding)?, spec),
        Strategy::Convert => {
            join_via_conversion(records, array, &Condition::Pred { pred: pred.clone(), record_alias: record_alias.into() }, spec)
        }
        Strategy::Auto => match binding {
            Some(b) => mshj(records, array, &b, spec),
            None => join_via_conversion(
                records,
                array,
                &Condition::Pred { pred: pred.clone(), record_alias: record_alias.into() },
                spec,
            ),
        },
    }
}

/// Shape and layout of an array built from records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArraySpec {
    /// Paths bound to the dimensions, in order.
    pub dims: Vec<String>,
    /// Paths whose values become cell attributes.
    pub values: Vec<String>,
    /// Array size; one past the largest coordinate when `None`.
    pub size: Option<Vec<u64>>,
    /// Tile size; about [`DEFAULT_TILE_CELLS`] cells per tile when `None`.
    pub tile: Option<Vec<u64>>,
    pub layout: Layout,
}

impl ArraySpec {
    pub fn new<S: Into<String>>(dims: impl IntoIterator<Item = S>, values: impl IntoIterator<Item = S>) -> ArraySpec {
        ArraySpec {
            dims: dims.into_iter().map(Into::into).collect(),
            values: values.into_iter().map(Into::into).collect(),
            size: None,
            tile: None,
            layout: Layout::Coo,
        }
    }
}

/// Default tile extent for `ndim` dimensions.
pub fn default_tile_extent(ndim: usize) -> u64 {
    let mut e = 1u64;
    while (e + 1).pow(ndim as u32) <= DEFAULT_TILE_CELLS {
        e += 1;
    }
    e
}

/// Builds an array with one cell per record. Records are bucketed by tile
/// and written one tile at a time. Array names are the last segments of
/// the paths.
pub fn to_array(data: &RdData, spec: &ArraySpec, pool: Arc<BufferPool>) -> Result<StoredArray> {
    if spec.dims.is_empty() {
        return Err(Error::Spec("an array needs at least one dimension".into()));
    }
    let binding = DimBinding::new(spec.dims.clone());
    let keys = BoundKeys::extract(data, &binding, true)?;
    let ndim = spec.dims.len();
    let size = match &spec.size {
        Some(s) => {
            if s.len() != ndim {
                return Err(Error::Shape(format!("{} sizes for {ndim} dimensions", s.len())));
            }
            s.clone()
        }
        None => (0..ndim).map(|d| (0..keys.len()).map(|i| keys.coords[i * ndim + d] + 1).max().unwrap_or(1)).collect(),
    };
    let tile = match &spec.tile {
        Some(t) => t.clone(),
        None => {
            let e = default_tile_extent(ndim);
            size.iter().map(|&s| s.min(e)).collect()
        }
    };
    let readers = spec.values.iter().map(|p| PathReader::new(data, p)).collect::<Result<Vec<_>>>()?;
    let attrs = spec
        .values
        .iter()
        .zip(&readers)
        .map(|(p, r)| Ok((last_segment(p).to_string(), attr_type_of(data, r, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let dims = spec.dims.iter().map(|p| last_segment(p).to_string()).collect();
    let meta = ArrayMeta::new(CellSchema::new(dims, attrs)?, size, tile)?;
    let array = StoredArray::create(meta, spec.layout, pool)?;

    for i in 0..keys.len() {
        let c = keys.coord(i).expect("strict extraction");
        if !array.meta().contains(c) {
            return Err(Error::Bounds(format!("record {i} at {c:?} is outside array {:?}", array.meta().size())));
        }
    }
    let buckets = StageBuckets::build(&keys, array.meta(), false);
    let types = array.schema().attr_types();
    let mut writer = TileWriter::new(&array);
    for i in buckets.order {
        let values = readers
            .iter()
            .zip(&types)
            .zip(&spec.values)
            .map(|((r, &ty), p)| {
                let v = r.get(data, i);
                if v.is_null() {
                    return Err(Error::Type(format!("'{p}' of record {i} is null; cells cannot hold nulls")));
                }
                Scalar::from_value(&v, ty)
            })
            .collect::<Result<Vec<_>>>()?;
        writer.write_cell(keys.coord(i).expect("strict extraction"), values)?;
    }
    writer.finish()?;
    Ok(array)
}

fn cells_to_relation(array: &StoredArray, cells: &[(Vec<u64>, Vec<Scalar>)]) -> Result<Relation> {
    let schema = array.schema();
    let attrs = schema
        .dims()
        .iter()
        .map(|d| Attribute::new(d.clone(), ValueType::UInt))
        .chain(schema.attrs().iter().map(|(n, t)| Attribute::new(n.clone(), t.value_type())))
        .collect();
    let rows = cells
        .iter()
        .map(|(c, v)| c.iter().map(|&x| Value::UInt(x)).chain(v.iter().map(|s| s.to_value())).collect())
        .collect();
    Ok(Relation::new_unchecked(Schema::new(attrs)?, rows))
}

/// One row per cell: dimension columns (unsigned) then attribute columns,
/// in tile-major order.
pub fn to_relation(array: &StoredArray) -> Result<Relation> {
    cells_to_relation(array, &array.cells()?)
}

/// One document per cell with dimension and attribute keys.
pub fn array_to_collection(array: &StoredArray, name: &str) -> Result<Collection> {
    let rel = to_relation(array)?;
    Ok(relation_to_collection(&rel, name))
}

/// One document per row, keyed by attribute name.
pub fn relation_to_collection(rel: &Relation, name: &str) -> Collection {
    let docs = rel
        .rows
        .iter()
        .map(|row| {
            let mut d = Document::new();
            for (a, v) in rel.schema.attrs().iter().zip(row) {
                d.insert(a.name.clone(), v.clone());
            }
            d
        })
        .collect();
    Collection::new(name, docs)
}

/// Flattens documents into rows with one column per path. A missing path
/// is null when `null_fill`, otherwise a path error. Column types are the
/// common type of the non-null values, `Any` when they differ.
pub fn collection_to_relation(col: &Collection, paths: &[String], null_fill: bool) -> Result<Relation> {
    let segs = paths.iter().map(|p| split_path(p)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(col.len());
    for (i, doc) in col.docs.iter().enumerate() {
        let row = segs
            .iter()
            .zip(paths)
            .map(|(s, p)| match doc.get_segments(s) {
                Some(v) => Ok(v.clone()),
                None if null_fill => Ok(Value::Null),
                None => Err(Error::Path(format!("document {i} has no '{p}'"))),
            })
            .collect::<Result<Record>>()?;
        rows.push(row);
    }
    let attrs = paths
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut types = rows.iter().filter_map(|r: &Record| r[k].value_type());
            let ty = match types.next() {
                None => ValueType::Any,
                Some(first) => {
                    if types.all(|t| t == first) {
                        first
                    } else {
                        ValueType::Any
                    }
                }
            };
            Attribute::new(p.clone(), ty)
        })
        .collect();
    Ok(Relation::new_unchecked(Schema::new(attrs)?, rows))
}

/// Top-level keys of a collection in first-seen order.
pub fn collection_keys(col: &Collection) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut keys = Vec::new();
    for d in &col.docs {
        for k in d.keys() {
            if seen.insert(k.to_string()) {
                keys.push(k.to_string());
            }
        }
    }
    keys
}
