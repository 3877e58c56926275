//! Benchmark harness: inter-model join strategies over synthetic arrays,
//! and one shared buffer pool against per-engine quotas.
//!
//! Every run starts from a cold array cache. Timings are the median of
//! `reps` runs after one discarded warm-up run; all other columns come
//! from the last run and depend only on the seed and config.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mmdb::array::{Layout, StoredArray};
use mmdb::array_ops::{self, ArithOp};
use mmdb::bridge::{self, ArraySpec, Condition, DimBinding, JoinOutput, JoinOutputSpec, JoinStats, Strategy};
use mmdb::model::{ArrayMeta, AttrType, CellSchema, Relation, Scalar, Schema, Value, ValueType};
use mmdb::planner::Model;
use mmdb::pool::{BufferPool, EngineTag, PoolStats};
use mmdb::rd::{self, AggSpec, RdData, Registry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Buffer capacity for the join benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheSize {
    Unlimited,
    Bytes(u64),
    /// A multiple of the largest tile's size.
    Tiles(u64),
}

#[derive(Debug, Clone)]
pub struct MshjBench {
    pub dims: usize,
    pub layout: Layout,
    pub n_values: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub output: Model,
    pub cache: CacheSize,
    pub seed: u64,
    /// Fraction of cells present; dense layouts always use 1.
    pub density: f64,
    /// Array and tile size; defaults depend on `dims`.
    pub size: Option<Vec<u64>>,
    pub tile: Option<Vec<u64>>,
    pub reps: usize,
    /// Order-independent hash of the join output per row. Costs a sort of
    /// the output.
    pub checksum: bool,
}

impl MshjBench {
    pub fn new(dims: usize, layout: Layout, n_values: Vec<usize>) -> Self {
        MshjBench {
            dims,
            layout,
            n_values,
            strategies: vec![Strategy::Mshj, Strategy::Convert, Strategy::ProbeOnly],
            output: Model::Relational,
            cache: CacheSize::Unlimited,
            seed: 42,
            density: 0.1,
            size: None,
            tile: None,
            reps: 3,
            checksum: true,
        }
    }

    /// Array and tile sizes used for this config.
    pub fn shape(&self) -> (Vec<u64>, Vec<u64>) {
        let (s, t) = match self.dims {
            2 => (1000, 100),
            3 => (100, 20),
            _ => (30, 10),
        };
        (
            self.size.clone().unwrap_or_else(|| vec![s; self.dims]),
            self.tile.clone().unwrap_or_else(|| vec![t; self.dims]),
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(2..=4).contains(&self.dims) {
            return bad(format!("dims must be 2, 3 or 4, got {}", self.dims));
        }
        if self.layout == Layout::Csr && self.dims != 2 {
            return bad("csr needs 2 dimensions".into());
        }
        if self.n_values.is_empty() || self.strategies.is_empty() || self.reps == 0 {
            return bad("need at least one N, one strategy and one repetition".into());
        }
        if self.strategies.contains(&Strategy::Auto) {
            return bad("pick concrete strategies".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density must be in (0, 1], got {}", self.density));
        }
        let (size, tile) = self.shape();
        if size.len() != self.dims || tile.len() != self.dims {
            return bad("size and tile need one entry per dimension".into());
        }
        if let CacheSize::Bytes(0) | CacheSize::Tiles(0) = self.cache {
            return bad("cache size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub seed: u64,
    pub strategy: String,
    pub n: usize,
    pub d: usize,
    pub layout: String,
    pub output: String,
    pub cache_bytes: u64,
    pub wall_ms: f64,
    pub build_ms: f64,
    pub probe_ms: f64,
    pub convert_ms: f64,
    pub output_rows: usize,
    pub checksum: String,
    pub tile_pins: u64,
    pub tile_reads: u64,
    pub block_scans: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Synthetic array with one float attribute `v`. Sparse layouts keep each
/// cell with probability `density`.
pub fn synthetic_array(
    size: &[u64],
    tile: &[u64],
    layout: Layout,
    density: f64,
    seed: u64,
    pool: Arc<BufferPool>,
) -> Result<StoredArray> {
    let dims = (0..size.len()).map(|i| format!("d{i}")).collect();
    let meta = ArrayMeta::new(CellSchema::new(dims, vec![("v".into(), AttrType::Float)])?, size.to_vec(), tile.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = if layout == Layout::Dense { 1.0 } else { density };
    let total: u64 = size.iter().product();
    let mut cells = Vec::new();
    for lin in 0..total {
        let x: f64 = rng.gen();
        if keep < 1.0 && rng.gen::<f64>() >= keep {
            continue;
        }
        let mut c = vec![0; size.len()];
        let mut rest = lin;
        for d in (0..size.len()).rev() {
            c[d] = rest % size[d];
            rest /= size[d];
        }
        cells.push((c, vec![Scalar::Float(x)]));
    }
    Ok(StoredArray::build(meta, layout, pool, cells)?)
}

/// `n` records with uniform coordinates `d0..` and an `id`. With
/// `unique`, coordinates do not repeat (and `n` is capped by the array).
pub fn synthetic_records(size: &[u64], n: usize, unique: bool, seed: u64) -> RdData {
    let mut attrs: Vec<(String, ValueType)> = (0..size.len()).map(|i| (format!("d{i}"), ValueType::UInt)).collect();
    attrs.push(("id".into(), ValueType::UInt));
    let refs: Vec<(&str, ValueType)> = attrs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let schema = Schema::of(&refs).expect("distinct names");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap: u64 = size.iter().product();
    let n = if unique { n.min(cap as usize) } else { n };
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let c: Vec<u64> = size.iter().map(|&s| rng.gen_range(0..s)).collect();
        if unique && !seen.insert(c.clone()) {
            continue;
        }
        let mut row: Vec<Value> = c.into_iter().map(Value::UInt).collect();
        row.push(Value::UInt(rows.len() as u64));
        rows.push(row);
    }
    RdData::Relation(Relation::new(schema, rows).expect("rows match schema"))
}

/// Order-independent hash of a join output.
pub fn output_checksum(out: &JoinOutput) -> Result<String> {
    let mut sum = 0u64;
    for row in out.sorted_rows()? {
        let mut h = DefaultHasher::new();
        format!("{row:?}").hash(&mut h);
        sum = sum.wrapping_add(h.finish());
    }
    Ok(format!("{sum:016x}"))
}

pub fn run_strategy(
    strategy: Strategy,
    records: &RdData,
    array: &StoredArray,
    binding: &DimBinding,
    spec: &JoinOutputSpec,
) -> mmdb::Result<(JoinOutput, JoinStats)> {
    match strategy {
        Strategy::Mshj => bridge::mshj(records, array, binding, spec),
        Strategy::ProbeOnly => bridge::join_probe_only(records, array, binding, spec),
        Strategy::Convert => bridge::join_via_conversion(records, array, &Condition::Binding(binding.clone()), spec),
        Strategy::Auto => {
            let pred = binding.to_predicate("r", &spec.array_alias, array.schema().dims())?;
            bridge::inter_join(records, array, &pred, "r", spec, Strategy::Auto)
        }
    }
}

fn largest_tile(array: &StoredArray) -> Result<u64> {
    let meta = array.meta();
    let mut max = 1;
    for i in 0..meta.tile_count() {
        if let Some(t) = array.read_tile_uncached(&meta.tile_coord(i))? {
            max = max.max(t.byte_size());
        }
    }
    Ok(max)
}

pub fn bench_mshj(cfg: &MshjBench) -> Result<BenchReport> {
    cfg.validate()?;
    let (size, tile) = cfg.shape();
    let pool = Arc::new(BufferPool::new(u64::MAX));
    let array = synthetic_array(&size, &tile, cfg.layout, cfg.density, cfg.seed, pool.clone())?;
    let cache_bytes = match cfg.cache {
        CacheSize::Unlimited => u64::MAX,
        CacheSize::Bytes(b) => b,
        CacheSize::Tiles(k) => k.saturating_mul(largest_tile(&array)?),
    };
    array.drop_cache();
    pool.set_capacity(cache_bytes)?;
    let binding = DimBinding::new((0..cfg.dims).map(|i| format!("d{i}")));
    let spec = JoinOutputSpec::new(cfg.output);
    let mut report = BenchReport::default();

    for &n in &cfg.n_values {
        let rec_seed = cfg.seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let records = synthetic_records(&size, n, cfg.output == Model::Array, rec_seed);
        for &strategy in &cfg.strategies {
            let mut walls = Vec::new();
            let mut builds = Vec::new();
            let mut probes = Vec::new();
            let mut converts = Vec::new();
            let mut last = None;
            for rep in 0..=cfg.reps {
                array.drop_cache();
                array.reset_counters();
                let before = pool.stats();
                let start = Instant::now();
                let (out, stats) = run_strategy(strategy, &records, &array, &binding, &spec)?;
                let wall = start.elapsed();
                let delta = pool.stats().since(&before);
                if rep == 0 {
                    continue;
                }
                walls.push(ms(wall));
                builds.push(ms(stats.build_time));
                probes.push(ms(stats.probe_time));
                converts.push(ms(stats.convert_time));
                last = Some((out, stats, delta));
            }
            let (out, stats, delta) = last.expect("reps > 0");
            let checksum = if cfg.checksum { output_checksum(&out)? } else { String::new() };
            drop(out);
            report.rows.push(BenchRow {
                scenario: format!("join-d{}-{}-n{}", cfg.dims, cfg.layout, n),
                seed: cfg.seed,
                strategy: strategy.name().to_string(),
                n,
                d: cfg.dims,
                layout: cfg.layout.to_string(),
                output: cfg.output.to_string(),
                cache_bytes,
                wall_ms: median(walls),
                build_ms: median(builds),
                probe_ms: median(probes),
                convert_ms: median(converts),
                output_rows: stats.output_rows,
                checksum,
                tile_pins: stats.tile_pins,
                tile_reads: stats.tile_reads,
                block_scans: stats.block_scans,
                hits: delta.hits,
                misses: delta.misses,
                evictions: delta.evictions,
            });
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- pool

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Unified,
    Split,
    Both,
}

/// A factorization-style workload: a ratings relation kept by the record
/// engine, the ratings matrix and two factors in the array engine, and
/// `iterations` multiplicative update rounds.
#[derive(Debug, Clone)]
pub struct PoolBench {
    /// Total capacity; the workload's measured peak when `None`.
    pub capacity: Option<u64>,
    pub mode: PoolMode,
    pub rows: u64,
    pub cols: u64,
    pub rank: u64,
    pub density: f64,
    pub iterations: usize,
    pub tile_extent: u64,
    pub seed: u64,
    pub reps: usize,
}

impl Default for PoolBench {
    fn default() -> Self {
        PoolBench {
            capacity: None,
            mode: PoolMode::Both,
            rows: 400,
            cols: 300,
            rank: 10,
            density: 0.05,
            iterations: 2,
            tile_extent: 50,
            seed: 7,
            reps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolRow {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub capacity: u64,
    pub record_quota: u64,
    pub array_quota: u64,
    pub wall_ms: f64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub do_eviction_calls: u64,
    pub record_peak: u64,
    pub array_peak: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolReport {
    pub rows: Vec<PoolRow>,
}

impl PoolReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }

    pub fn row(&self, mode: &str) -> Option<&PoolRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Resident bytes of the workload without any capacity limit:
/// (total, record engine, array engine) peaks.
pub fn pool_working_set(cfg: &PoolBench) -> Result<(u64, u64, u64)> {
    let pool = Arc::new(BufferPool::new(u64::MAX));
    pool_workload(cfg, &pool)?;
    Ok((pool.peak_bytes(), pool.peak_bytes_of(EngineTag::Record), pool.peak_bytes_of(EngineTag::Array)))
}

fn ratings(cfg: &PoolBench) -> RdData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schema = Schema::of(&[("row", ValueType::UInt), ("col", ValueType::UInt), ("rating", ValueType::Float)])
        .expect("distinct names");
    let mut rows = Vec::new();
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            if rng.gen::<f64>() < cfg.density {
                rows.push(vec![Value::UInt(r), Value::UInt(c), Value::Float(rng.gen_range(1..=5) as f64)]);
            }
        }
    }
    RdData::Relation(Relation::new(schema, rows).expect("rows match schema"))
}

fn pool_workload(cfg: &PoolBench, pool: &Arc<BufferPool>) -> Result<()> {
    let mut registry = Registry::new(Some(pool.clone()));
    let data = registry.materialize("ratings", ratings(cfg))?;
    let per_row = rd::aggregate(&data, &["row".to_string()], &["count(*) AS n".parse::<AggSpec>()?])?;
    registry.materialize("per_row", per_row)?;

    let e = cfg.tile_extent;
    let mut spec = ArraySpec::new(["row", "col"], ["rating"]);
    spec.size = Some(vec![cfg.rows, cfg.cols]);
    spec.tile = Some(vec![e.min(cfg.rows), e.min(cfg.cols)]);
    let x = bridge::to_array(&data, &spec, pool.clone())?;
    let mut w = array_ops::rand(&[cfg.rows, cfg.rank], &["row", "k"], "rating", cfg.seed + 1, e, pool.clone())?;
    let mut h = array_ops::rand(&[cfg.rank, cfg.cols], &["k", "col"], "rating", cfg.seed + 2, e, pool.clone())?;
    use array_ops::{ewise, matmul, transpose};
    for _ in 0..cfg.iterations {
        let ht = transpose(&h)?;
        let num = matmul(&x, &ht)?;
        let den = matmul(&matmul(&w, &h)?, &ht)?;
        w = ewise(ArithOp::Mul, &w, &ewise(ArithOp::Div, &num, &den)?)?;
        let wt = transpose(&w)?;
        let num = matmul(&wt, &x)?;
        let den = matmul(&matmul(&wt, &w)?, &h)?;
        h = ewise(ArithOp::Mul, &h, &ewise(ArithOp::Div, &num, &den)?)?;
    }
    let filled = matmul(&w, &h)?;
    // read the reconstruction back through the record engine
    let rel = RdData::Relation(bridge::to_relation(&filled)?);
    let best = rd::aggregate(&rel, &["row".to_string()], &["max(rating) AS best".parse::<AggSpec>()?])?;
    registry.materialize("best", best)?;
    Ok(())
}

fn run_pool(cfg: &PoolBench, mode: &str, capacity: u64, make: impl Fn() -> BufferPool) -> Result<PoolRow> {
    let mut walls = Vec::new();
    let mut last = None;
    for rep in 0..=cfg.reps {
        let pool = Arc::new(make());
        let start = Instant::now();
        pool_workload(cfg, &pool)?;
        let wall = start.elapsed();
        if rep > 0 {
            walls.push(ms(wall));
            last = Some((pool.stats(), pool.peak_bytes_of(EngineTag::Record), pool.peak_bytes_of(EngineTag::Array)));
        }
    }
    let (stats, record_peak, array_peak): (PoolStats, u64, u64) = last.expect("reps > 0");
    let (record_quota, array_quota) = if mode == "split" { (capacity / 2, capacity - capacity / 2) } else { (capacity, capacity) };
    Ok(PoolRow {
        scenario: format!("pool-{}x{}-r{}", cfg.rows, cfg.cols, cfg.rank),
        seed: cfg.seed,
        mode: mode.to_string(),
        capacity,
        record_quota,
        array_quota,
        wall_ms: median(walls),
        hits: stats.hits,
        misses: stats.misses,
        evictions: stats.evictions,
        do_eviction_calls: stats.do_eviction_calls,
        record_peak,
        array_peak,
    })
}

/// Runs the workload under one pool of the full capacity and/or under two
/// halves, one per engine.
pub fn bench_bufferpool(cfg: &PoolBench) -> Result<PoolReport> {
    if cfg.reps == 0 || cfg.rows == 0 || cfg.cols == 0 || cfg.rank == 0 || cfg.tile_extent == 0 {
        return Err(CliError::Config("sizes, tile extent and repetitions must be positive".into()));
    }
    let capacity = match cfg.capacity {
        Some(c) => c,
        None => pool_working_set(cfg)?.0,
    };
    let mut report = PoolReport::default();
    if cfg.mode != PoolMode::Split {
        report.rows.push(run_pool(cfg, "unified", capacity, || BufferPool::new(capacity))?);
    }
    if cfg.mode != PoolMode::Unified {
        let half = capacity / 2;
        report.rows.push(run_pool(cfg, "split", capacity, || BufferPool::with_quotas(half, capacity - half))?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dims: usize, layout: Layout) -> MshjBench {
        let mut b = MshjBench::new(dims, layout, vec![50, 400]);
        b.size = Some(vec![24; dims]);
        b.tile = Some(vec![5; dims]);
        b.density = 0.3;
        b.reps = 1;
        b
    }

    #[test]
    fn strategies_agree_and_reports_repeat() {
        for (d, l) in [(2, Layout::Csr), (3, Layout::Dense), (4, Layout::Coo)] {
            let cfg = small(d, l);
            let a = bench_mshj(&cfg).unwrap();
            assert_eq!(a.rows.len(), 6);
            for chunk in a.rows.chunks(3) {
                assert!(chunk.iter().all(|r| r.checksum == chunk[0].checksum && r.output_rows == chunk[0].output_rows));
            }
            let b = bench_mshj(&cfg).unwrap();
            let strip = |r: &BenchRow| BenchRow { wall_ms: 0.0, build_ms: 0.0, probe_ms: 0.0, convert_ms: 0.0, ..r.clone() };
            assert_eq!(a.rows.iter().map(strip).collect::<Vec<_>>(), b.rows.iter().map(strip).collect::<Vec<_>>());
        }
    }

    #[test]
    fn one_tile_cache_reads_each_referenced_tile_once() {
        let mut cfg = small(2, Layout::Coo);
        cfg.cache = CacheSize::Tiles(1);
        cfg.checksum = false;
        let r = bench_mshj(&cfg).unwrap();
        for chunk in r.rows.chunks(3) {
            let (m, p) = (&chunk[0], &chunk[2]);
            assert_eq!(m.strategy, "mshj");
            assert_eq!(p.strategy, "probe-only");
            assert!(m.tile_reads <= m.tile_pins);
            assert!(p.tile_reads >= m.tile_reads);
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(bench_mshj(&small(3, Layout::Csr)).is_err());
        let mut c = small(2, Layout::Coo);
        c.n_values.clear();
        assert!(bench_mshj(&c).is_err());
        assert!(bench_mshj(&small(5, Layout::Coo)).is_err());
    }

    #[test]
    fn roomy_pools_never_evict() {
        let cfg = PoolBench { rows: 40, cols: 30, rank: 3, tile_extent: 10, reps: 1, capacity: Some(u64::MAX / 4), ..Default::default() };
        let r = bench_bufferpool(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.evictions == 0));
    }
}
