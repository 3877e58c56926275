//! Acceptance suite. Runs every criterion in sequence (timings are taken
//! on an otherwise idle process) and prints one line per criterion.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mmdb::array::{Layout, StoredArray};
use mmdb::bridge::{self, join_probe_only, mshj, mshj_traced, ArraySpec, DimBinding, JoinOutputSpec};
use mmdb::exec::NodeValue;
use mmdb::model::{cmp_records, ArrayMeta, AttrType, CellSchema, Relation, Scalar, Schema, Value, ValueType};
use mmdb::planner::{self, Model};
use mmdb::pool::{BufferObject, BufferPool, EngineTag, EvictionHandler, ObjectId};
use mmdb::rd::RdData;
use mmdb_cli::bench::{self, MshjBench, PoolBench};
use mmdb_cli::run::{self, RunConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn unlimited() -> Arc<BufferPool> {
    Arc::new(BufferPool::new(u64::MAX))
}

// ------------------------------------------------------------ 1 and 3

fn layouts_for(ndim: usize) -> &'static [Layout] {
    if ndim == 2 {
        &[Layout::Dense, Layout::Coo, Layout::Csr]
    } else {
        &[Layout::Dense, Layout::Coo]
    }
}

struct JoinSweep {
    instances: usize,
    max_records: usize,
    mismatches: Vec<String>,
    pin_violations: Vec<String>,
    revisiting: usize,
    read_violations: Vec<String>,
    elapsed: f64,
}

/// Random instances over every (D, layout) pair; each checked against
/// the nested-loop oracle, for exactly-once pinning, and under a one-tile
/// cache against the shuffled probe-only join.
fn join_sweep() -> JoinSweep {
    let start = Instant::now();
    let mut s = JoinSweep {
        instances: 0,
        max_records: 0,
        mismatches: vec![],
        pin_violations: vec![],
        revisiting: 0,
        read_violations: vec![],
        elapsed: 0.0,
    };
    let combos: Vec<(usize, Layout)> = (2..=4).flat_map(|d| layouts_for(d).iter().map(move |&l| (d, l))).collect();
    let per_combo = 240 / combos.len();
    for (ci, &(ndim, layout)) in combos.iter().enumerate() {
        for k in 0..per_combo {
            let seed = (ci * 1000 + k) as u64;
            // every tenth instance uses the full record range
            let max_records = if k % 10 == 0 { 10_000 } else { 2_000 };
            let pool = unlimited();
            let inst = support::join_instance(seed, ndim, layout, max_records, 2_000, pool.clone());
            let tag = format!("D={ndim} {layout} seed={seed}");
            s.instances += 1;
            s.max_records = s.max_records.max(inst.records.len());
            let binding = DimBinding::new(support::dims(ndim));
            let spec = JoinOutputSpec::new(Model::Relational);

            let cells = inst.array.cells().unwrap();
            let expected = support::nested_loop_join(&inst.records, &cells, ndim);
            inst.array.reset_counters();
            let (out, _) = mshj(&inst.records, &inst.array, &binding, &spec).unwrap();
            if out.sorted_rows().unwrap() != expected {
                s.mismatches.push(tag.clone());
            }
            let referenced = support::referenced_tiles(&inst.records, &inst.array, ndim);
            for (idx, &c) in inst.array.pin_counts().iter().enumerate() {
                if c != u64::from(referenced.contains(&idx)) {
                    s.pin_violations.push(format!("{tag} tile {idx} pinned {c}"));
                }
            }

            // one-tile cache
            let max_tile = (0..inst.array.meta().tile_count())
                .filter_map(|i| inst.array.read_tile_uncached(&inst.array.meta().tile_coord(i)).unwrap())
                .map(|t| t.byte_size())
                .max();
            let Some(max_tile) = max_tile else { continue };
            inst.array.drop_cache();
            pool.set_capacity(max_tile).unwrap();
            inst.array.reset_counters();
            let (_, m) = mshj(&inst.records, &inst.array, &binding, &spec).unwrap();
            let mut shuffled = inst.records.as_relation().unwrap().clone();
            shuffled.rows.shuffle(&mut support::rng(seed ^ 0x5eed));
            let meta = inst.array.meta();
            let present: Vec<bool> =
                (0..meta.tile_count()).map(|i| inst.array.has_tile(&meta.tile_coord(i)).unwrap()).collect();
            let accesses: Vec<usize> = shuffled
                .rows
                .iter()
                .filter_map(|row| {
                    let c: Vec<u64> = row[..ndim].iter().map(|v| v.as_coord().unwrap()).collect();
                    meta.contains(&c).then(|| meta.tile_index(&meta.split(&c).0).unwrap())
                })
                .filter(|&t| present[t])
                .collect();
            let distinct = accesses.iter().collect::<std::collections::HashSet<_>>().len();
            inst.array.drop_cache();
            inst.array.reset_counters();
            let (_, p) = join_probe_only(&RdData::Relation(shuffled), &inst.array, &binding, &spec).unwrap();
            if m.tile_reads != distinct as u64 {
                s.read_violations.push(format!("{tag}: mshj read {} tiles, {distinct} referenced", m.tile_reads));
            }
            if support::one_tile_cache_reads(&accesses) > distinct {
                s.revisiting += 1;
                if p.tile_reads <= m.tile_reads {
                    s.read_violations.push(format!("{tag}: probe-only {} reads vs mshj {}", p.tile_reads, m.tile_reads));
                }
            }
        }
    }
    s.elapsed = start.elapsed().as_secs_f64();
    s
}

fn criterion1(s: &JoinSweep) -> Outcome {
    ensure!(s.instances >= 200, "only {} instances", s.instances);
    ensure!(s.mismatches.is_empty(), "{} mismatches, first {}", s.mismatches.len(), s.mismatches[0]);
    ensure!(s.elapsed < 120.0, "sweep took {:.1}s", s.elapsed);
    Ok(format!("{} instances, largest relation {} rows, {:.1}s", s.instances, s.max_records, s.elapsed))
}

fn criterion3(s: &JoinSweep) -> Outcome {
    ensure!(s.pin_violations.is_empty(), "{} pin violations, first {}", s.pin_violations.len(), s.pin_violations[0]);
    ensure!(s.read_violations.is_empty(), "{} read violations, first {}", s.read_violations.len(), s.read_violations[0]);
    ensure!(s.revisiting > 0, "no instance revisited tiles");
    Ok(format!("pins exact on {} runs; probe-only read more on all {} revisiting instances", s.instances, s.revisiting))
}

// ------------------------------------------------------------------ 2

fn criterion2() -> Outcome {
    let schema = Schema::of(&[("v0", ValueType::UInt), ("v1", ValueType::UInt)]).unwrap();
    let recs = [(23u64, 8u64), (4, 3), (17, 1), (8, 6), (12, 4)];
    let rows = recs.iter().map(|&(a, b)| vec![Value::UInt(a), Value::UInt(b)]).collect();
    let records = RdData::Relation(Relation::new(schema, rows).unwrap());
    let meta = ArrayMeta::new(
        CellSchema::new(vec!["x".into(), "y".into()], vec![("val".into(), AttrType::Float)]).unwrap(),
        vec![30, 10],
        vec![10, 5],
    )
    .unwrap();
    let cells = (0..30u64).flat_map(|x| (0..10u64).map(move |y| (vec![x, y], vec![Scalar::Float((10 * x + y) as f64)])));
    let array = StoredArray::build(meta, Layout::Dense, unlimited(), cells).unwrap();
    array.reset_counters();
    let (out, stats, trace) =
        mshj_traced(&records, &array, &DimBinding::new(["v0", "v1"]), &JoinOutputSpec::new(Model::Relational)).unwrap();

    let recs_of = |ids: &[usize]| ids.iter().map(|&i| recs[i]).collect::<Vec<_>>();
    let stage0: Vec<_> = trace.buckets.stages[0].iter().map(|b| recs_of(b)).collect();
    let stage1: Vec<_> = trace.buckets.stages[1].iter().map(|b| recs_of(b)).collect();
    ensure!(stage0 == vec![vec![(4, 3), (8, 6)], vec![(17, 1), (12, 4)], vec![(23, 8)]], "stage 0 buckets {stage0:?}");
    ensure!(stage1 == vec![vec![(4, 3), (17, 1), (12, 4)], vec![(8, 6), (23, 8)]], "stage 1 buckets {stage1:?}");
    let order = recs_of(&trace.buckets.order);
    ensure!(order == vec![(4, 3), (17, 1), (12, 4), (8, 6), (23, 8)], "final order {order:?}");
    let pairs: Vec<_> = trace.probes.iter().map(|p| (recs[p.record], p.tc.clone(), p.cc.clone())).collect();
    let want = vec![
        ((4, 3), vec![0, 0], vec![4, 3]),
        ((17, 1), vec![1, 0], vec![7, 1]),
        ((12, 4), vec![1, 0], vec![2, 4]),
        ((8, 6), vec![0, 1], vec![8, 1]),
        ((23, 8), vec![2, 1], vec![3, 3]),
    ];
    ensure!(pairs == want, "TC/CC pairs {pairs:?}");
    let pinned = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 1]];
    ensure!(stats.pinned == pinned, "pinned sequence {:?}", stats.pinned);
    ensure!(out.len().unwrap() == 5, "{} output rows", out.len().unwrap());
    Ok("buckets, order, TC/CC pairs and pinned tiles (0,0) (1,0) (0,1) (2,1) match".into())
}

// ------------------------------------------------------------------ 4

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn criterion4() -> Outcome {
    let start = Instant::now();
    let mut cfg = MshjBench::new(3, Layout::Coo, vec![10_000, 30_000, 100_000, 300_000, 1_000_000]);
    cfg.strategies = vec![bridge::Strategy::Mshj];
    cfg.checksum = false;
    let report = bench::bench_mshj(&cfg).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = report.rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.build_ms).collect();
    let r2 = r_squared(&xs, &ys);
    let secs = start.elapsed().as_secs_f64();
    let detail = ys.iter().map(|y| format!("{y:.2}")).collect::<Vec<_>>().join("/");
    ensure!(r2 >= 0.98, "R^2 {r2:.4} (build ms {detail})");
    ensure!(secs < 180.0, "took {secs:.1}s");
    Ok(format!("R^2 {r2:.4}, build ms {detail}, {secs:.1}s"))
}

// ------------------------------------------------------------------ 5

fn criterion5() -> Outcome {
    let mut cfg = MshjBench::new(3, Layout::Dense, vec![1_000, 10_000, 100_000]);
    cfg.strategies = vec![bridge::Strategy::Mshj, bridge::Strategy::Convert];
    cfg.size = Some(vec![100; 3]);
    cfg.tile = Some(vec![20; 3]);
    let report = bench::bench_mshj(&cfg).map_err(|e| e.to_string())?;
    let row = |s: &str, n: usize| report.rows.iter().find(|r| r.strategy == s && r.n == n).unwrap();
    let (m, c) = (row("mshj", 1_000), row("convert", 1_000));
    ensure!(m.checksum == c.checksum, "outputs differ");
    ensure!(m.wall_ms < c.wall_ms, "mshj {:.2} ms vs conversion {:.2} ms at N=1000", m.wall_ms, c.wall_ms);
    let conv: Vec<f64> = report.rows.iter().filter(|r| r.strategy == "convert").map(|r| r.convert_ms).collect();
    ensure!(conv.iter().all(|&t| t > 0.0), "conversion time not measured: {conv:?}");
    let trend = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| format!("N={n} {:.1}/{:.1}", row("mshj", n).wall_ms, row("convert", n).wall_ms))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("mshj/convert ms: {trend}; conversion alone {:.1} ms", conv[0]))
}

// ------------------------------------------------------------------ 6

fn criterion6() -> Outcome {
    for seed in 0..500u64 {
        let plan = support::random_dag(seed, 30);
        let pd = planner::partition(&plan).map_err(|e| format!("seed {seed}: {e}"))?;
        support::check_partition(&plan, &pd).map_err(|e| format!("seed {seed}: {e}"))?;
        let order = planner::topo_order(&pd).map_err(|e| format!("seed {seed}: {e}"))?;
        support::check_order(&pd, &order).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let mut partitions = 0;
    for seed in 0..500u64 {
        let plan = support::random_relational_dag(seed, 30);
        let tables = support::relational_tables(seed);
        let direct = support::reference_eval(&plan, &tables);
        let split = support::decomposed_eval(&plan, &tables);
        partitions += planner::partition(&plan).unwrap().partitions.len();
        for (id, v) in &split {
            ensure!(*v == direct[*id], "seed {seed}: node {id} differs");
        }
        ensure!(split.contains_key(&(plan.len() - 1)), "seed {seed}: plan output not produced");
    }
    Ok(format!("500 mixed-model DAGs partitioned correctly; 500 relational DAGs ({partitions} partitions) decompose exactly"))
}

// ------------------------------------------------------------------ 7

struct Fixture {
    /// (oid, cid)
    orders: Vec<(i64, i64)>,
    /// (oid, pid, rating)
    reviews: Vec<(i64, i64, f64)>,
    customers: usize,
    products: usize,
    /// (cid, pid)
    interest: Vec<(i64, i64)>,
}

fn fixture() -> Fixture {
    let (customers, products) = (20usize, 15usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs: Vec<(i64, i64)> = Vec::new();
    // every customer and product rated at least once
    for i in 0..customers.max(products) {
        pairs.push(((i % customers) as i64, (i % products) as i64));
    }
    while pairs.len() < 60 {
        let p = (rng.gen_range(0..customers) as i64, rng.gen_range(0..products) as i64);
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    pairs.shuffle(&mut rng);
    let orders = pairs.iter().enumerate().map(|(i, &(c, _))| (100 + i as i64, c)).collect();
    let reviews = pairs
        .iter()
        .enumerate()
        .map(|(i, &(_, p))| (100 + i as i64, p, rng.gen_range(2..=10) as f64 / 2.0))
        .collect();
    let mut interest: Vec<(i64, i64)> = (0..products as i64).map(|p| (3, p)).collect();
    for _ in 0..25 {
        interest.push((rng.gen_range(0..customers) as i64, rng.gen_range(0..products) as i64));
    }
    interest.shuffle(&mut rng);
    Fixture { orders, reviews, customers, products, interest }
}

fn write_fixture(f: &Fixture, dir: &Path) {
    let lines = |v: Vec<serde_json::Value>| v.iter().map(|d| d.to_string() + "\n").collect::<String>();
    std::fs::write(dir.join("order.jsonl"), lines(f.orders.iter().map(|&(o, c)| json!({"oid": o, "cid": c})).collect()))
        .unwrap();
    std::fs::write(
        dir.join("review.jsonl"),
        lines(f.reviews.iter().map(|&(o, p, r)| json!({"oid": o, "pid": p, "rating": r, "text": "ok"})).collect()),
    )
    .unwrap();
    let customers: String = (0..f.customers).map(|c| format!("{c},customer {c}\n")).collect();
    std::fs::write(dir.join("customer.csv"), format!("cid,name\n{customers}")).unwrap();
    let products: String = (0..f.products).map(|p| format!("{p},{}\n", 10 + p)).collect();
    std::fs::write(dir.join("product.csv"), format!("pid,price\n{products}")).unwrap();
    let interest: String = f.interest.iter().map(|(c, p)| format!("{c},{p}\n")).collect();
    std::fs::write(dir.join("interest.csv"), format!("cid,pid\n{interest}")).unwrap();
}

const RANK: usize = 2;
const ITERATIONS: usize = 1;

const LISTING: &str = "\
order, review = openCollection('order'), openCollection('review')
ratings = review.join(order, 'review.oid = order.oid').project('cid, pid, rating')

rank, num_iter = 2, 1
customer_cnt, product_cnt = openTable('customer').count(), openTable('product').count()
X = ratings.toArray({'cid', 'pid'}, {'rating'}, {customer_cnt, product_cnt})
W, H = rand({customer_cnt, rank}, {'cid', 'k'}, 'rating', 11), rand({rank, product_cnt}, {'k', 'pid'}, 'rating', 12)
for i in range(num_iter):
  W = W * ((X @ H.T) / (W @ H @ H.T))
  H = H * ((W.T @ X) / (W.T @ W @ H))

interest = openTable('interest')
filled = W @ H
result = filled.join(interest, 'interest.cid = filled.cid AND interest.pid = filled.pid', RELATIONAL).filter('cid = 3').sort('rating DESC').limit(10)

execute(result)
";

type Mat = Vec<Vec<f64>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut s = 0.0;
                    for x in 0..k {
                        s += a[i][x] * b[x][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn mat_t(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn mat_zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()).collect()
}

/// Uniform [0, 1) matrix: entry (i, j) is the f64 drawn at word position
/// 2 * (i * cols + j) of a ChaCha8 stream.
fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    rng.set_word_pos(2 * (i * cols + j) as u128);
                    rng.gen::<f64>()
                })
                .collect()
        })
        .collect()
}

/// The pipeline computed directly over the fixture.
fn flat_reference(f: &Fixture) -> Vec<Vec<Value>> {
    let cid_of: HashMap<i64, i64> = f.orders.iter().copied().collect();
    let mut x = vec![vec![0.0; f.products]; f.customers];
    for &(oid, pid, rating) in &f.reviews {
        x[cid_of[&oid] as usize][pid as usize] = rating;
    }
    let mut w = random_mat(f.customers, RANK, 11);
    let mut h = random_mat(RANK, f.products, 12);
    for _ in 0..ITERATIONS {
        let ht = mat_t(&h);
        let ratio = mat_zip(&mat_mul(&x, &ht), &mat_mul(&mat_mul(&w, &h), &ht), |a, b| a / b);
        w = mat_zip(&w, &ratio, |a, b| a * b);
        let wt = mat_t(&w);
        let ratio = mat_zip(&mat_mul(&wt, &x), &mat_mul(&mat_mul(&wt, &w), &h), |a, b| a / b);
        h = mat_zip(&h, &ratio, |a, b| a * b);
    }
    let filled = mat_mul(&w, &h);
    let mut rows: Vec<(i64, i64, f64)> =
        f.interest.iter().filter(|&&(c, _)| c == 3).map(|&(c, p)| (c, p, filled[c as usize][p as usize])).collect();
    rows.sort_by(|a, b| b.2.total_cmp(&a.2));
    rows.truncate(10);
    rows.into_iter().map(|(c, p, r)| vec![Value::Int(c), Value::Int(p), Value::Float(r)]).collect()
}

fn criterion7() -> Outcome {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_fixture(&f, dir.path());
    let out = run::run_source(LISTING, &RunConfig::new(dir.path())).map_err(|e| e.to_string())?;
    let rel = match &out.result.value {
        NodeValue::Rd(d) => d.as_relation().map_err(|e| e.to_string())?.clone(),
        NodeValue::Array(_) => return Err("result is an array".into()),
    };
    let names: Vec<&str> = rel.schema.names().collect();
    ensure!(names == ["cid", "pid", "rating"], "columns {names:?}");
    let want = flat_reference(&f);
    ensure!(want.len() == 10, "reference has {} rows", want.len());
    ensure!(rel.rows == want, "rows differ:\n got {:?}\nwant {:?}", rel.rows, want);
    let pd = planner::partition(&out.bound.plan).unwrap();
    Ok(format!("10 rows identical to the flat pipeline; plan of {} nodes in {} partitions", out.bound.plan.len(), pd.partitions.len()))
}

// ------------------------------------------------------------------ 8

#[derive(Default)]
struct Pins(std::sync::Mutex<std::collections::HashSet<u64>>);

impl EvictionHandler for Pins {
    fn is_evictable(&self, id: ObjectId) -> bool {
        !self.0.lock().unwrap().contains(&id.0)
    }
    fn do_eviction(&self, _: ObjectId) {}
}

/// Replays a random add/touch/remove/pin trace against the pool and the
/// simulator; returns the number of evictions.
fn replay(seed: u64, events: usize) -> Result<usize, String> {
    let mut r = support::rng(seed);
    let cap = r.gen_range(1_000..20_000u64);
    let pool = BufferPool::new(cap);
    pool.set_trace(true);
    let pins = Arc::new(Pins::default());
    let mut sim = support::LruSim::new(cap);
    let mut live: Vec<u64> = Vec::new();
    for step in 0..events {
        match r.gen_range(0..10) {
            0..=4 => {
                let id = pool.allocate_id();
                let size = r.gen_range(1..=cap / 8);
                let pinned = r.gen_bool(0.1);
                if pinned {
                    pins.0.lock().unwrap().insert(id.0);
                }
                let ok = sim.add(id.0, size, pinned);
                let got = pool.add(BufferObject::new(id, size, EngineTag::Array, pins.clone())).is_ok();
                ensure!(got == ok, "seed {seed} step {step}: add differs");
                if ok {
                    live.push(id.0);
                }
            }
            5..=7 if !live.is_empty() => {
                let id = live[r.gen_range(0..live.len())];
                ensure!(pool.touch(ObjectId(id)).is_ok() == sim.touch(id), "seed {seed} step {step}: touch differs");
            }
            8 if !live.is_empty() => {
                let id = live.swap_remove(r.gen_range(0..live.len()));
                ensure!(pool.remove(ObjectId(id)).is_ok() == sim.remove(id), "seed {seed} step {step}: remove differs");
            }
            _ if !live.is_empty() => {
                let id = live[r.gen_range(0..live.len())];
                let p = r.gen_bool(0.3);
                if p {
                    pins.0.lock().unwrap().insert(id);
                } else {
                    pins.0.lock().unwrap().remove(&id);
                }
                sim.set_pinned(id, p);
            }
            _ => {}
        }
        live.retain(|id| sim.objects.iter().any(|o| o.0 == *id));
    }
    let trace: Vec<u64> = pool.take_trace().into_iter().map(|i| i.0).collect();
    ensure!(trace == sim.evicted, "seed {seed}: eviction sequences differ");
    let order: Vec<u64> = pool.lru_order().into_iter().map(|i| i.0).collect();
    ensure!(order == sim.objects.iter().map(|o| o.0).collect::<Vec<_>>(), "seed {seed}: LRU order differs");
    Ok(trace.len())
}

fn criterion8() -> Outcome {
    let mut evictions = 0;
    for seed in 0..20 {
        evictions += replay(seed, 10_000)?;
    }
    let cfg = PoolBench { reps: 1, ..PoolBench::default() };
    let report = bench::bench_bufferpool(&cfg).map_err(|e| e.to_string())?;
    let unified = report.row("unified").ok_or("no unified row")?;
    let split = report.row("split").ok_or("no split row")?;
    ensure!(unified.evictions == 0, "unified pool evicted {}", unified.evictions);
    ensure!(split.evictions > 0, "split pools never evicted");
    Ok(format!(
        "20 traces x 10^4 events, {evictions} evictions replayed identically; capacity {} B: unified 0 vs split {} evictions",
        unified.capacity, split.evictions
    ))
}

// ------------------------------------------------------------------ 9

fn criterion9() -> Outcome {
    let pool = unlimited();
    for seed in 0..100u64 {
        let mut r = support::rng(seed);
        let ndim = r.gen_range(1..=3);
        let nvals = r.gen_range(1..=2);
        let mut attrs: Vec<(String, ValueType)> = (0..ndim).map(|d| (format!("k{d}"), ValueType::UInt)).collect();
        for v in 0..nvals {
            attrs.push((format!("a{v}"), if r.gen_bool(0.5) { ValueType::Float } else { ValueType::Int }));
        }
        let refs: Vec<(&str, ValueType)> = attrs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        let schema = Schema::of(&refs).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut rows = Vec::new();
        for _ in 0..r.gen_range(0..300) {
            let key: Vec<u64> = (0..ndim).map(|_| r.gen_range(0..40)).collect();
            if !seen.insert(key.clone()) {
                continue;
            }
            let mut row: Vec<Value> = key.into_iter().map(Value::UInt).collect();
            for (_, ty) in &attrs[ndim..] {
                row.push(match ty {
                    ValueType::Float => Value::Float(r.gen_range(-1e3..1e3)),
                    _ => Value::Int(r.gen_range(-1000..1000)),
                });
            }
            rows.push(row);
        }
        if rows.is_empty() {
            continue;
        }
        let rel = Relation::new(schema, rows).unwrap();
        let names: Vec<String> = attrs.iter().map(|a| a.0.clone()).collect();
        let spec = ArraySpec::new(names[..ndim].to_vec(), names[ndim..].to_vec());
        let array = bridge::to_array(&RdData::Relation(rel.clone()), &spec, pool.clone()).map_err(|e| format!("seed {seed}: {e}"))?;
        let back = bridge::to_relation(&array).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(back.schema == rel.schema, "seed {seed}: schema {:?}", back.schema);
        let (mut a, mut b) = (rel.rows.clone(), back.rows.clone());
        a.sort_by(|x, y| cmp_records(x, y));
        b.sort_by(|x, y| cmp_records(x, y));
        ensure!(a == b, "seed {seed}: rows differ");
    }
    Ok("100 random relations survive to_array then to_relation".into())
}

// ----------------------------------------------------------------- main

fn main() -> ExitCode {
    let sweep = std::cell::OnceCell::new();
    let sweep = || sweep.get_or_init(join_sweep);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 join matches nested loop", Box::new(|| criterion1(sweep()))),
        ("2 worked example trace", Box::new(criterion2)),
        ("3 exactly-once pinning", Box::new(|| criterion3(sweep()))),
        ("4 build phase is linear", Box::new(criterion4)),
        ("5 mshj beats conversion", Box::new(criterion5)),
        ("6 planner properties", Box::new(criterion6)),
        ("7 scripted pipeline", Box::new(criterion7)),
        ("8 buffer pool", Box::new(criterion8)),
        ("9 conversion round trip", Box::new(criterion9)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
