use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdb::array::Layout;
use mmdb::bridge::Strategy;
use mmdb::planner::Model;
use mmdb_cli::bench::{self, CacheSize, MshjBench, PoolBench, PoolMode};
use mmdb_cli::ingest::{self, CooOptions, Format};
use mmdb_cli::run::{self, RunConfig};
use mmdb_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "mmdb", version, about = "Multi-model query runner and benchmarks")]
struct Cli {
    /// Dataset directory.
    #[arg(long, global = true, default_value = "data")]
    data: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a query script.
    Run(RunArgs),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Copy a file into the dataset directory.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunArgs {
    script: PathBuf,
    /// Print the plan and its partitions as JSON instead of running.
    #[arg(long)]
    explain: bool,
    #[arg(long, default_value_t = run::DEFAULT_BUFFER_BYTES)]
    buffer_bytes: u64,
    /// Inter-model join strategy.
    #[arg(long, default_value = "auto")]
    strategy: String,
    /// Per-partition timings on stderr.
    #[arg(long)]
    profile: bool,
    /// Write the result here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Inter-model join strategies on synthetic arrays.
    Mshj(MshjArgs),
    /// Unified buffer pool against per-engine halves.
    Pool(PoolArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Dense,
    Coo,
    Csr,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Mshj,
    Convert,
    ProbeOnly,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputArg {
    Relational,
    Document,
    Array,
}

#[derive(Args)]
struct MshjArgs {
    #[arg(long, default_value_t = 3)]
    dims: usize,
    #[arg(long, value_enum, default_value = "coo")]
    layout: LayoutArg,
    /// `a:b:steps`, geometric from a to b; or a comma list.
    #[arg(long, default_value = "10000:1000000:5")]
    n_sweep: String,
    #[arg(long, value_enum, default_value = "all")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "relational")]
    output: OutputArg,
    /// Buffer capacity in bytes.
    #[arg(long, conflicts_with = "cache_tiles")]
    buffer_bytes: Option<u64>,
    /// Buffer capacity as a number of (largest) tiles.
    #[arg(long)]
    cache_tiles: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    /// Array size, comma separated.
    #[arg(long, value_delimiter = ',')]
    size: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    tile: Option<Vec<u64>>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    no_checksum: bool,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unified,
    Split,
    Both,
}

#[derive(Args)]
struct PoolArgs {
    /// Total capacity; defaults to the workload's peak.
    #[arg(long)]
    capacity: Option<u64>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 400)]
    rows: u64,
    #[arg(long, default_value_t = 300)]
    cols: u64,
    #[arg(long, default_value_t = 10)]
    rank: u64,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
    Coo,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(value_enum)]
    format: FormatArg,
    path: PathBuf,
    #[arg(long = "as")]
    name: String,
    /// Dimension columns of a cell file.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    size: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    tile: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
}

fn layout(l: LayoutArg) -> Layout {
    match l {
        LayoutArg::Dense => Layout::Dense,
        LayoutArg::Coo => Layout::Coo,
        LayoutArg::Csr => Layout::Csr,
    }
}

/// `a:b:steps` (geometric, rounded) or `n1,n2,...`.
fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Config(format!("bad sweep '{s}'; use a:b:steps or a comma list"));
    if let [a, b, steps] = s.split(':').collect::<Vec<_>>()[..] {
        let (a, b, steps): (f64, f64, usize) =
            (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, steps.parse().map_err(|_| bad())?);
        if a < 1.0 || b < a || steps == 0 {
            return Err(bad());
        }
        if steps == 1 {
            return Ok(vec![a as usize]);
        }
        let ratio = (b / a).powf(1.0 / (steps - 1) as f64);
        let mut out: Vec<usize> = (0..steps).map(|i| (a * ratio.powi(i as i32)).round() as usize).collect();
        out.dedup();
        return Ok(out);
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|source| CliError::File { path: p.clone(), source })?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(a) => {
            if a.explain {
                let src = std::fs::read_to_string(&a.script)
                    .map_err(|source| CliError::File { path: a.script.clone(), source })?;
                let bound = run::compile(&src)?;
                let mut out = output(a.out.as_ref())?;
                writeln!(out, "{}", serde_json::to_string_pretty(&run::explain(&bound)?)?)?;
                return Ok(());
            }
            let mut cfg = RunConfig::new(cli.data);
            cfg.buffer_bytes = a.buffer_bytes;
            cfg.exec.strategy = a.strategy.parse::<Strategy>()?;
            let res = run::run_script(&a.script, &cfg)?;
            if a.profile {
                for p in &res.result.partitions {
                    eprintln!("partition {} ({}, {} nodes): {:.3} ms", p.id, p.model, p.nodes.len(), p.elapsed.as_secs_f64() * 1e3);
                }
                for j in &res.result.joins {
                    eprintln!(
                        "join {}: {} rows, {} tile pins, {} tile reads, {:.3} ms",
                        j.strategy.name(),
                        j.output_rows,
                        j.tile_pins,
                        j.tile_reads,
                        j.total_time.as_secs_f64() * 1e3
                    );
                }
            }
            let mut out = output(a.out.as_ref())?;
            run::write_value(&res.result.value, &mut out)?;
            out.flush()?;
        }
        Cmd::Bench(BenchCmd::Mshj(a)) => {
            let mut cfg = MshjBench::new(a.dims, layout(a.layout), parse_sweep(&a.n_sweep)?);
            cfg.strategies = match a.strategy {
                StrategyArg::Mshj => vec![Strategy::Mshj],
                StrategyArg::Convert => vec![Strategy::Convert],
                StrategyArg::ProbeOnly => vec![Strategy::ProbeOnly],
                StrategyArg::All => vec![Strategy::Mshj, Strategy::Convert, Strategy::ProbeOnly],
            };
            cfg.output = match a.output {
                OutputArg::Relational => Model::Relational,
                OutputArg::Document => Model::Document,
                OutputArg::Array => Model::Array,
            };
            cfg.cache = match (a.buffer_bytes, a.cache_tiles) {
                (Some(b), _) => CacheSize::Bytes(b),
                (None, Some(t)) => CacheSize::Tiles(t),
                (None, None) => CacheSize::Unlimited,
            };
            cfg.density = a.density;
            cfg.size = a.size;
            cfg.tile = a.tile;
            cfg.seed = a.seed;
            cfg.reps = a.reps;
            cfg.checksum = !a.no_checksum;
            let report = bench::bench_mshj(&cfg)?;
            report.write_csv(output(Some(&a.out))?)?;
            eprintln!("wrote {} rows to {}", report.rows.len(), a.out.display());
        }
        Cmd::Bench(BenchCmd::Pool(a)) => {
            let cfg = PoolBench {
                capacity: a.capacity,
                mode: match a.mode {
                    ModeArg::Unified => PoolMode::Unified,
                    ModeArg::Split => PoolMode::Split,
                    ModeArg::Both => PoolMode::Both,
                },
                rows: a.rows,
                cols: a.cols,
                rank: a.rank,
                iterations: a.iterations,
                seed: a.seed,
                reps: a.reps,
                ..PoolBench::default()
            };
            bench::bench_bufferpool(&cfg)?.write_csv(output(a.out.as_ref())?)?;
        }
        Cmd::Ingest(a) => {
            let format = match a.format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Jsonl => Format::Jsonl,
                FormatArg::Coo => Format::Coo,
            };
            let coo = CooOptions { dims: a.dims, values: a.values, size: a.size, tile: a.tile, layout: a.layout.map(layout) };
            let path = ingest::ingest(format, &a.path, &a.name, &cli.data, &coo)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
