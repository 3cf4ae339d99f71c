use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};
use hashforest::route::TableConfig;
use hashforest::{QueryMode, SparseVector, Store, StoreConfig};
use hashforest_cli::dataset::{self, Format};
use hashforest_cli::workload::{self, Arm, MetricsReport, WorkloadSpec};
use hashforest_cli::CliError;

#[derive(Parser)]
#[command(name = "hfbench", about = "LSH-forest store benchmark harness")]
struct Cli {
    /// Number of LSH tables (L)
    #[arg(long = "tables", global = true, default_value_t = 10)]
    tables: u32,
    /// Partition bits per table (C)
    #[arg(long = "part-bits", global = true, default_value_t = 4)]
    part_bits: u32,
    /// Tree-routing bits per partition (m)
    #[arg(long = "tree-bits", global = true, default_value_t = 4)]
    tree_bits: u32,
    /// Bucket capacity before a spread (t)
    #[arg(long = "bucket-cap", global = true, default_value_t = 4)]
    bucket_cap: u32,
    /// Directory fanout (l, power of two)
    #[arg(long = "fanout", global = true, default_value_t = 128)]
    fanout: u32,
    /// Compound key length in bits (M)
    #[arg(long = "key-bits", global = true, default_value_t = 32)]
    key_bits: u8,
    /// RNG seed for hashing and workloads (S)
    #[arg(long = "seed", global = true, default_value_t = 42)]
    seed: u64,
    /// Arena capacity per partition, MiB
    #[arg(long = "arena-mb", global = true, default_value_t = 8)]
    arena_mb: usize,
    /// Live-bytes threshold that triggers a seal, MiB
    #[arg(long = "snapshot-mb", global = true, default_value_t = 4)]
    snapshot_mb: usize,
    /// Store directory
    #[arg(long = "data-dir", global = true, default_value = "./hashforest-data")]
    data_dir: PathBuf,
    /// Dispatch worker threads (W)
    #[arg(long = "workers", global = true, default_value_t = 1)]
    workers: usize,
    /// Neighbors per query (K)
    #[arg(long = "k", global = true, default_value_t = 10)]
    k: usize,
    /// Query radius in angular distance [0,1]; overrides top-k
    #[arg(long = "radius", global = true)]
    radius: Option<f64>,
    /// Dataset file format
    #[arg(long = "format", global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Load a dataset file into the store
    Ingest { path: PathBuf },
    /// Run a seeded benchmark workload and print a metrics report
    ServeBench {
        path: PathBuf,
        /// Fraction of requests that are puts
        #[arg(long, default_value_t = 0.5)]
        put_fraction: f64,
        #[arg(long, default_value_t = 10_000)]
        requests: usize,
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, value_enum, default_value_t = Arm::Pfo)]
        arm: Arm,
        /// Also append the report as a CSV row to this file
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Query the store with every vector in a file
    Query { path: PathBuf },
    /// Seal all live arenas into snapshots
    Flush,
    /// Merge each partition's snapshot chain into one file
    Merge,
    /// Print store configuration and aggregate statistics
    Report,
}

fn table_config(cli: &Cli) -> TableConfig {
    TableConfig {
        l_tables: cli.tables,
        part_bits: cli.part_bits,
        tree_bits: cli.tree_bits,
        bucket_cap: cli.bucket_cap,
        fanout: cli.fanout,
        key_bits: cli.key_bits,
        seed: cli.seed,
        arena_capacity: cli.arena_mb << 20,
        snapshot_threshold: cli.snapshot_mb << 20,
    }
}

fn load_vectors(cli: &Cli, path: &PathBuf) -> Result<Vec<SparseVector>, CliError> {
    let vectors = dataset::ingest(path, cli.format)?;
    if vectors.is_empty() {
        return Err(CliError::Data(format!("{}: no vectors", path.display())));
    }
    let dim = vectors[0].dim;
    if let Some(v) = vectors.iter().find(|v| v.dim != dim) {
        return Err(CliError::Data(format!(
            "mixed dimensionality: id {} has dim {}, expected {dim}",
            v.id, v.dim
        )));
    }
    Ok(vectors)
}

fn open_store(cli: &Cli, dim: u32) -> Result<Store, CliError> {
    let mut cfg = StoreConfig::new(table_config(cli), dim, &cli.data_dir);
    cfg.workers = cli.workers;
    Ok(Store::open(cfg)?)
}

fn open_existing(cli: &Cli) -> Result<Store, CliError> {
    Ok(Store::open_existing(&cli.data_dir, cli.workers)?)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.verb {
        Verb::Ingest { path } => {
            let vectors = load_vectors(cli, path)?;
            let store = open_store(cli, vectors[0].dim)?;
            for v in &vectors {
                store.put(v)?;
            }
            store.quiesce(Duration::from_secs(600))?;
            // live arenas are memory-only; seal so the data survives exit
            store.flush()?;
            let stats = store.stats()?;
            println!(
                "ingested {} vectors (dim {}) into {} ({} owners)",
                vectors.len(),
                vectors[0].dim,
                cli.data_dir.display(),
                stats.owners
            );
            store.shutdown();
        }
        Verb::ServeBench { path, put_fraction, requests, clients, arm, csv_out } => {
            let vectors = load_vectors(cli, path)?;
            let spec = WorkloadSpec {
                put_fraction: *put_fraction,
                clients: *clients,
                requests: *requests,
                seed: cli.seed,
                k: cli.k,
            };
            let report = workload::run_workload(
                &table_config(cli),
                vectors[0].dim,
                &cli.data_dir,
                cli.workers,
                &vectors,
                &spec,
                *arm,
            )?;
            print!("{}", report.text());
            if let Some(csv) = csv_out {
                append_csv(csv, &report)?;
            }
        }
        Verb::Query { path } => {
            let queries = load_vectors(cli, path)?;
            let store = open_existing(cli)?;
            let mode = match cli.radius {
                Some(r) => QueryMode::Radius(r),
                None => QueryMode::TopK(cli.k),
            };
            for q in &queries {
                let res = store.query(q, mode)?;
                let hits = res
                    .neighbors
                    .iter()
                    .map(|n| format!("{}:{:.4}", n.id, n.distance))
                    .collect::<Vec<_>>()
                    .join(" ");
                println!("q {} candidates {} -> {hits}", q.id, res.candidates);
            }
            store.shutdown();
        }
        Verb::Flush => {
            let store = open_existing(cli)?;
            store.flush()?;
            let stats = store.stats()?;
            println!("flushed; {} snapshots across {} owners", stats.snapshots, stats.owners);
            store.shutdown();
        }
        Verb::Merge => {
            let store = open_existing(cli)?;
            store.merge()?;
            let stats = store.stats()?;
            println!("merged; {} snapshots across {} owners", stats.snapshots, stats.owners);
            store.shutdown();
        }
        Verb::Report => {
            let store = open_existing(cli)?;
            let cfg = store.config().clone();
            let stats = store.stats()?;
            println!("{}", hashforest::route::render_config(&cfg, None).trim_end());
            println!("{:<24} {}", "owners", stats.owners);
            println!("{:<24} {}", "applied", stats.applied);
            println!("{:<24} {}", "seals", stats.seals);
            println!("{:<24} {}", "snapshots", stats.snapshots);
            println!("{:<24} {}", "live_bytes", stats.live_bytes);
            store.shutdown();
        }
    }
    Ok(())
}

fn append_csv(path: &PathBuf, report: &MetricsReport) -> Result<(), CliError> {
    let mut body = String::new();
    if !path.exists() {
        body.push_str(&MetricsReport::csv_header());
        body.push('\n');
    }
    body.push_str(&report.csv_row());
    body.push('\n');
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
