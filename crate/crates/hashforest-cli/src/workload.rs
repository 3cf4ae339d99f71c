//! Workload generation and the benchmark driver. Request streams are
//! generated up front from a seed (bit-reproducible order); client
//! threads then push them through one of three arms: the partitioned
//! store, an unpartitioned single-tree variant, or the per-partition
//! lock baseline. Clients keep private latency buffers that are merged
//! after the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Sender};
use hashforest::arena::{decode_vector, encode_vector};
use hashforest::dispatch::{Engine, Request, Response};
use hashforest::error::{Error, Result};
use hashforest::hashing::angular_distance;
use hashforest::route::{Router, TableConfig};
use hashforest::SparseVector;
use rand::prelude::*;

use crate::baseline::LockBaseline;
use crate::metrics::{brute_force_knn, candidate_overhead, error_ratio, LatencySummary};

pub const CSV_SCHEMA_VERSION: u32 = 1;
/// Queries sampled for the accuracy/overhead figures of merit.
pub const METRIC_QUERY_SAMPLE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arm {
    /// Partitioned hash forest on the actor engine.
    Pfo,
    /// Unpartitioned variant: C = 0, m = 0, one tree per table.
    SingleTree,
    /// Any worker touches any tree under a per-partition lock.
    LockBaseline,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Pfo => "pfo",
            Arm::SingleTree => "single-tree",
            Arm::LockBaseline => "lock-baseline",
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    /// Fraction of requests that are puts; the rest are queries.
    pub put_fraction: f64,
    pub clients: usize,
    pub requests: usize,
    pub seed: u64,
    pub k: usize,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.put_fraction) {
            return Err(Error::Config("put fraction must be in [0,1]".into()));
        }
        if self.clients == 0 || self.requests == 0 || self.k == 0 {
            return Err(Error::Config("clients, requests and k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Put(SparseVector),
    Query(SparseVector),
}

/// The seeded request stream. Puts cycle through the dataset (repeat
/// visits are updates); queries probe random dataset vectors.
pub fn generate_ops(dataset: &[SparseVector], spec: &WorkloadSpec) -> Vec<Op> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(spec.seed);
    let mut next_put = 0usize;
    (0..spec.requests)
        .map(|_| {
            if rng.gen_bool(spec.put_fraction) {
                let v = dataset[next_put % dataset.len()].clone();
                next_put += 1;
                Op::Put(v)
            } else {
                Op::Query(dataset[rng.gen_range(0..dataset.len())].clone())
            }
        })
        .collect()
}

/// Splits ops across clients. Puts of one ID always land on the same
/// client so repeated updates of an ID serialize; the final store state
/// is then independent of cross-client interleaving.
pub fn assign_clients(ops: &[Op], clients: usize) -> Vec<Vec<Op>> {
    let mut per_client: Vec<Vec<Op>> = vec![Vec::new(); clients];
    for (i, op) in ops.iter().enumerate() {
        let c = match op {
            Op::Put(v) => v.id as usize % clients,
            Op::Query(_) => i % clients,
        };
        per_client[c].push(op.clone());
    }
    per_client
}

/// Dispatch surface common to the actor engine and the lock baseline.
pub trait Backend: Sync {
    fn submit(&self, owner: usize, req: Request, reply: Option<Sender<Response>>) -> Result<()>;
    fn quiesce(&self, timeout: Duration) -> Result<()>;
}

impl Backend for Engine {
    fn submit(&self, owner: usize, req: Request, reply: Option<Sender<Response>>) -> Result<()> {
        Engine::submit(self, owner, req, reply)
    }
    fn quiesce(&self, timeout: Duration) -> Result<()> {
        Engine::quiesce(self, timeout)
    }
}

impl Backend for LockBaseline {
    fn submit(&self, owner: usize, req: Request, reply: Option<Sender<Response>>) -> Result<()> {
        LockBaseline::submit(self, owner, req, reply)
    }
    fn quiesce(&self, timeout: Duration) -> Result<()> {
        LockBaseline::quiesce(self, timeout)
    }
}

fn call<B: Backend + ?Sized>(backend: &B, owner: usize, req: Request) -> Result<Response> {
    let (tx, rx) = channel::bounded(1);
    backend.submit(owner, req, Some(tx))?;
    rx.recv().map_err(|_| Error::EngineDown)
}

/// Full put protocol over raw messages; waits for every reply so the
/// measured latency is submit-to-completion.
pub fn exec_put<B: Backend + ?Sized>(backend: &B, router: &Router, v: &SparseVector) -> Result<()> {
    let main = router.route_main(v.id);
    let main_owner = router.owner_index(main.locator);
    let old = match call(
        backend,
        main_owner,
        Request::GetRecord { tree: main.locator.tree, hash: main.hash, id: v.id },
    )? {
        Response::Record(old) => old,
        Response::Error(e) => return Err(Error::Data(e)),
        other => return Err(Error::Data(format!("unexpected reply {other:?}"))),
    };
    let (tx, rx) = channel::unbounded();
    let mut outstanding = 0usize;
    if let Some(payload) = old {
        let old_v = decode_vector(v.id, &payload)?;
        for r in router.route_all_lsh(&old_v)? {
            backend.submit(
                router.owner_index(r.locator),
                Request::RemoveId { tree: r.locator.tree, hash: r.hash, id: v.id },
                Some(tx.clone()),
            )?;
            outstanding += 1;
        }
    }
    backend.submit(
        main_owner,
        Request::PutRecord {
            tree: main.locator.tree,
            hash: main.hash,
            id: v.id,
            value: encode_vector(v),
        },
        Some(tx.clone()),
    )?;
    outstanding += 1;
    for r in router.route_all_lsh(v)? {
        backend.submit(
            router.owner_index(r.locator),
            Request::InsertId { tree: r.locator.tree, hash: r.hash, id: v.id },
            Some(tx.clone()),
        )?;
        outstanding += 1;
    }
    drop(tx);
    for _ in 0..outstanding {
        if let Response::Error(e) = rx.recv().map_err(|_| Error::EngineDown)? {
            return Err(Error::Data(e));
        }
    }
    Ok(())
}

pub struct QueryOutcome {
    pub neighbors: Vec<(u64, f64)>,
    pub candidates: usize,
    pub stale_drops: usize,
}

/// Candidate gather, MainTable resolution and top-k ranking over raw
/// messages, mirroring the store facade.
pub fn exec_query<B: Backend + ?Sized>(
    backend: &B,
    router: &Router,
    q: &SparseVector,
    k: usize,
) -> Result<QueryOutcome> {
    let routed = router.route_all_lsh(q)?;
    let (tx, rx) = channel::unbounded();
    let mut sent = 0usize;
    for r in &routed {
        backend.submit(
            router.owner_index(r.locator),
            Request::GetCandidates { tree: r.locator.tree, hash: r.hash },
            Some(tx.clone()),
        )?;
        sent += 1;
    }
    drop(tx);
    let mut ids = Vec::new();
    for _ in 0..sent {
        match rx.recv().map_err(|_| Error::EngineDown)? {
            Response::Candidates(mut batch) => ids.append(&mut batch),
            Response::Error(e) => return Err(Error::Data(e)),
            other => return Err(Error::Data(format!("unexpected reply {other:?}"))),
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let candidates = ids.len();
    let mut stale_drops = 0usize;
    let mut neighbors = Vec::with_capacity(candidates);
    for id in ids {
        let main = router.route_main(id);
        match call(
            backend,
            router.owner_index(main.locator),
            Request::GetRecord { tree: main.locator.tree, hash: main.hash, id },
        )? {
            Response::Record(Some(payload)) => {
                let v = decode_vector(id, &payload)?;
                neighbors.push((id, angular_distance(q, &v)?));
            }
            Response::Record(None) => stale_drops += 1,
            Response::Error(e) => return Err(Error::Data(e)),
            other => return Err(Error::Data(format!("unexpected reply {other:?}"))),
        }
    }
    neighbors.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    neighbors.truncate(k);
    Ok(QueryOutcome { neighbors, candidates, stale_drops })
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub arm: String,
    pub workers: usize,
    pub clients: usize,
    pub requests: usize,
    pub puts: u64,
    pub queries: u64,
    pub elapsed_s: f64,
    pub throughput: f64,
    pub latency: LatencySummary,
    /// Mean error ratio over the sampled queries (needs ground truth).
    pub error_ratio_mean: Option<f64>,
    /// Sum of candidate overhead e over sampled queries where defined.
    pub candidate_overhead_sum: Option<f64>,
    pub stale_drops: u64,
    /// Messages per (table, partition) owner, flat owner index order.
    pub partition_load: Vec<u64>,
    pub errors: BTreeMap<String, u64>,
}

struct ClientResult {
    puts: u64,
    queries: u64,
    latencies_us: Vec<u64>,
    stale_drops: u64,
    errors: BTreeMap<String, u64>,
}

fn drive_clients<B: Backend + ?Sized>(
    backend: &B,
    router: &Router,
    per_client: &[Vec<Op>],
    k: usize,
) -> Vec<ClientResult> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = per_client
            .iter()
            .map(|ops| {
                scope.spawn(move || {
                    let mut res = ClientResult {
                        puts: 0,
                        queries: 0,
                        latencies_us: Vec::with_capacity(ops.len()),
                        stale_drops: 0,
                        errors: BTreeMap::new(),
                    };
                    for op in ops {
                        let begun = Instant::now();
                        let outcome = match op {
                            Op::Put(v) => {
                                res.puts += 1;
                                exec_put(backend, router, v).map(|()| 0)
                            }
                            Op::Query(q) => {
                                res.queries += 1;
                                exec_query(backend, router, q, k).map(|o| o.stale_drops)
                            }
                        };
                        res.latencies_us.push(begun.elapsed().as_micros() as u64);
                        match outcome {
                            Ok(stale) => res.stale_drops += stale as u64,
                            Err(e) => *res.errors.entry(kind_of(&e)).or_insert(0) += 1,
                        }
                    }
                    res
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client panicked")).collect()
    })
}

fn kind_of(e: &Error) -> String {
    match e {
        Error::DimMismatch { .. } => "dim-mismatch",
        Error::Rejected(_) => "rejected",
        Error::ArenaFull { .. } => "arena-full",
        Error::Corruption(_) => "corruption",
        Error::Config(_) => "config",
        Error::Storage(_) => "storage",
        Error::EngineDown => "engine-down",
        Error::Data(_) => "data",
    }
    .to_string()
}

/// Message count per owner, derived by re-routing the op stream (the
/// hot path carries no shared counters).
fn partition_load(router: &Router, ops: &[Op]) -> Vec<u64> {
    let mut load = vec![0u64; router.cfg.owner_count()];
    for op in ops {
        match op {
            Op::Put(v) => {
                let main = router.route_main(v.id);
                load[router.owner_index(main.locator)] += 1;
                for r in router.route_all_lsh(v).expect("dim checked at ingest") {
                    load[router.owner_index(r.locator)] += 1;
                }
            }
            Op::Query(q) => {
                for r in router.route_all_lsh(q).expect("dim checked at ingest") {
                    load[router.owner_index(r.locator)] += 1;
                }
            }
        }
    }
    load
}

/// Runs the spec against one arm and reports. The accuracy pass runs
/// after the timed section: the first `METRIC_QUERY_SAMPLE` query
/// vectors are re-asked against the quiesced store and scored against a
/// brute-force scan of the final record versions.
pub fn run_workload(
    cfg: &TableConfig,
    dim: u32,
    data_dir: &Path,
    workers: usize,
    dataset: &[SparseVector],
    spec: &WorkloadSpec,
    arm: Arm,
) -> Result<MetricsReport> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut cfg = cfg.clone();
    if arm == Arm::SingleTree {
        cfg.part_bits = 0;
        cfg.tree_bits = 0;
    }
    let router = Router::new(cfg.clone(), dim)?;
    let ops = generate_ops(dataset, spec);
    let per_client = assign_clients(&ops, spec.clients);

    let engine;
    let lock_baseline;
    let backend: &dyn Backend = match arm {
        Arm::LockBaseline => {
            lock_baseline = LockBaseline::start(&cfg, data_dir, workers)?;
            &lock_baseline
        }
        _ => {
            engine = Engine::start(&cfg, data_dir, workers, false)?;
            &engine
        }
    };

    let begun = Instant::now();
    let client_results = drive_clients(backend, &router, &per_client, spec.k);
    backend.quiesce(Duration::from_secs(600))?;
    let elapsed = begun.elapsed();

    let mut report = MetricsReport {
        arm: arm.label().to_string(),
        workers,
        clients: spec.clients,
        requests: spec.requests,
        elapsed_s: elapsed.as_secs_f64(),
        partition_load: partition_load(&router, &ops),
        ..Default::default()
    };
    let mut latencies = Vec::with_capacity(spec.requests);
    for mut r in client_results {
        report.puts += r.puts;
        report.queries += r.queries;
        report.stale_drops += r.stale_drops;
        latencies.append(&mut r.latencies_us);
        for (k, v) in r.errors {
            *report.errors.entry(k).or_insert(0) += v;
        }
    }
    report.throughput = spec.requests as f64 / elapsed.as_secs_f64();
    report.latency = LatencySummary::from_micros(&mut latencies);

    // accuracy pass: ground truth is the final version of every put ID
    let mut current: BTreeMap<u64, SparseVector> = BTreeMap::new();
    for op in &ops {
        if let Op::Put(v) = op {
            current.insert(v.id, v.clone());
        }
    }
    let truth_set: Vec<SparseVector> = current.into_values().collect();
    let sample: Vec<&SparseVector> = ops
        .iter()
        .filter_map(|op| match op {
            Op::Query(q) => Some(q),
            Op::Put(_) => None,
        })
        .take(METRIC_QUERY_SAMPLE)
        .collect();
    if !truth_set.is_empty() && !sample.is_empty() {
        let mut r_sum = 0.0;
        let mut e_sum = 0.0;
        let mut e_any = false;
        for q in &sample {
            let outcome = exec_query(backend, &router, q, spec.k)?;
            let truth = brute_force_knn(&truth_set, q, spec.k.min(truth_set.len()));
            let found: Vec<f64> = outcome.neighbors.iter().map(|&(_, d)| d).collect();
            let truth_d: Vec<f64> = truth.iter().map(|&(_, d)| d).collect();
            r_sum += error_ratio(&found, &truth_d, truth_d.len());
            if let Some(e) = candidate_overhead(outcome.candidates, spec.k) {
                e_sum += e;
                e_any = true;
            }
        }
        report.error_ratio_mean = Some(r_sum / sample.len() as f64);
        report.candidate_overhead_sum = e_any.then_some(e_sum);
    }
    Ok(report)
}

/// Throughput of a pure-put stream of fresh IDs (no update protocol,
/// no replies): the scaling measurement. The same pre-routed message
/// list is pushed through either arm.
pub fn put_throughput(
    cfg: &TableConfig,
    dim: u32,
    data_dir: &Path,
    workers: usize,
    clients: usize,
    vectors: &[SparseVector],
    use_lock_baseline: bool,
) -> Result<f64> {
    let router = Router::new(cfg.clone(), dim)?;
    // pre-route everything so the timed section is pure dispatch+apply
    let mut per_client: Vec<Vec<(usize, Request)>> = vec![Vec::new(); clients];
    for (i, v) in vectors.iter().enumerate() {
        let main = router.route_main(v.id);
        let msgs = &mut per_client[i % clients];
        msgs.push((
            router.owner_index(main.locator),
            Request::PutRecord {
                tree: main.locator.tree,
                hash: main.hash,
                id: v.id,
                value: encode_vector(v),
            },
        ));
        for r in router.route_all_lsh(v)? {
            msgs.push((
                router.owner_index(r.locator),
                Request::InsertId { tree: r.locator.tree, hash: r.hash, id: v.id },
            ));
        }
    }

    let engine;
    let lock_baseline;
    let backend: &dyn Backend = if use_lock_baseline {
        lock_baseline = LockBaseline::start(cfg, data_dir, workers)?;
        &lock_baseline
    } else {
        engine = Engine::start(cfg, data_dir, workers, false)?;
        &engine
    };
    let begun = Instant::now();
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = per_client
            .iter()
            .map(|msgs| {
                scope.spawn(move || -> Result<()> {
                    for (owner, req) in msgs {
                        backend.submit(*owner, req.clone(), None)?;
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("client panicked")?;
        }
        Ok(())
    })?;
    backend.quiesce(Duration::from_secs(600))?;
    Ok(vectors.len() as f64 / begun.elapsed().as_secs_f64())
}

impl MetricsReport {
    /// Aligned, human-readable table.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<24} {v}");
        };
        row("arm", self.arm.clone());
        row("workers", self.workers.to_string());
        row("clients", self.clients.to_string());
        row("requests", self.requests.to_string());
        row("puts", self.puts.to_string());
        row("queries", self.queries.to_string());
        row("elapsed_s", format!("{:.3}", self.elapsed_s));
        row("throughput_ops_s", format!("{:.1}", self.throughput));
        row("latency_min_us", self.latency.min_us.to_string());
        row("latency_avg_us", self.latency.avg_us.to_string());
        row("latency_max_us", self.latency.max_us.to_string());
        row("latency_p99_us", self.latency.p99_us.to_string());
        row(
            "error_ratio_mean",
            self.error_ratio_mean.map_or("n/a".into(), |r| format!("{r:.4}")),
        );
        row(
            "candidate_overhead_sum",
            self.candidate_overhead_sum.map_or("n/a".into(), |e| format!("{e:.4}")),
        );
        row("stale_drops", self.stale_drops.to_string());
        for (kind, n) in &self.errors {
            row(&format!("errors[{kind}]"), n.to_string());
        }
        let max_load = self.partition_load.iter().copied().max().unwrap_or(0);
        let min_load = self.partition_load.iter().copied().min().unwrap_or(0);
        row("partition_load_min", min_load.to_string());
        row("partition_load_max", max_load.to_string());
        out
    }

    pub fn csv_header() -> String {
        format!(
            "schema_v{CSV_SCHEMA_VERSION}:arm,workers,clients,requests,puts,queries,\
             elapsed_s,throughput_ops_s,latency_min_us,latency_avg_us,latency_max_us,\
             latency_p99_us,error_ratio_mean,candidate_overhead_sum,stale_drops,\
             partition_load"
        )
        .replace(' ', "")
    }

    pub fn csv_row(&self) -> String {
        let load = self
            .partition_load
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{},{},{},{:.6},{:.3},{},{},{},{},{},{},{},{}",
            self.arm,
            self.workers,
            self.clients,
            self.requests,
            self.puts,
            self.queries,
            self.elapsed_s,
            self.throughput,
            self.latency.min_us,
            self.latency.avg_us,
            self.latency.max_us,
            self.latency.p99_us,
            self.error_ratio_mean.map_or("n/a".into(), |r| format!("{r:.6}")),
            self.candidate_overhead_sum.map_or("n/a".into(), |e| format!("{e:.6}")),
            self.stale_drops,
            load,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn dataset(n: usize, dim: u32, seed: u64) -> Vec<SparseVector> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let dense: Vec<f64> =
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                SparseVector::from_dense(i as u64, &dense)
            })
            .collect()
    }

    fn small_cfg() -> TableConfig {
        TableConfig {
            l_tables: 2,
            part_bits: 2,
            tree_bits: 2,
            bucket_cap: 4,
            fanout: 16,
            key_bits: 32,
            seed: 7,
            arena_capacity: 8 << 20,
            snapshot_threshold: 4 << 20,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let data = dataset(50, 8, 1);
        let spec = WorkloadSpec { put_fraction: 0.5, clients: 4, requests: 200, seed: 9, k: 5 };
        let a = generate_ops(&data, &spec);
        let b = generate_ops(&data, &spec);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Op::Put(u), Op::Put(v)) => assert_eq!(u, v),
                (Op::Query(u), Op::Query(v)) => assert_eq!(u, v),
                _ => panic!("op kinds diverge"),
            }
        }
    }

    #[test]
    fn same_id_puts_share_a_client() {
        let data = dataset(10, 8, 2);
        let spec = WorkloadSpec { put_fraction: 1.0, clients: 3, requests: 100, seed: 3, k: 5 };
        let per_client = assign_clients(&generate_ops(&data, &spec), 3);
        for (c, ops) in per_client.iter().enumerate() {
            for op in ops {
                if let Op::Put(v) = op {
                    assert_eq!(v.id as usize % 3, c);
                }
            }
        }
    }

    #[test]
    fn mixed_workload_runs_clean() {
        let tmp = tempfile::tempdir().unwrap();
        let data = dataset(200, 16, 4);
        let spec = WorkloadSpec { put_fraction: 0.7, clients: 4, requests: 800, seed: 5, k: 5 };
        let report =
            run_workload(&small_cfg(), 16, tmp.path(), 2, &data, &spec, Arm::Pfo).unwrap();
        assert_eq!(report.puts + report.queries, 800);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert!(report.error_ratio_mean.unwrap() >= 1.0 - 1e-9);
        assert!(!report.text().is_empty());
        assert_eq!(report.csv_row().split(',').count(), 16);
    }

    #[test]
    fn pure_read_workload_has_zero_stale_drops() {
        let tmp = tempfile::tempdir().unwrap();
        let data = dataset(100, 16, 6);
        // preload
        let preload = WorkloadSpec { put_fraction: 1.0, clients: 1, requests: 100, seed: 1, k: 5 };
        run_workload(&small_cfg(), 16, tmp.path(), 1, &data, &preload, Arm::Pfo).unwrap();
        let tmp2 = tempfile::tempdir().unwrap();
        let spec = WorkloadSpec { put_fraction: 1.0, clients: 1, requests: 100, seed: 1, k: 5 };
        let put_report =
            run_workload(&small_cfg(), 16, tmp2.path(), 1, &data, &spec, Arm::Pfo).unwrap();
        assert_eq!(put_report.stale_drops, 0);
    }

    #[test]
    fn single_tree_arm_ignores_partitioning() {
        let tmp = tempfile::tempdir().unwrap();
        let data = dataset(100, 16, 7);
        let spec = WorkloadSpec { put_fraction: 0.8, clients: 2, requests: 300, seed: 8, k: 5 };
        let report =
            run_workload(&small_cfg(), 16, tmp.path(), 1, &data, &spec, Arm::SingleTree).unwrap();
        // one owner per table: L + 1 owners in the load histogram
        assert_eq!(report.partition_load.len(), 3);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
    }

    #[test]
    fn lock_baseline_arm_matches_semantics() {
        let data = dataset(150, 16, 9);
        let spec = WorkloadSpec { put_fraction: 0.6, clients: 3, requests: 400, seed: 11, k: 5 };
        let t1 = tempfile::tempdir().unwrap();
        let t2 = tempfile::tempdir().unwrap();
        let a = run_workload(&small_cfg(), 16, t1.path(), 2, &data, &spec, Arm::Pfo).unwrap();
        let b =
            run_workload(&small_cfg(), 16, t2.path(), 2, &data, &spec, Arm::LockBaseline).unwrap();
        assert!(a.errors.is_empty() && b.errors.is_empty());
        // same final state, same post-run accuracy figures
        assert_eq!(a.error_ratio_mean, b.error_ratio_mean);
        assert_eq!(a.candidate_overhead_sum, b.candidate_overhead_sum);
        assert_eq!(a.partition_load, b.partition_load);
    }
}
