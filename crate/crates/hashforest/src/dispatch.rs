//! Actor-style dispatch: a stateless hashing stage (the callers) fans
//! requests out to per-partition exclusive owners. Each owner holds one
//! table partition's arena, trees and snapshots; a pool of workers
//! drains runnable mailboxes in bounded batches, so a hot shard cannot
//! monopolize a worker. No two workers ever execute the same owner at
//! once; the `running` flag asserts it in instrumented runs.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, Sender};
use parking_lot::{Condvar, Mutex, MutexGuard};

use crate::arena::Arena;
use crate::error::{Error, Result};
use crate::route::{TableConfig, MAIN_TABLE};
use crate::snapshot::PartitionSnapshots;
use crate::tree::{self, TreeParams};

/// Messages a partition owner understands. Hash values arrive
/// precomputed: the hashing stage runs on the submitting threads.
#[derive(Debug, Clone)]
pub enum Request {
    /// MainTable: store a (new or replacing) record version.
    PutRecord { tree: u32, hash: u64, id: u64, value: Vec<u8> },
    /// MainTable: newest version of a record, live arena first.
    GetRecord { tree: u32, hash: u64, id: u64 },
    /// LSHTable: index an ID under its compound key.
    InsertId { tree: u32, hash: u64, id: u64 },
    /// LSHTable: drop an ID from the bucket of the given key.
    RemoveId { tree: u32, hash: u64, id: u64 },
    /// LSHTable: full terminal-bucket chain, live plus snapshots.
    GetCandidates { tree: u32, hash: u64 },
    /// Seal the live arena into a snapshot.
    Flush,
    /// Merge this partition's snapshots into one.
    Merge,
    Stats,
}

#[derive(Debug, Clone)]
pub enum Response {
    Done,
    Record(Option<Vec<u8>>),
    Candidates(Vec<u64>),
    Stats(OwnerStats),
    Error(String),
}

#[derive(Debug, Clone, Default)]
pub struct OwnerStats {
    pub applied: u64,
    pub seals: u64,
    pub snapshot_count: u64,
    pub live_used_bytes: u64,
}

/// Single-threaded state of one (table, partition) owner. The engine
/// wraps these in actors; the benchmark's lock-based baseline wraps
/// them in mutexes instead.
pub struct PartitionExecutorState {
    pub table: u16,
    pub partition: u32,
    params: TreeParams,
    start_bit: u32,
    hash_width: u32,
    is_main: bool,
    snapshot_threshold: usize,
    arena: Arena,
    snapshots: PartitionSnapshots,
    /// Per-tree full-history spread replica (LSHTables only); keeps
    /// candidate sets independent of seal timing.
    shape: Vec<tree::ShapeIndex>,
    stats: OwnerStats,
}

impl PartitionExecutorState {
    pub fn new(cfg: &TableConfig, table: u16, partition: u32, data_dir: &Path) -> Result<Self> {
        let is_main = table == MAIN_TABLE;
        let (start_bit, hash_width) = if is_main {
            (cfg.part_bits + cfg.tree_bits, 64)
        } else {
            (cfg.tree_bits, cfg.key_bits as u32)
        };
        let tree_count = cfg.trees_per_partition() as usize;
        let params = cfg.tree_params();
        let snapshots = PartitionSnapshots::open(
            data_dir,
            table,
            partition,
            tree_count,
            params,
            is_main,
            start_bit,
            hash_width,
        )?;
        let mut shape = Vec::new();
        if !is_main {
            for t in 0..tree_count {
                let mut index = tree::ShapeIndex::new(&params, hash_width, start_bit);
                // replay sealed leaves; shape is insert-order
                // independent absent removes, so any walk order works
                for snap in snapshots.readers() {
                    tree::tree_walk(snap, snap.tree_root(t), &params, &mut |bucket| {
                        for leaf in &bucket.leaves {
                            index.insert(leaf.hash);
                        }
                        Ok(())
                    })?;
                }
                shape.push(index);
            }
        }
        Ok(PartitionExecutorState {
            table,
            partition,
            params,
            start_bit,
            hash_width,
            is_main,
            snapshot_threshold: cfg.snapshot_threshold,
            arena: Arena::new(cfg.arena_capacity, tree_count),
            snapshots,
            shape,
            stats: OwnerStats::default(),
        })
    }

    fn insert_leaf(&mut self, tree: u32, hash: u64, id: u64, value: &[u8]) -> Result<()> {
        let attempt = |s: &mut Self| {
            tree::tree_insert(
                &mut s.arena,
                tree as usize,
                &s.params,
                id,
                hash,
                s.hash_width,
                s.start_bit,
                value,
            )
        };
        match attempt(self) {
            Err(Error::ArenaFull { .. }) => {
                // seal-and-retry once; the seal resets the live arena
                self.seal()?;
                attempt(self)
            }
            other => other,
        }
    }

    fn seal(&mut self) -> Result<bool> {
        let sealed = self.snapshots.seal(&mut self.arena)?;
        if sealed {
            self.stats.seals += 1;
        }
        Ok(sealed)
    }

    fn maybe_seal(&mut self) -> Result<()> {
        if self.arena.used_bytes() >= self.snapshot_threshold {
            self.seal()?;
        }
        Ok(())
    }

    fn live_lookup(&self, tree: u32, hash: u64) -> Result<Vec<tree::Leaf>> {
        tree::tree_lookup(
            &self.arena,
            self.arena.tree_root(tree as usize),
            &self.params,
            hash,
            self.start_bit,
        )
    }

    pub fn apply(&mut self, req: &Request) -> Response {
        self.stats.applied += 1;
        match self.try_apply(req) {
            Ok(resp) => resp,
            Err(e) => Response::Error(e.to_string()),
        }
    }

    fn try_apply(&mut self, req: &Request) -> Result<Response> {
        match req {
            Request::PutRecord { tree, hash, id, value } => {
                debug_assert!(self.is_main);
                // replace: at most one live version per id
                tree::tree_remove(
                    &mut self.arena,
                    *tree as usize,
                    &self.params,
                    *id,
                    *hash,
                    self.start_bit,
                )?;
                self.insert_leaf(*tree, *hash, *id, value)?;
                self.maybe_seal()?;
                Ok(Response::Done)
            }
            Request::GetRecord { tree, hash, id } => {
                debug_assert!(self.is_main);
                if let Some(leaf) =
                    self.live_lookup(*tree, *hash)?.into_iter().find(|l| l.id == *id)
                {
                    return Ok(Response::Record(Some(leaf.value)));
                }
                Ok(Response::Record(self.snapshots.lookup_record(*tree, *hash, *id)?))
            }
            Request::InsertId { tree, hash, id } => {
                debug_assert!(!self.is_main);
                self.insert_leaf(*tree, *hash, *id, b"")?;
                self.shape[*tree as usize].insert(*hash);
                self.maybe_seal()?;
                Ok(Response::Done)
            }
            Request::RemoveId { tree, hash, id } => {
                debug_assert!(!self.is_main);
                tree::tree_remove(
                    &mut self.arena,
                    *tree as usize,
                    &self.params,
                    *id,
                    *hash,
                    self.start_bit,
                )?;
                // even if the leaf was sealed and stays on disk, the
                // unbroken tree's chain shortens
                self.shape[*tree as usize].remove(*hash);
                Ok(Response::Done)
            }
            Request::GetCandidates { tree, hash } => {
                debug_assert!(!self.is_main);
                // bucket depth of the unbroken full-history tree; the
                // live tree and each snapshot are at most this deep, so
                // filtering their buckets to it yields exactly the
                // bucket a store that never sealed would return
                let prefix_bits = self.shape[*tree as usize].prefix_bits(*hash);
                let mut ids: Vec<u64> = self
                    .live_lookup(*tree, *hash)?
                    .iter()
                    .filter(|l| (l.hash ^ *hash) >> (64 - prefix_bits) == 0)
                    .map(|l| l.id)
                    .collect();
                self.snapshots.lookup_candidates(*tree, *hash, prefix_bits, &mut ids)?;
                Ok(Response::Candidates(ids))
            }
            Request::Flush => {
                self.seal()?;
                Ok(Response::Done)
            }
            Request::Merge => {
                self.snapshots.merge()?;
                Ok(Response::Done)
            }
            Request::Stats => {
                let mut stats = self.stats.clone();
                stats.snapshot_count = self.snapshots.len() as u64;
                stats.live_used_bytes = self.arena.used_bytes() as u64;
                Ok(Response::Stats(stats))
            }
        }
    }

    /// Every (tree, id, hash, value) currently reachable, live arena
    /// plus snapshots, unordered. Used by state-equality oracles.
    pub fn dump(&self) -> Result<Vec<(u32, u64, u64, Vec<u8>)>> {
        let mut out = Vec::new();
        for tree in 0..self.arena.tree_count() {
            tree::tree_walk(
                &self.arena,
                self.arena.tree_root(tree),
                &self.params,
                &mut |bucket| {
                    for leaf in &bucket.leaves {
                        out.push((tree as u32, leaf.id, leaf.hash, leaf.value.clone()));
                    }
                    Ok(())
                },
            )?;
            for snap in self.snapshots.readers() {
                tree::tree_walk(snap, snap.tree_root(tree), &self.params, &mut |bucket| {
                    for leaf in &bucket.leaves {
                        out.push((tree as u32, leaf.id, leaf.hash, leaf.value.clone()));
                    }
                    Ok(())
                })?;
            }
        }
        out.sort();
        Ok(out)
    }

    /// Full-tree shape check: above-last-level chains within the bound
    /// and every leaf's hash matching its slot path.
    pub fn check_tree_invariants(&self) -> Result<()> {
        let lb = self.params.chunk_bits();
        for tree in 0..self.arena.tree_count() {
            tree::tree_walk(
                &self.arena,
                self.arena.tree_root(tree),
                &self.params,
                &mut |bucket| {
                    let terminal_base = self.start_bit + bucket.level * lb;
                    let can_spread = terminal_base + 2 * lb <= self.hash_width;
                    if can_spread && bucket.leaves.len() as u32 > self.params.bucket_cap {
                        return Err(Error::Corruption(format!(
                            "chain of {} exceeds bound {} above last level",
                            bucket.leaves.len(),
                            self.params.bucket_cap
                        )));
                    }
                    for leaf in &bucket.leaves {
                        for (d, &chunk) in bucket.path.iter().enumerate() {
                            let at = self.start_bit + d as u32 * lb;
                            if tree::hash_chunk(leaf.hash, at, lb) != chunk as u32 {
                                return Err(Error::Corruption(format!(
                                    "leaf {} hash disagrees with path at depth {d}",
                                    leaf.id
                                )));
                            }
                        }
                    }
                    Ok(())
                },
            )?;
        }
        Ok(())
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }
}

/// One reply to one routed message.
pub struct Envelope {
    pub req: Request,
    pub reply: Option<Sender<Response>>,
}

struct OwnerCell {
    mailbox: Mutex<VecDeque<Envelope>>,
    /// True from runnable-queue enqueue until the drain finishes.
    scheduled: AtomicBool,
    running: AtomicBool,
    state: Mutex<PartitionExecutorState>,
    log: Mutex<Vec<Request>>,
}

/// Messages drained per owner activation; bounds head-of-line blocking
/// behind a hot shard.
pub const BATCH_SIZE: usize = 64;
/// Mailbox bound; submits block (backpressure) when it is reached.
pub const MAILBOX_CAPACITY: usize = 1 << 16;

struct EngineShared {
    owners: Vec<OwnerCell>,
    runnable_tx: Sender<usize>,
    runnable_rx: Receiver<usize>,
    pending: AtomicUsize,
    idle_mutex: Mutex<()>,
    idle_cond: Condvar,
    shutdown: AtomicBool,
    exclusivity_violations: AtomicUsize,
    record_logs: bool,
    processed: AtomicU64,
}

/// The running engine: owners plus a worker pool.
pub struct Engine {
    shared: Arc<EngineShared>,
    workers: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl Engine {
    /// Builds every (table, partition) owner and starts `workers`
    /// worker threads. `record_logs` retains per-owner message logs for
    /// replay oracles.
    pub fn start(
        cfg: &TableConfig,
        data_dir: &Path,
        workers: usize,
        record_logs: bool,
    ) -> Result<Engine> {
        assert!(workers >= 1);
        cfg.validate()?;
        let mut owners = Vec::with_capacity(cfg.owner_count());
        for table in 0..=cfg.l_tables as u16 {
            for partition in 0..cfg.partitions() {
                owners.push(OwnerCell {
                    mailbox: Mutex::new(VecDeque::new()),
                    scheduled: AtomicBool::new(false),
                    running: AtomicBool::new(false),
                    state: Mutex::new(PartitionExecutorState::new(
                        cfg,
                        table,
                        partition,
                        &owner_dir(data_dir, table),
                    )?),
                    log: Mutex::new(Vec::new()),
                });
            }
        }
        let (runnable_tx, runnable_rx) = channel::unbounded();
        let shared = Arc::new(EngineShared {
            owners,
            runnable_tx,
            runnable_rx,
            pending: AtomicUsize::new(0),
            idle_mutex: Mutex::new(()),
            idle_cond: Condvar::new(),
            shutdown: AtomicBool::new(false),
            exclusivity_violations: AtomicUsize::new(0),
            record_logs,
            processed: AtomicU64::new(0),
        });
        let handles = (0..workers)
            .map(|_| {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || worker_loop(shared))
            })
            .collect();
        Ok(Engine { shared, workers: Mutex::new(handles) })
    }

    pub fn owner_count(&self) -> usize {
        self.shared.owners.len()
    }

    /// Enqueues a request for an owner. Blocks when the mailbox is at
    /// capacity.
    pub fn submit(
        &self,
        owner: usize,
        req: Request,
        reply: Option<Sender<Response>>,
    ) -> Result<()> {
        let shared = &self.shared;
        if shared.shutdown.load(Ordering::Acquire) {
            return Err(Error::EngineDown);
        }
        let cell = &shared.owners[owner];
        loop {
            let mut mailbox = cell.mailbox.lock();
            if mailbox.len() < MAILBOX_CAPACITY {
                shared.pending.fetch_add(1, Ordering::AcqRel);
                mailbox.push_back(Envelope { req, reply });
                break;
            }
            drop(mailbox);
            std::thread::yield_now();
        }
        if !cell.scheduled.swap(true, Ordering::AcqRel) {
            // channel only closes at shutdown
            let _ = shared.runnable_tx.send(owner);
        }
        Ok(())
    }

    /// Waits until every mailbox is drained and all replies delivered.
    pub fn quiesce(&self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.shared.idle_mutex.lock();
        while self.shared.pending.load(Ordering::Acquire) != 0 {
            if Instant::now() >= deadline {
                let stuck: Vec<usize> = self
                    .shared
                    .owners
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !c.mailbox.lock().is_empty())
                    .map(|(i, _)| i)
                    .collect();
                return Err(Error::Corruption(format!(
                    "quiesce timeout; owners with pending mail: {stuck:?}"
                )));
            }
            self.shared
                .idle_cond
                .wait_until(&mut guard, deadline.min(Instant::now() + Duration::from_millis(20)));
        }
        Ok(())
    }

    /// Stops accepting submits, drains what is queued and joins the
    /// workers.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::Release);
        let _ = self.quiesce(Duration::from_secs(30));
        // wake workers: one sentinel each
        let mut workers = self.workers.lock();
        for _ in workers.iter() {
            let _ = self.shared.runnable_tx.send(usize::MAX);
        }
        for handle in workers.drain(..) {
            let _ = handle.join();
        }
    }

    pub fn exclusivity_violations(&self) -> usize {
        self.shared.exclusivity_violations.load(Ordering::Acquire)
    }

    pub fn processed(&self) -> u64 {
        self.shared.processed.load(Ordering::Acquire)
    }

    /// Per-owner message logs (requires `record_logs`).
    pub fn take_logs(&self) -> Vec<Vec<Request>> {
        self.shared.owners.iter().map(|c| std::mem::take(&mut *c.log.lock())).collect()
    }

    /// Direct access to an owner's state; callers must hold the system
    /// quiesced (tests and maintenance only).
    pub fn lock_state(&self, owner: usize) -> MutexGuard<'_, PartitionExecutorState> {
        self.shared.owners[owner].state.lock()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if !self.shared.shutdown.load(Ordering::Acquire) {
            self.shutdown();
        }
    }
}

/// Snapshot directory layout: one subdirectory per table.
pub fn owner_dir(data_dir: &Path, table: u16) -> PathBuf {
    data_dir.join(format!("table{table}"))
}

fn worker_loop(shared: Arc<EngineShared>) {
    loop {
        let owner = match shared.runnable_rx.recv() {
            Ok(usize::MAX) | Err(_) => return,
            Ok(idx) => idx,
        };
        run_owner(&shared, owner);
    }
}

fn run_owner(shared: &EngineShared, owner: usize) {
    let cell = &shared.owners[owner];
    if cell.running.swap(true, Ordering::AcqRel) {
        shared.exclusivity_violations.fetch_add(1, Ordering::AcqRel);
    }
    let mut state = cell.state.lock();
    let batch: Vec<Envelope> = {
        let mut mailbox = cell.mailbox.lock();
        let n = mailbox.len().min(BATCH_SIZE);
        mailbox.drain(..n).collect()
    };
    let drained = batch.len();
    for envelope in batch {
        if shared.record_logs {
            cell.log.lock().push(envelope.req.clone());
        }
        let response = state.apply(&envelope.req);
        if let Some(reply) = envelope.reply {
            let _ = reply.send(response);
        }
    }
    drop(state);
    if drained > 0 {
        shared.processed.fetch_add(drained as u64, Ordering::Relaxed);
        if shared.pending.fetch_sub(drained, Ordering::AcqRel) == drained {
            let _guard = shared.idle_mutex.lock();
            shared.idle_cond.notify_all();
        }
    }
    cell.running.store(false, Ordering::Release);
    cell.scheduled.store(false, Ordering::Release);
    // a submit may have raced between the drain and the flag clear
    if !cell.mailbox.lock().is_empty() && !cell.scheduled.swap(true, Ordering::AcqRel) {
        let _ = shared.runnable_tx.send(owner);
    }
}
