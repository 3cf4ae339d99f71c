//! The embeddable facade: routes puts and queries onto the dispatch
//! engine, resolves LSH candidates through the MainTable (so stale
//! snapshot entries can never surface a superseded version), and ranks
//! survivors by angular distance.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crossbeam::channel;

use crate::arena::{decode_vector, encode_vector};
use crate::dispatch::{Engine, OwnerStats, Request, Response};
use crate::error::{Error, Result};
use crate::hashing::{angular_distance, SparseVector};
use crate::route::{parse_config, render_config, Router, TableConfig};

pub const CONFIG_FILE: &str = "store.conf";

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub table: TableConfig,
    /// Vector dimensionality; fixed per store.
    pub dim: u32,
    pub data_dir: PathBuf,
    pub workers: usize,
    /// Retain per-owner message logs (replay oracles; costs memory).
    pub record_logs: bool,
}

impl StoreConfig {
    pub fn new(table: TableConfig, dim: u32, data_dir: impl Into<PathBuf>) -> StoreConfig {
        StoreConfig {
            table,
            dim,
            data_dir: data_dir.into(),
            workers: 1,
            record_logs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryMode {
    /// The k nearest candidates; ties broken by ascending ID.
    TopK(usize),
    /// Every candidate within angular distance `r`.
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    /// Normalized angular distance in [0, 1].
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    /// Ascending distance; ties by ascending ID.
    pub neighbors: Vec<Neighbor>,
    /// Candidate-set size before ranking (|A(q)|).
    pub candidates: usize,
    /// Candidates that no longer resolved to a record (stale snapshot
    /// entries).
    pub stale_drops: usize,
}

#[derive(Debug, Clone, Default)]
pub struct StoreStats {
    pub owners: usize,
    pub applied: u64,
    pub seals: u64,
    pub snapshots: u64,
    pub live_bytes: u64,
}

pub struct Store {
    router: Router,
    engine: Engine,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `cfg.data_dir` and
    /// persists the configuration there.
    pub fn open(cfg: StoreConfig) -> Result<Store> {
        fs::create_dir_all(&cfg.data_dir)?;
        let conf_path = cfg.data_dir.join(CONFIG_FILE);
        let rendered = format!("dim={}\n{}", cfg.dim, render_config(&cfg.table, None));
        if conf_path.exists() {
            let (existing_table, existing_dim) = read_conf(&conf_path)?;
            if existing_table != cfg.table || existing_dim != cfg.dim {
                return Err(Error::Config(format!(
                    "{} disagrees with the requested configuration",
                    conf_path.display()
                )));
            }
        } else {
            fs::write(&conf_path, rendered)?;
        }
        let router = Router::new(cfg.table.clone(), cfg.dim)?;
        let engine = Engine::start(&cfg.table, &cfg.data_dir, cfg.workers, cfg.record_logs)?;
        Ok(Store { router, engine })
    }

    /// Reopens a store from its persisted configuration.
    pub fn open_existing(data_dir: &Path, workers: usize) -> Result<Store> {
        let (table, dim) = read_conf(&data_dir.join(CONFIG_FILE))?;
        let mut cfg = StoreConfig::new(table, dim, data_dir);
        cfg.workers = workers;
        Store::open(cfg)
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &TableConfig {
        &self.router.cfg
    }

    fn call(&self, owner: usize, req: Request) -> Result<Response> {
        let (tx, rx) = channel::bounded(1);
        self.engine.submit(owner, req, Some(tx))?;
        let resp = rx.recv().map_err(|_| Error::EngineDown)?;
        if let Response::Error(e) = resp {
            return Err(Error::Data(e));
        }
        Ok(resp)
    }

    /// Inserts or replaces a record. An update first unindexes the old
    /// version's compound keys, so the LSH tables never accumulate live
    /// entries for superseded hashes.
    pub fn put(&self, v: &SparseVector) -> Result<()> {
        let main = self.router.route_main(v.id);
        let main_owner = self.router.owner_index(main.locator);
        let old = match self.call(
            main_owner,
            Request::GetRecord { tree: main.locator.tree, hash: main.hash, id: v.id },
        )? {
            Response::Record(old) => old,
            other => return Err(Error::Data(format!("unexpected reply {other:?}"))),
        };
        if let Some(payload) = old {
            let old_v = decode_vector(v.id, &payload)?;
            for routed in self.router.route_all_lsh(&old_v)? {
                self.engine.submit(
                    self.router.owner_index(routed.locator),
                    Request::RemoveId { tree: routed.locator.tree, hash: routed.hash, id: v.id },
                    None,
                )?;
            }
        }
        self.engine.submit(
            main_owner,
            Request::PutRecord {
                tree: main.locator.tree,
                hash: main.hash,
                id: v.id,
                value: encode_vector(v),
            },
            None,
        )?;
        for routed in self.router.route_all_lsh(v)? {
            self.engine.submit(
                self.router.owner_index(routed.locator),
                Request::InsertId { tree: routed.locator.tree, hash: routed.hash, id: v.id },
                None,
            )?;
        }
        Ok(())
    }

    /// Newest version of a record, or None.
    pub fn get(&self, id: u64) -> Result<Option<SparseVector>> {
        let main = self.router.route_main(id);
        match self.call(
            self.router.owner_index(main.locator),
            Request::GetRecord { tree: main.locator.tree, hash: main.hash, id },
        )? {
            Response::Record(Some(payload)) => Ok(Some(decode_vector(id, &payload)?)),
            Response::Record(None) => Ok(None),
            other => Err(Error::Data(format!("unexpected reply {other:?}"))),
        }
    }

    /// Union of the query's terminal buckets across all L tables,
    /// deduplicated and sorted.
    pub fn candidates(&self, q: &SparseVector) -> Result<Vec<u64>> {
        let routed = self.router.route_all_lsh(q)?;
        let (tx, rx) = channel::bounded(routed.len().max(1));
        let mut sent = 0;
        for r in routed {
            self.engine.submit(
                self.router.owner_index(r.locator),
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
        Ok(ids)
    }

    /// Candidate gathering, MainTable resolution and distance ranking.
    /// Candidates whose record has vanished (stale snapshot entries for
    /// removed IDs) are dropped silently.
    pub fn query(&self, q: &SparseVector, mode: QueryMode) -> Result<QueryResult> {
        let ids = self.candidates(q)?;
        let candidates = ids.len();
        let mut stale_drops = 0;
        let mut neighbors = Vec::with_capacity(candidates);
        for id in ids {
            let Some(v) = self.get(id)? else {
                stale_drops += 1;
                continue;
            };
            neighbors.push(Neighbor { id, distance: angular_distance(q, &v)? });
        }
        neighbors.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.id.cmp(&b.id))
        });
        match mode {
            QueryMode::TopK(k) => neighbors.truncate(k),
            QueryMode::Radius(r) => neighbors.retain(|n| n.distance <= r),
        }
        Ok(QueryResult { neighbors, candidates, stale_drops })
    }

    fn broadcast(&self, req: Request) -> Result<()> {
        let n = self.engine.owner_count();
        let (tx, rx) = channel::bounded(n);
        for owner in 0..n {
            self.engine.submit(owner, req.clone(), Some(tx.clone()))?;
        }
        drop(tx);
        for _ in 0..n {
            if let Response::Error(e) = rx.recv().map_err(|_| Error::EngineDown)? {
                return Err(Error::Data(e));
            }
        }
        Ok(())
    }

    /// Seals every partition's live arena into a snapshot.
    pub fn flush(&self) -> Result<()> {
        self.broadcast(Request::Flush)
    }

    /// Merges every partition's snapshot chain into one file.
    pub fn merge(&self) -> Result<()> {
        self.broadcast(Request::Merge)
    }

    pub fn quiesce(&self, timeout: Duration) -> Result<()> {
        self.engine.quiesce(timeout)
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let n = self.engine.owner_count();
        let (tx, rx) = channel::bounded(n);
        for owner in 0..n {
            self.engine.submit(owner, Request::Stats, Some(tx.clone()))?;
        }
        drop(tx);
        let mut agg = StoreStats { owners: n, ..Default::default() };
        for _ in 0..n {
            match rx.recv().map_err(|_| Error::EngineDown)? {
                Response::Stats(OwnerStats { applied, seals, snapshot_count, live_used_bytes }) => {
                    agg.applied += applied;
                    agg.seals += seals;
                    agg.snapshots += snapshot_count;
                    agg.live_bytes += live_used_bytes;
                }
                Response::Error(e) => return Err(Error::Data(e)),
                other => return Err(Error::Data(format!("unexpected reply {other:?}"))),
            }
        }
        Ok(agg)
    }

    pub fn shutdown(&self) {
        self.engine.shutdown();
    }
}

fn read_conf(path: &Path) -> Result<(TableConfig, u32)> {
    let text = fs::read_to_string(path)?;
    let mut dim = None;
    let mut rest = String::new();
    for line in text.lines() {
        match line.trim().strip_prefix("dim=") {
            Some(v) => {
                dim = Some(v.trim().parse::<u32>().map_err(|_| {
                    Error::Config(format!("bad dim {v} in {}", path.display()))
                })?)
            }
            None => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Config(format!("{} lacks dim", path.display())))?;
    let (table, _) = parse_config(&rest)?;
    Ok((table, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_distr::StandardNormal;

    fn small() -> TableConfig {
        TableConfig {
            l_tables: 3,
            part_bits: 2,
            tree_bits: 2,
            bucket_cap: 4,
            fanout: 16,
            key_bits: 32,
            seed: 11,
            arena_capacity: 4 << 20,
            snapshot_threshold: 2 << 20,
        }
    }

    fn random_vectors(n: usize, dim: u32, seed: u64) -> Vec<SparseVector> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let dense: Vec<f64> =
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                SparseVector::from_dense(i as u64, &dense)
            })
            .collect()
    }

    #[test]
    fn put_get_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
        for v in random_vectors(200, 16, 1) {
            store.put(&v).unwrap();
        }
        store.quiesce(Duration::from_secs(10)).unwrap();
        let v = store.get(57).unwrap().expect("record 57");
        assert_eq!(v.id, 57);
        assert_eq!(v.dim, 16);
        assert!(store.get(9999).unwrap().is_none());
        store.shutdown();
    }

    #[test]
    fn query_finds_itself() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
        let vectors = random_vectors(300, 16, 2);
        for v in &vectors {
            store.put(v).unwrap();
        }
        store.quiesce(Duration::from_secs(10)).unwrap();
        // a stored vector is always in its own buckets
        let res = store.query(&vectors[42], QueryMode::TopK(1)).unwrap();
        assert_eq!(res.neighbors[0].id, 42);
        assert!(res.neighbors[0].distance < 1e-6);
        store.shutdown();
    }

    #[test]
    fn update_supersedes_and_unindexes() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
        let mut vectors = random_vectors(2, 16, 3);
        vectors[1].id = 0; // same id, different direction
        store.put(&vectors[0]).unwrap();
        store.quiesce(Duration::from_secs(10)).unwrap();
        store.put(&vectors[1]).unwrap();
        store.quiesce(Duration::from_secs(10)).unwrap();
        let got = store.get(0).unwrap().unwrap();
        assert_eq!(got.values, vectors[1].values);
        // old version's buckets no longer list id 0 unless new key matches
        let old_keys = store.router.route_all_lsh(&vectors[0]).unwrap();
        let new_keys = store.router.route_all_lsh(&vectors[1]).unwrap();
        for (old, new) in old_keys.iter().zip(&new_keys) {
            if old.hash == new.hash && old.locator == new.locator {
                continue;
            }
            match store
                .call(
                    store.router.owner_index(old.locator),
                    Request::GetCandidates { tree: old.locator.tree, hash: old.hash },
                )
                .unwrap()
            {
                Response::Candidates(ids) => assert!(!ids.contains(&0)),
                other => panic!("unexpected {other:?}"),
            }
        }
        store.shutdown();
    }

    #[test]
    fn flush_preserves_results() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
        let vectors = random_vectors(300, 16, 4);
        for v in &vectors {
            store.put(v).unwrap();
        }
        store.quiesce(Duration::from_secs(10)).unwrap();
        let q = &vectors[7];
        let before = store.candidates(q).unwrap();
        store.flush().unwrap();
        let after_flush = store.candidates(q).unwrap();
        assert_eq!(before, after_flush);
        store.merge().unwrap();
        let after_merge = store.candidates(q).unwrap();
        assert_eq!(before, after_merge);
        assert!(store.get(7).unwrap().is_some());
        store.shutdown();
    }

    #[test]
    fn reopen_from_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let vectors = random_vectors(100, 16, 5);
        {
            let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
            for v in &vectors {
                store.put(v).unwrap();
            }
            store.quiesce(Duration::from_secs(10)).unwrap();
            store.flush().unwrap();
            store.shutdown();
        }
        let store = Store::open_existing(tmp.path(), 1).unwrap();
        let res = store.query(&vectors[13], QueryMode::TopK(1)).unwrap();
        assert_eq!(res.neighbors[0].id, 13);
        store.shutdown();
    }

    #[test]
    fn conf_mismatch_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap().shutdown();
        let mut other = small();
        other.l_tables = 5;
        assert!(matches!(
            Store::open(StoreConfig::new(other, 16, tmp.path())),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Store::open(StoreConfig::new(small(), 17, tmp.path())),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn radius_mode_filters() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(StoreConfig::new(small(), 16, tmp.path())).unwrap();
        let vectors = random_vectors(300, 16, 6);
        for v in &vectors {
            store.put(v).unwrap();
        }
        store.quiesce(Duration::from_secs(10)).unwrap();
        let res = store.query(&vectors[5], QueryMode::Radius(0.2)).unwrap();
        assert!(res.neighbors.iter().all(|n| n.distance <= 0.2));
        assert!(res.neighbors.iter().any(|n| n.id == 5));
        store.shutdown();
    }
}
