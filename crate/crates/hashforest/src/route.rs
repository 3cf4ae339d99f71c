//! Partitioned-hash-forest routing: maps a record to the
//! (table, partition, tree) that exclusively owns it.
//!
//! LSHTables route by re-hashing: the first `m` key bits pick the tree
//! and `C` secondary sign projections over the key (read as a vector in
//! {-1,+1}^M) pick the partition. The MainTable routes by an avalanche
//! hash of the record ID.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hashing::{id_hash, CompoundHashKey, SignProjectionFamily};

pub const MAIN_TABLE: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeLocator {
    /// 0 = MainTable, 1..=L = LSHTables.
    pub table: u16,
    pub partition: u32,
    pub tree: u32,
}

/// A routed record: where it lives plus the hash bits its tree consumes.
#[derive(Debug, Clone, Copy)]
pub struct RoutedKey {
    pub locator: TreeLocator,
    /// Tree-descent hash, MSB-aligned in a u64.
    pub hash: u64,
    /// Meaningful bit count of `hash`.
    pub width: u32,
    /// First bit the tree consumes.
    pub start_bit: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableConfig {
    /// Number of LSHTables (L).
    pub l_tables: u32,
    /// Partition-hash count (C): 2^C partitions per table.
    pub part_bits: u32,
    /// Tree-selection bit count (m): 2^m trees per partition.
    pub tree_bits: u32,
    /// Chain bound t.
    pub bucket_cap: u32,
    /// Directory fanout l.
    pub fanout: u32,
    /// Compound key length M in bits.
    pub key_bits: u8,
    pub seed: u64,
    /// Live arena capacity per partition, bytes.
    pub arena_capacity: usize,
    /// Arena usedBytes level that triggers a seal.
    pub snapshot_threshold: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            l_tables: 10,
            part_bits: 4,
            tree_bits: 4,
            bucket_cap: 4,
            fanout: 128,
            key_bits: 32,
            seed: 1,
            arena_capacity: 64 << 20,
            snapshot_threshold: 48 << 20,
        }
    }
}

impl TableConfig {
    pub fn validate(&self) -> Result<()> {
        crate::tree::TreeParams::new(self.fanout, self.bucket_cap)?;
        if self.l_tables < 1 {
            return Err(Error::Config("need at least one LSHTable".into()));
        }
        if self.key_bits < 1 || self.key_bits > 32 {
            return Err(Error::Config("key bits must be in 1..=32".into()));
        }
        let lb = self.fanout.trailing_zeros();
        if self.tree_bits + lb > self.key_bits as u32 {
            return Err(Error::Config(format!(
                "m + log2(l) = {} exceeds key bits {}",
                self.tree_bits + lb,
                self.key_bits
            )));
        }
        if self.part_bits > 16 {
            return Err(Error::Config("partition bits must be <= 16".into()));
        }
        if self.snapshot_threshold > self.arena_capacity {
            return Err(Error::Config(
                "snapshot threshold exceeds arena capacity".into(),
            ));
        }
        Ok(())
    }

    pub fn partitions(&self) -> u32 {
        1 << self.part_bits
    }

    pub fn trees_per_partition(&self) -> u32 {
        1 << self.tree_bits
    }

    /// Owner (mailbox) count: MainTable plus L LSHTables, one owner per
    /// partition arena.
    pub fn owner_count(&self) -> usize {
        (self.l_tables as usize + 1) * self.partitions() as usize
    }

    pub fn tree_params(&self) -> crate::tree::TreeParams {
        crate::tree::TreeParams::new(self.fanout, self.bucket_cap).unwrap()
    }

    /// Primary hash-family seed of an LSHTable (1..=L).
    pub fn table_seed(&self, table: u16) -> u64 {
        id_hash(table as u64, self.seed ^ 0x7461_626c_6573)
    }

    /// Secondary (partition-level) seed `c` of an LSHTable.
    pub fn partition_seed(&self, table: u16, c: u32) -> u64 {
        id_hash((table as u64) << 32 | c as u64, self.seed ^ 0x7061_7274)
    }

    pub fn main_seed(&self) -> u64 {
        id_hash(0, self.seed ^ 0x6d61_696e)
    }
}

/// C sign-projection planes over {-1,+1}^M key vectors.
#[derive(Debug, Clone)]
struct PartitionHasher {
    planes: Vec<Vec<f64>>,
}

impl PartitionHasher {
    fn new(cfg: &TableConfig, table: u16) -> PartitionHasher {
        let planes = (0..cfg.part_bits)
            .map(|c| {
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.partition_seed(table, c));
                (0..cfg.key_bits).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        PartitionHasher { planes }
    }

    fn partition(&self, key: CompoundHashKey) -> u32 {
        let mut out = 0u32;
        for plane in &self.planes {
            let mut dot = 0.0;
            for (j, w) in plane.iter().enumerate() {
                let s = if key.bit(j as u8) == 1 { 1.0 } else { -1.0 };
                dot += w * s;
            }
            out = (out << 1) | (dot >= 0.0) as u32;
        }
        out
    }
}

/// Pure routing state shared by all callers: per-table primary families
/// plus partition hashers. Stable across restarts for identical seeds.
pub struct Router {
    pub cfg: TableConfig,
    pub dim: u32,
    families: Vec<SignProjectionFamily>,
    partition_hashers: Vec<PartitionHasher>,
    main_seed: u64,
}

impl Router {
    pub fn new(cfg: TableConfig, dim: u32) -> Result<Router> {
        cfg.validate()?;
        let families = (1..=cfg.l_tables as u16)
            .map(|t| SignProjectionFamily::new(cfg.table_seed(t), dim, cfg.key_bits))
            .collect();
        let partition_hashers =
            (1..=cfg.l_tables as u16).map(|t| PartitionHasher::new(&cfg, t)).collect();
        let main_seed = cfg.main_seed();
        Ok(Router { cfg, dim, families, partition_hashers, main_seed })
    }

    /// The compound-key family of LSHTable `table` (1..=L).
    pub fn family(&self, table: u16) -> &SignProjectionFamily {
        &self.families[table as usize - 1]
    }

    pub fn compute_key(
        &self,
        table: u16,
        v: &crate::hashing::SparseVector,
    ) -> Result<CompoundHashKey> {
        self.family(table).compute_key(v)
    }

    /// Routes a compound key within LSHTable `table` (1..=L).
    pub fn route_lsh(&self, key: CompoundHashKey, table: u16) -> RoutedKey {
        debug_assert!(table >= 1 && table as u32 <= self.cfg.l_tables);
        let m = self.cfg.tree_bits;
        let tree = if m == 0 { 0 } else { key.bits >> (32 - m) };
        let partition = self.partition_hashers[table as usize - 1].partition(key);
        RoutedKey {
            locator: TreeLocator { table, partition, tree },
            hash: key.as_tree_hash(),
            width: self.cfg.key_bits as u32,
            start_bit: m,
        }
    }

    /// Routes a record ID within the MainTable.
    pub fn route_main(&self, id: u64) -> RoutedKey {
        let h = id_hash(id, self.main_seed);
        let c = self.cfg.part_bits;
        let m = self.cfg.tree_bits;
        let partition = if c == 0 { 0 } else { (h >> (64 - c)) as u32 };
        let tree = if m == 0 { 0 } else { ((h << c) >> (64 - m)) as u32 };
        RoutedKey {
            locator: TreeLocator { table: MAIN_TABLE, partition, tree },
            hash: h,
            width: 64,
            start_bit: c + m,
        }
    }

    /// All L routed keys of a vector, one per LSHTable.
    pub fn route_all_lsh(
        &self,
        v: &crate::hashing::SparseVector,
    ) -> Result<Vec<RoutedKey>> {
        (1..=self.cfg.l_tables as u16)
            .map(|t| Ok(self.route_lsh(self.compute_key(t, v)?, t)))
            .collect()
    }

    /// Flat owner index of a locator: one owner per (table, partition).
    pub fn owner_index(&self, loc: TreeLocator) -> usize {
        loc.table as usize * self.cfg.partitions() as usize + loc.partition as usize
    }
}

/// Parses a line-oriented `key=value` configuration. Blank lines and
/// `#` comments are ignored. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<(TableConfig, Option<String>)> {
    let mut cfg = TableConfig::default();
    let mut data_dir = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let parse_u64 = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::Config(format!("line {}: bad number {v}", lineno + 1)))
        };
        match key {
            "L" => cfg.l_tables = parse_u64(value)? as u32,
            "C" => cfg.part_bits = parse_u64(value)? as u32,
            "m" => cfg.tree_bits = parse_u64(value)? as u32,
            "t" => cfg.bucket_cap = parse_u64(value)? as u32,
            "l" => cfg.fanout = parse_u64(value)? as u32,
            "M" => cfg.key_bits = parse_u64(value)? as u8,
            "seed" => cfg.seed = parse_u64(value)?,
            "arena_capacity" => cfg.arena_capacity = parse_u64(value)? as usize,
            "snapshot_threshold" => cfg.snapshot_threshold = parse_u64(value)? as usize,
            "data_dir" => data_dir = Some(value.to_string()),
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key {other}",
                    lineno + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok((cfg, data_dir))
}

pub fn render_config(cfg: &TableConfig, data_dir: Option<&str>) -> String {
    let mut out = String::new();
    out.push_str(&format!("L={}\n", cfg.l_tables));
    out.push_str(&format!("C={}\n", cfg.part_bits));
    out.push_str(&format!("m={}\n", cfg.tree_bits));
    out.push_str(&format!("t={}\n", cfg.bucket_cap));
    out.push_str(&format!("l={}\n", cfg.fanout));
    out.push_str(&format!("M={}\n", cfg.key_bits));
    out.push_str(&format!("seed={}\n", cfg.seed));
    out.push_str(&format!("arena_capacity={}\n", cfg.arena_capacity));
    out.push_str(&format!("snapshot_threshold={}\n", cfg.snapshot_threshold));
    if let Some(d) = data_dir {
        out.push_str(&format!("data_dir={d}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::llcp;
    use rand::{Rng, SeedableRng};

    fn small_cfg() -> TableConfig {
        TableConfig {
            l_tables: 2,
            part_bits: 4,
            tree_bits: 4,
            bucket_cap: 4,
            fanout: 16,
            key_bits: 32,
            seed: 3,
            arena_capacity: 1 << 20,
            snapshot_threshold: 1 << 19,
        }
    }

    #[test]
    fn tree_id_is_first_m_bits() {
        let router = Router::new(small_cfg(), 8).unwrap();
        let key = CompoundHashKey::new(0b1010_1100 << 24, 32);
        let routed = router.route_lsh(key, 1);
        assert_eq!(routed.locator.tree, 0b1010);
        assert_eq!(routed.start_bit, 4);
    }

    #[test]
    fn shared_prefix_implies_same_tree() {
        let router = Router::new(small_cfg(), 8).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = CompoundHashKey::new(rng.gen(), 32);
            // flip a bit below position m
            let flip = rng.gen_range(4..32);
            let b = CompoundHashKey::new(a.bits ^ (1 << (31 - flip)), 32);
            assert!(llcp(a, b) >= 4);
            assert_eq!(
                router.route_lsh(a, 1).locator.tree,
                router.route_lsh(b, 1).locator.tree
            );
        }
    }

    #[test]
    fn identical_keys_share_partition_and_tree() {
        let router = Router::new(small_cfg(), 8).unwrap();
        let key = CompoundHashKey::new(0x5a5a_5a5a, 32);
        let a = router.route_lsh(key, 2);
        let b = router.route_lsh(key, 2);
        assert_eq!(a.locator, b.locator);
    }

    #[test]
    fn partition_histogram_balanced() {
        // C = 4: empirical max/mean <= 1.6 over 10^4 random keys
        let router = Router::new(small_cfg(), 8).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(6);
        let mut hist = vec![0u64; 16];
        for _ in 0..10_000 {
            let key = CompoundHashKey::new(rng.gen(), 32);
            hist[router.route_lsh(key, 1).locator.partition as usize] += 1;
        }
        let max = *hist.iter().max().unwrap() as f64;
        let mean = 10_000.0 / 16.0;
        assert!(max / mean <= 1.6, "partition skew {}", max / mean);
    }

    #[test]
    fn main_routing_deterministic_and_balanced() {
        let router = Router::new(small_cfg(), 8).unwrap();
        assert_eq!(router.route_main(42).locator, router.route_main(42).locator);
        assert_eq!(router.route_main(42).start_bit, 8);

        // 10^5 sequential ids, C = 4, m = 4: per-tree max/mean <= 1.25
        let mut hist = std::collections::HashMap::new();
        for id in 0..100_000u64 {
            let loc = router.route_main(id).locator;
            *hist.entry((loc.partition, loc.tree)).or_insert(0u64) += 1;
        }
        let max = *hist.values().max().unwrap() as f64;
        let mean = 100_000.0 / 256.0;
        assert!(max / mean <= 1.25, "tree skew {}", max / mean);
    }

    #[test]
    fn degenerate_config_routes_everything_to_one_tree() {
        let mut cfg = small_cfg();
        cfg.part_bits = 0;
        cfg.tree_bits = 0;
        let router = Router::new(cfg, 8).unwrap();
        for id in [0u64, 1, 999, u64::MAX] {
            let loc = router.route_main(id).locator;
            assert_eq!((loc.partition, loc.tree), (0, 0));
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = small_cfg();
        let text = render_config(&cfg, Some("/tmp/x"));
        let (parsed, dir) = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(dir.as_deref(), Some("/tmp/x"));
        assert!(parse_config("bogus").is_err());
        assert!(parse_config("wat=1").is_err());
    }
}
