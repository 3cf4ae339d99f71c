//! Flash layer: sealing a partition arena into an immutable snapshot
//! (index + data + bloom files), newest-first bloom-gated lookups, and
//! duplicate-eliminating merge.
//!
//! File formats are big-endian. Snapshot files carry magic "PFOS",
//! version, tableId, partitionId, timestamp, a block region and a
//! trailing checksum; the per-partition manifest carries magic "PFOM",
//! version and an entry list of [timestamp, index-file name, data-file
//! name, checksum]. The data file's block region is the arena image
//! verbatim, so arena offsets stay valid as file offsets.

use std::fs::{self, File};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::arena::{Arena, BlockSource};
use crate::bloom::Bloom;
use crate::error::{Error, Result};
use crate::tree::{self, TreeParams};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PFOS";
pub const MANIFEST_MAGIC: &[u8; 4] = b"PFOM";
pub const FORMAT_VERSION: u16 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Encodes the bloom key of one non-empty LSHTable bucket: the tree id
/// followed by the root-to-terminal slot path, chunks as u16.
pub fn bucket_key(tree: u32, path: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + path.len() * 2);
    out.extend_from_slice(&tree.to_be_bytes());
    for &c in path {
        out.extend_from_slice(&c.to_be_bytes());
    }
    out
}

struct SnapshotHeader {
    table: u16,
    partition: u32,
    timestamp: u64,
    region_len: u64,
}

const SNAPSHOT_HEADER_LEN: usize = 4 + 2 + 2 + 4 + 8 + 8;

fn write_snapshot_file(
    path: &Path,
    table: u16,
    partition: u32,
    timestamp: u64,
    region: &[u8],
) -> Result<u64> {
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + region.len() + 8);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    out.extend_from_slice(&table.to_be_bytes());
    out.extend_from_slice(&partition.to_be_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
    out.extend_from_slice(&(region.len() as u64).to_be_bytes());
    out.extend_from_slice(region);
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_be_bytes());
    let mut f = File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()?;
    Ok(checksum)
}

/// Reads and checksum-verifies a whole snapshot file, returning header
/// and region bytes.
fn read_snapshot_file(path: &Path) -> Result<(SnapshotHeader, Vec<u8>)> {
    let bytes = fs::read(path)?;
    verify_snapshot_bytes(path, &bytes)?;
    let header = parse_snapshot_header(path, &bytes)?;
    let region =
        bytes[SNAPSHOT_HEADER_LEN..SNAPSHOT_HEADER_LEN + header.region_len as usize].to_vec();
    Ok((header, region))
}

fn parse_snapshot_header(path: &Path, bytes: &[u8]) -> Result<SnapshotHeader> {
    if bytes.len() < SNAPSHOT_HEADER_LEN + 8 {
        return Err(Error::Corruption(format!("{}: file too short", path.display())));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::Corruption(format!("{}: bad magic", path.display())));
    }
    let version = u16::from_be_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Corruption(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let table = u16::from_be_bytes(bytes[6..8].try_into().unwrap());
    let partition = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
    let timestamp = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
    let region_len = u64::from_be_bytes(bytes[20..28].try_into().unwrap());
    if bytes.len() != SNAPSHOT_HEADER_LEN + region_len as usize + 8 {
        return Err(Error::Corruption(format!(
            "{}: length {} does not match region {}",
            path.display(),
            bytes.len(),
            region_len
        )));
    }
    Ok(SnapshotHeader { table, partition, timestamp, region_len })
}

fn verify_snapshot_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if bytes.len() < 8 {
        return Err(Error::Corruption(format!("{}: file too short", path.display())));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_be_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::Corruption(format!("{}: checksum mismatch", path.display())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub timestamp: u64,
    pub index_file: String,
    pub data_file: String,
    pub checksum: u64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MANIFEST_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
    for e in entries {
        out.extend_from_slice(&e.timestamp.to_be_bytes());
        for name in [&e.index_file, &e.data_file] {
            out.extend_from_slice(&(name.len() as u16).to_be_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&e.checksum.to_be_bytes());
    }
    // atomic swap: write sibling tmp, fsync, rename over the manifest
    let tmp = path.with_extension("manifest.tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(&out)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 || &bytes[0..4] != MANIFEST_MAGIC {
        return Err(Error::Corruption(format!("{}: bad manifest", path.display())));
    }
    let version = u16::from_be_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Corruption(format!(
            "{}: unsupported manifest version {version}",
            path.display()
        )));
    }
    let count = u32::from_be_bytes(bytes[6..10].try_into().unwrap());
    let mut off = 10usize;
    let mut entries = Vec::with_capacity(count as usize);
    let take = |off: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        if *off + n > bytes.len() {
            return Err(Error::Corruption(format!("{}: truncated", path.display())));
        }
        let r = *off..*off + n;
        *off += n;
        Ok(r)
    };
    for _ in 0..count {
        let timestamp = u64::from_be_bytes(bytes[take(&mut off, 8)?].try_into().unwrap());
        let mut names = Vec::new();
        for _ in 0..2 {
            let len =
                u16::from_be_bytes(bytes[take(&mut off, 2)?].try_into().unwrap()) as usize;
            let name = String::from_utf8(bytes[take(&mut off, len)?].to_vec())
                .map_err(|_| Error::Corruption("non-utf8 file name".into()))?;
            names.push(name);
        }
        let checksum = u64::from_be_bytes(bytes[take(&mut off, 8)?].try_into().unwrap());
        entries.push(ManifestEntry {
            timestamp,
            index_file: names.remove(0),
            data_file: names.remove(0),
            checksum,
        });
    }
    Ok(entries)
}

/// An open, checksum-verified, immutable snapshot. Block reads go
/// straight to the data file at arena offsets.
pub struct SnapshotReader {
    pub timestamp: u64,
    pub record_count: u64,
    pub bloom: Bloom,
    root_table: Vec<u64>,
    data: File,
    region_len: u64,
    header_size: u64,
}

impl SnapshotReader {
    fn open(dir: &Path, entry: &ManifestEntry, tree_count: usize) -> Result<SnapshotReader> {
        let idx_path = dir.join(&entry.index_file);
        let dat_path = dir.join(&entry.data_file);
        let blm_path = dat_path.with_extension("blm");

        let (idx_header, idx_region) = read_snapshot_file(&idx_path)?;
        let dat_bytes = fs::read(&dat_path)?;
        verify_snapshot_bytes(&dat_path, &dat_bytes)?;
        let dat_header = parse_snapshot_header(&dat_path, &dat_bytes)?;
        let stored = u64::from_be_bytes(
            dat_bytes[dat_bytes.len() - 8..].try_into().unwrap(),
        );
        if stored != entry.checksum {
            return Err(Error::Corruption(format!(
                "{}: checksum differs from manifest",
                dat_path.display()
            )));
        }
        if idx_header.timestamp != entry.timestamp || dat_header.timestamp != entry.timestamp {
            return Err(Error::Corruption("snapshot timestamp mismatch".into()));
        }
        if dat_header.table != idx_header.table || dat_header.partition != idx_header.partition {
            return Err(Error::Corruption("snapshot index/data partition mismatch".into()));
        }
        // index region: tree_count u32 | roots | record_count u64
        if idx_region.len() != 4 + tree_count * 8 + 8 {
            return Err(Error::Corruption("index region size mismatch".into()));
        }
        let stored_trees = u32::from_be_bytes(idx_region[0..4].try_into().unwrap()) as usize;
        if stored_trees != tree_count {
            return Err(Error::Corruption(format!(
                "snapshot has {stored_trees} trees, expected {tree_count}"
            )));
        }
        let root_table: Vec<u64> = (0..tree_count)
            .map(|t| {
                u64::from_be_bytes(idx_region[4 + t * 8..12 + t * 8].try_into().unwrap())
            })
            .collect();
        let record_count =
            u64::from_be_bytes(idx_region[idx_region.len() - 8..].try_into().unwrap());

        let (_, blm_region) = read_snapshot_file(&blm_path)?;
        let bloom = Bloom::from_bytes(&blm_region)?;

        Ok(SnapshotReader {
            timestamp: entry.timestamp,
            record_count,
            bloom,
            root_table,
            data: File::open(&dat_path)?,
            region_len: dat_header.region_len,
            header_size: Arena::header_size_for(tree_count) as u64,
        })
    }

    pub fn tree_root(&self, tree: usize) -> u64 {
        self.root_table[tree]
    }
}

impl BlockSource for SnapshotReader {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        if offset + buf.len() as u64 > self.region_len {
            return Err(Error::Corruption(format!(
                "snapshot read past region: {}+{} > {}",
                offset,
                buf.len(),
                self.region_len
            )));
        }
        self.data
            .read_exact_at(buf, SNAPSHOT_HEADER_LEN as u64 + offset)
            .map_err(Error::Storage)
    }

    fn frontier(&self) -> u64 {
        self.region_len
    }

    fn header_size(&self) -> u64 {
        self.header_size
    }
}

/// The snapshot set of one partition: newest first, with the manifest
/// as the single durable source of ordering.
pub struct PartitionSnapshots {
    dir: PathBuf,
    table: u16,
    partition: u32,
    tree_count: usize,
    params: TreeParams,
    /// True for the MainTable (bloom keys are record IDs and lookups
    /// stop at the newest version).
    is_main: bool,
    start_bit: u32,
    hash_width: u32,
    snapshots: Vec<SnapshotReader>,
    next_timestamp: u64,
}

impl PartitionSnapshots {
    pub fn open(
        dir: &Path,
        table: u16,
        partition: u32,
        tree_count: usize,
        params: TreeParams,
        is_main: bool,
        start_bit: u32,
        hash_width: u32,
    ) -> Result<PartitionSnapshots> {
        fs::create_dir_all(dir)?;
        let mut set = PartitionSnapshots {
            dir: dir.to_path_buf(),
            table,
            partition,
            tree_count,
            params,
            is_main,
            start_bit,
            hash_width,
            snapshots: Vec::new(),
            next_timestamp: 1,
        };
        let manifest = set.manifest_path();
        if manifest.exists() {
            let mut entries = read_manifest(&manifest)?;
            entries.sort_by(|a, b| b.timestamp.cmp(&a.timestamp));
            for e in &entries {
                set.snapshots.push(SnapshotReader::open(&set.dir, e, tree_count)?);
            }
            set.next_timestamp =
                entries.iter().map(|e| e.timestamp).max().unwrap_or(0) + 1;
        }
        Ok(set)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(format!("t{}_p{}.manifest", self.table, self.partition))
    }

    fn file_stem(&self, timestamp: u64) -> String {
        format!("t{}_p{}_{}", self.table, self.partition, timestamp)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Newest-first iteration order.
    pub fn readers(&self) -> &[SnapshotReader] {
        &self.snapshots
    }

    fn current_entries(&self) -> Result<Vec<ManifestEntry>> {
        let manifest = self.manifest_path();
        if manifest.exists() {
            read_manifest(&manifest)
        } else {
            Ok(Vec::new())
        }
    }

    /// Builds the bloom over an arena or snapshot image's keys.
    fn build_bloom<S: BlockSource>(
        &self,
        src: &S,
        roots: &[u64],
    ) -> Result<(Bloom, u64)> {
        // first pass counts keys so the filter is sized at 15 bits/key
        let mut keys: Vec<Vec<u8>> = Vec::new();
        let mut records = 0u64;
        for (tree, &root) in roots.iter().enumerate() {
            tree::tree_walk(src, root, &self.params, &mut |bucket| {
                records += bucket.leaves.len() as u64;
                if self.is_main {
                    for leaf in &bucket.leaves {
                        keys.push(leaf.id.to_be_bytes().to_vec());
                    }
                } else {
                    keys.push(bucket_key(tree as u32, &bucket.path));
                }
                Ok(())
            })?;
        }
        let mut bloom = Bloom::standard(keys.len());
        for k in &keys {
            bloom.insert(k);
        }
        Ok((bloom, records))
    }

    /// Seals the arena into a new snapshot and resets it. Returns false
    /// (no-op) for an empty arena. The arena is only touched after the
    /// manifest swap, so a storage failure leaves it intact.
    pub fn seal(&mut self, arena: &mut Arena) -> Result<bool> {
        if arena.used_bytes() == 0 {
            return Ok(false);
        }
        let roots = arena.root_table();
        let (bloom, record_count) = self.build_bloom(arena, &roots)?;
        if record_count == 0 {
            return Ok(false);
        }
        let timestamp = self.next_timestamp;
        let stem = self.file_stem(timestamp);
        let idx_name = format!("{stem}.idx");
        let dat_name = format!("{stem}.dat");

        let mut idx_region = Vec::with_capacity(12 + roots.len() * 8);
        idx_region.extend_from_slice(&(roots.len() as u32).to_be_bytes());
        for &r in &roots {
            idx_region.extend_from_slice(&r.to_be_bytes());
        }
        idx_region.extend_from_slice(&record_count.to_be_bytes());

        write_snapshot_file(
            &self.dir.join(&idx_name),
            self.table,
            self.partition,
            timestamp,
            &idx_region,
        )?;
        let checksum = write_snapshot_file(
            &self.dir.join(&dat_name),
            self.table,
            self.partition,
            timestamp,
            arena.image(),
        )?;
        write_snapshot_file(
            &self.dir.join(format!("{stem}.blm")),
            self.table,
            self.partition,
            timestamp,
            &bloom.to_bytes(),
        )?;

        let mut entries = self.current_entries()?;
        entries.push(ManifestEntry {
            timestamp,
            index_file: idx_name,
            data_file: dat_name.clone(),
            checksum,
        });
        write_manifest(&self.manifest_path(), &entries)?;

        let entry = entries.last().unwrap().clone();
        let reader = SnapshotReader::open(&self.dir, &entry, self.tree_count)?;
        self.snapshots.insert(0, reader);
        self.next_timestamp = timestamp + 1;
        arena.reset();
        Ok(true)
    }

    /// All slot-path prefixes a probe hash can terminate at, as bloom
    /// keys. Stored bucket keys are terminal paths, so probing every
    /// prefix depth never misses.
    fn probe_keys(&self, tree: u32, hash: u64) -> Vec<Vec<u8>> {
        let lb = self.params.chunk_bits();
        let mut keys = Vec::new();
        let mut path = Vec::new();
        let mut consumed = self.start_bit;
        while consumed + lb <= self.hash_width {
            path.push(tree::hash_chunk(hash, consumed, lb) as u16);
            keys.push(bucket_key(tree, &path));
            consumed += lb;
        }
        keys
    }

    /// Accumulates LSHTable candidate IDs across all snapshots, newest
    /// first, skipping snapshots whose bloom rejects the probe. Each
    /// snapshot's tree covers one sealed epoch, so its terminal bucket
    /// can be coarser than the full-history tree's; only leaves whose
    /// hash matches the probe on the top `prefix_bits` bits are kept.
    pub fn lookup_candidates(
        &self,
        tree: u32,
        hash: u64,
        prefix_bits: u32,
        out: &mut Vec<u64>,
    ) -> Result<()> {
        debug_assert!(prefix_bits >= 1 && prefix_bits <= 64);
        let probes = self.probe_keys(tree, hash);
        for snap in &self.snapshots {
            if !probes.iter().any(|k| snap.bloom.contains(k)) {
                continue;
            }
            let leaves = tree::tree_lookup(
                snap,
                snap.tree_root(tree as usize),
                &self.params,
                hash,
                self.start_bit,
            )?;
            out.extend(
                leaves
                    .iter()
                    .filter(|l| (l.hash ^ hash) >> (64 - prefix_bits) == 0)
                    .map(|l| l.id),
            );
        }
        Ok(())
    }

    /// Finds the newest stored version of a MainTable record.
    pub fn lookup_record(&self, tree: u32, hash: u64, id: u64) -> Result<Option<Vec<u8>>> {
        for snap in &self.snapshots {
            if !snap.bloom.contains_u64(id) {
                continue;
            }
            let leaves = tree::tree_lookup(
                snap,
                snap.tree_root(tree as usize),
                &self.params,
                hash,
                self.start_bit,
            )?;
            if let Some(leaf) = leaves.iter().find(|l| l.id == id) {
                return Ok(Some(leaf.value.clone()));
            }
        }
        Ok(None)
    }

    /// Merges all snapshots of the partition into one, keeping only the
    /// newest version per ID (MainTable) or the deduplicated ID set per
    /// bucket (LSHTable). Inputs are replaced atomically: new files are
    /// written and synced, the manifest is swapped, then the old files
    /// are deleted.
    pub fn merge(&mut self) -> Result<()> {
        if self.snapshots.len() < 2 {
            return Ok(());
        }
        let capacity: usize = self
            .snapshots
            .iter()
            .map(|s| s.region_len as usize)
            .sum::<usize>()
            + Arena::header_size_for(self.tree_count)
            + (1 << 16);
        let mut merged = Arena::new(capacity, self.tree_count);
        let mut seen: std::collections::HashSet<(u64, u64)> = std::collections::HashSet::new();
        for snap in &self.snapshots {
            for tree in 0..self.tree_count {
                let root = snap.tree_root(tree);
                tree::tree_walk(snap, root, &self.params, &mut |bucket| {
                    // chains are newest-first; preserve that order in the
                    // merged tree by re-inserting oldest first
                    for leaf in bucket.leaves.iter().rev() {
                        let dedup_key = if self.is_main {
                            (leaf.id, 0)
                        } else {
                            (leaf.id, leaf.hash)
                        };
                        if !seen.insert(dedup_key) {
                            continue;
                        }
                        tree::tree_insert(
                            &mut merged,
                            tree,
                            &self.params,
                            leaf.id,
                            leaf.hash,
                            self.hash_width,
                            self.start_bit,
                            &leaf.value,
                        )?;
                    }
                    Ok(())
                })?;
            }
        }

        let old_entries = self.current_entries()?;
        let timestamp = self.next_timestamp;
        let stem = self.file_stem(timestamp);
        let idx_name = format!("{stem}.idx");
        let dat_name = format!("{stem}.dat");

        let roots = merged.root_table();
        let (bloom, record_count) = self.build_bloom(&merged, &roots)?;
        let mut idx_region = Vec::new();
        idx_region.extend_from_slice(&(roots.len() as u32).to_be_bytes());
        for &r in &roots {
            idx_region.extend_from_slice(&r.to_be_bytes());
        }
        idx_region.extend_from_slice(&record_count.to_be_bytes());

        write_snapshot_file(
            &self.dir.join(&idx_name),
            self.table,
            self.partition,
            timestamp,
            &idx_region,
        )?;
        let checksum = write_snapshot_file(
            &self.dir.join(&dat_name),
            self.table,
            self.partition,
            timestamp,
            merged.image(),
        )?;
        write_snapshot_file(
            &self.dir.join(format!("{stem}.blm")),
            self.table,
            self.partition,
            timestamp,
            &bloom.to_bytes(),
        )?;

        let entry =
            ManifestEntry { timestamp, index_file: idx_name, data_file: dat_name, checksum };
        write_manifest(&self.manifest_path(), std::slice::from_ref(&entry))?;

        // the swap is durable; old files are garbage now
        for old in &old_entries {
            let _ = fs::remove_file(self.dir.join(&old.index_file));
            let _ = fs::remove_file(self.dir.join(&old.data_file));
            let _ = fs::remove_file(self.dir.join(&old.data_file).with_extension("blm"));
        }
        self.snapshots = vec![SnapshotReader::open(&self.dir, &entry, self.tree_count)?];
        self.next_timestamp = timestamp + 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tree_insert;

    fn params() -> TreeParams {
        TreeParams::new(16, 2).unwrap()
    }

    fn lsh_set(dir: &Path) -> PartitionSnapshots {
        PartitionSnapshots::open(dir, 1, 0, 4, params(), false, 4, 32).unwrap()
    }

    fn key_hash(bits: u32) -> u64 {
        (bits as u64) << 32
    }

    #[test]
    fn seal_empty_arena_is_noop() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set = lsh_set(tmp.path());
        let mut arena = Arena::new(1 << 18, 4);
        assert!(!set.seal(&mut arena).unwrap());
        assert_eq!(set.len(), 0);
    }

    #[test]
    fn seal_preserves_candidates_and_timestamps_increase() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set = lsh_set(tmp.path());
        let mut arena = Arena::new(1 << 18, 4);
        let hash = key_hash(0x1234_5678);
        for id in 0..5 {
            tree_insert(&mut arena, 1, &params(), id, hash, 32, 4, b"").unwrap();
        }
        assert!(set.seal(&mut arena).unwrap());
        assert_eq!(arena.used_bytes(), 0, "seal resets the live arena");

        let mut ids = Vec::new();
        set.lookup_candidates(1, hash, 32, &mut ids).unwrap();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);

        tree_insert(&mut arena, 1, &params(), 9, hash, 32, 4, b"").unwrap();
        assert!(set.seal(&mut arena).unwrap());
        let ts: Vec<u64> = set.readers().iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![2, 1], "newest first, strictly increasing");
    }

    #[test]
    fn main_lookup_stops_at_newest_version() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set =
            PartitionSnapshots::open(tmp.path(), 0, 0, 4, params(), true, 8, 64).unwrap();
        let mut arena = Arena::new(1 << 18, 4);
        let hash = 0xabcd_ef01_2345_6789u64;
        tree_insert(&mut arena, 0, &params(), 7, hash, 64, 8, b"v1").unwrap();
        set.seal(&mut arena).unwrap();
        tree_insert(&mut arena, 0, &params(), 7, hash, 64, 8, b"v2").unwrap();
        set.seal(&mut arena).unwrap();
        assert_eq!(set.lookup_record(0, hash, 7).unwrap().unwrap(), b"v2");
        assert_eq!(set.lookup_record(0, hash, 99).unwrap(), None);
    }

    #[test]
    fn key_in_oldest_snapshot_found() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set = lsh_set(tmp.path());
        let mut arena = Arena::new(1 << 18, 4);
        let old_hash = key_hash(0x0f0f_0f0f);
        tree_insert(&mut arena, 0, &params(), 1, old_hash, 32, 4, b"").unwrap();
        set.seal(&mut arena).unwrap();
        for bits in [0xf000_0001u32, 0xf000_0002] {
            tree_insert(&mut arena, 3, &params(), bits as u64, key_hash(bits), 32, 4, b"")
                .unwrap();
            set.seal(&mut arena).unwrap();
        }
        assert_eq!(set.len(), 3);
        let mut ids = Vec::new();
        set.lookup_candidates(0, old_hash, 32, &mut ids).unwrap();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn merge_disjoint_sums_and_shadowing_keeps_newest() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set =
            PartitionSnapshots::open(tmp.path(), 0, 0, 4, params(), true, 8, 64).unwrap();
        let mut arena = Arena::new(1 << 18, 4);
        // snapshot 1: ids 0..10; snapshot 2: disjoint ids 10..20
        for id in 0..10u64 {
            tree_insert(&mut arena, 0, &params(), id, id << 40, 64, 8, b"a").unwrap();
        }
        set.seal(&mut arena).unwrap();
        for id in 10..20u64 {
            tree_insert(&mut arena, 0, &params(), id, id << 40, 64, 8, b"b").unwrap();
        }
        set.seal(&mut arena).unwrap();
        set.merge().unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.readers()[0].record_count, 20);

        // shadowing: update every id, merge keeps the newest values
        for id in 0..20u64 {
            tree_insert(&mut arena, 0, &params(), id, id << 40, 64, 8, b"new").unwrap();
        }
        set.seal(&mut arena).unwrap();
        set.merge().unwrap();
        assert_eq!(set.readers()[0].record_count, 20);
        for id in 0..20u64 {
            assert_eq!(set.lookup_record(0, id << 40, id).unwrap().unwrap(), b"new");
        }
        // exactly one snapshot's files remain on disk
        let dats = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().path().extension().is_some_and(|x| x == "dat")
            })
            .count();
        assert_eq!(dats, 1);
    }

    #[test]
    fn corrupt_data_file_detected() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let mut set = lsh_set(tmp.path());
            let mut arena = Arena::new(1 << 18, 4);
            tree_insert(&mut arena, 0, &params(), 1, key_hash(1), 32, 4, b"").unwrap();
            set.seal(&mut arena).unwrap();
        }
        // flip a byte in the data file
        let dat = std::fs::read_dir(tmp.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|x| x == "dat"))
            .unwrap();
        let mut bytes = fs::read(&dat).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&dat, bytes).unwrap();
        assert!(matches!(
            PartitionSnapshots::open(tmp.path(), 1, 0, 4, params(), false, 4, 32),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn stray_files_ignored_until_manifest_lists_them() {
        // a crashed seal/merge leaves orphan snapshot files; the manifest
        // stays authoritative
        let tmp = tempfile::tempdir().unwrap();
        {
            let mut set = lsh_set(tmp.path());
            let mut arena = Arena::new(1 << 18, 4);
            tree_insert(&mut arena, 0, &params(), 1, key_hash(1), 32, 4, b"").unwrap();
            set.seal(&mut arena).unwrap();
        }
        fs::write(tmp.path().join("t1_p0_99.dat"), b"garbage").unwrap();
        fs::write(tmp.path().join("t1_p0.manifest.tmp"), b"partial").unwrap();
        let set = lsh_set(tmp.path());
        assert_eq!(set.len(), 1);
        assert_eq!(set.readers()[0].timestamp, 1);
    }

    #[test]
    fn blooms_never_reject_stored_keys() {
        let tmp = tempfile::tempdir().unwrap();
        let mut set = lsh_set(tmp.path());
        let mut arena = Arena::new(1 << 20, 4);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(13);
        let mut hashes = Vec::new();
        for id in 0..2000u64 {
            let bits: u32 = rng.gen();
            let tree = (bits >> 28) as usize % 4;
            tree_insert(&mut arena, tree, &params(), id, key_hash(bits), 32, 4, b"")
                .unwrap();
            hashes.push((tree as u32, key_hash(bits), id));
        }
        set.seal(&mut arena).unwrap();
        for (tree, hash, id) in hashes {
            let mut ids = Vec::new();
            set.lookup_candidates(tree, hash, 32, &mut ids).unwrap();
            assert!(ids.contains(&id), "bloom or tree dropped id {id}");
        }
    }
}
