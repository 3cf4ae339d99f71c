//! Reconstruction-free adaptive hash tree over arena blocks.
//!
//! Directory nodes hold `l` slot addresses and consume log2(l) hash
//! bits per level; leaf chains hang off terminal slots and spread to a
//! new directory when they exceed `t` (except at the last level, where
//! no bits remain and chains grow unboundedly). An insert mutates at
//! most one pre-existing slot plus newly allocated blocks.

use crate::arena::{Arena, BlockSource, BlockTag};
use crate::error::{Error, Result};

/// Leaf payload layout: id (8) | hash (8) | next (8) | value bytes.
const LEAF_HEADER: usize = 24;
const LEAF_NEXT_OFFSET: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    /// Directory fanout `l`, a power of two.
    pub fanout: u32,
    /// Chain bound `t` above the last level.
    pub bucket_cap: u32,
}

impl TreeParams {
    pub fn new(fanout: u32, bucket_cap: u32) -> Result<TreeParams> {
        if !fanout.is_power_of_two() || fanout < 2 || fanout > 256 {
            return Err(Error::Config(format!(
                "fanout must be a power of two in [2, 256], got {fanout}"
            )));
        }
        if bucket_cap < 1 {
            return Err(Error::Config("bucket cap must be >= 1".into()));
        }
        Ok(TreeParams { fanout, bucket_cap })
    }

    pub fn chunk_bits(&self) -> u32 {
        self.fanout.trailing_zeros()
    }
}

/// A decoded leaf. `value` is the encoded vector payload for the
/// MainTable and empty for LSHTables.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub id: u64,
    pub hash: u64,
    pub value: Vec<u8>,
}

pub fn encode_leaf(id: u64, hash: u64, next: u64, value: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(LEAF_HEADER + value.len());
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&hash.to_be_bytes());
    out.extend_from_slice(&next.to_be_bytes());
    out.extend_from_slice(value);
    out
}

fn decode_leaf(payload: &[u8]) -> Result<(Leaf, u64)> {
    if payload.len() < LEAF_HEADER {
        return Err(Error::Corruption("leaf payload shorter than header".into()));
    }
    let id = u64::from_be_bytes(payload[0..8].try_into().unwrap());
    let hash = u64::from_be_bytes(payload[8..16].try_into().unwrap());
    let next = u64::from_be_bytes(payload[16..24].try_into().unwrap());
    Ok((Leaf { id, hash, value: payload[LEAF_HEADER..].to_vec() }, next))
}

/// Bits `[consumed, consumed + n)` of the hash, bit 0 being the MSB.
#[inline]
pub fn hash_chunk(hash: u64, consumed: u32, n: u32) -> u32 {
    debug_assert!(consumed + n <= 64);
    ((hash << consumed) >> (64 - n)) as u32
}

fn read_slot<S: BlockSource>(src: &S, dir: u64, slot: u32) -> Result<u64> {
    src.read_u64_at(dir + crate::arena::FRAMING as u64 + slot as u64 * 8)
}

fn write_slot(arena: &mut Arena, dir: u64, slot: u32, value: u64) -> Result<()> {
    arena.write_payload_u64_at(dir, slot as usize * 8, value)
}

fn alloc_directory(arena: &mut Arena, params: &TreeParams) -> Result<u64> {
    let zeros = vec![0u8; params.fanout as usize * 8];
    arena.write_block(BlockTag::Directory, &zeros)
}

/// Walks the leaf chain starting at `head`, returning (addr, leaf,
/// next) triples in chain order.
fn read_chain<S: BlockSource>(src: &S, head: u64) -> Result<Vec<(u64, Leaf, u64)>> {
    let mut out = Vec::new();
    let mut cur = head;
    let mut seen = std::collections::HashSet::new();
    while cur != 0 {
        if !seen.insert(cur) {
            return Err(Error::Corruption(format!("leaf chain cycle at {cur}")));
        }
        let block = src.read_block(cur)?;
        if block.tag != BlockTag::Leaf {
            return Err(Error::Corruption(format!(
                "chain member {cur} has tag {:?}",
                block.tag
            )));
        }
        let (leaf, next) = decode_leaf(&block.payload)?;
        out.push((cur, leaf, next));
        cur = next;
    }
    Ok(out)
}

/// Inserts a leaf. `start_bit` is the first hash bit the tree consumes
/// (`m` for LSHTables, `C + m` for the MainTable); `width` is the total
/// number of meaningful hash bits.
pub fn tree_insert(
    arena: &mut Arena,
    tree: usize,
    params: &TreeParams,
    id: u64,
    hash: u64,
    width: u32,
    start_bit: u32,
    value: &[u8],
) -> Result<()> {
    let lb = params.chunk_bits();
    debug_assert!(start_bit + lb <= width && width <= 64);
    let mut root = arena.tree_root(tree);
    if root == 0 {
        root = alloc_directory(arena, params)?;
        arena.set_tree_root(tree, root);
    }
    let leaf_addr = arena.write_block(BlockTag::Leaf, &encode_leaf(id, hash, 0, value))?;

    let mut node = root;
    let mut consumed = start_bit;
    loop {
        let chunk = hash_chunk(hash, consumed, lb);
        let slot_val = read_slot(arena, node, chunk)?;
        if slot_val == 0 {
            write_slot(arena, node, chunk, leaf_addr)?;
            return Ok(());
        }
        let (tag, _, _, _) = arena.read_chunk_header(slot_val)?;
        if tag == BlockTag::Directory {
            node = slot_val;
            consumed += lb;
            continue;
        }
        // prepend to the existing chain
        arena.write_payload_u64_at(leaf_addr, LEAF_NEXT_OFFSET, slot_val)?;
        write_slot(arena, node, chunk, leaf_addr)?;
        let len = read_chain(arena, leaf_addr)?.len() as u32;
        if len > params.bucket_cap && consumed + 2 * lb <= width {
            spread(arena, params, node, chunk, consumed, width)?;
        }
        return Ok(());
    }
}

/// Moves an overfull chain one level down: a fresh directory replaces
/// the slot value and every chained leaf re-slots by its next log2(l)
/// hash bits. Recurses while a child slot still exceeds the bound and
/// bits remain.
fn spread(
    arena: &mut Arena,
    params: &TreeParams,
    parent: u64,
    slot: u32,
    consumed: u32,
    width: u32,
) -> Result<()> {
    let lb = params.chunk_bits();
    debug_assert!(consumed + 2 * lb <= width);
    let head = read_slot(arena, parent, slot)?;
    let chain = read_chain(arena, head)?;
    let new_dir = alloc_directory(arena, params)?;
    write_slot(arena, parent, slot, new_dir)?;
    for (addr, leaf, _) in &chain {
        let child = hash_chunk(leaf.hash, consumed + lb, lb);
        let child_head = read_slot(arena, new_dir, child)?;
        arena.write_payload_u64_at(*addr, LEAF_NEXT_OFFSET, child_head)?;
        write_slot(arena, new_dir, child, *addr)?;
    }
    if consumed + 3 * lb <= width {
        // a child slot may immediately re-overflow when the moved
        // leaves share their next chunk
        let mut overfull = Vec::new();
        for child in 0..params.fanout {
            let h = read_slot(arena, new_dir, child)?;
            if h != 0 && read_chain(arena, h)?.len() as u32 > params.bucket_cap {
                overfull.push(child);
            }
        }
        for child in overfull {
            spread(arena, params, new_dir, child, consumed + lb, width)?;
        }
    }
    Ok(())
}

/// Returns the full leaf chain of the terminal slot reached by the
/// hash, or empty if the descent hits an empty slot.
pub fn tree_lookup<S: BlockSource>(
    src: &S,
    root: u64,
    params: &TreeParams,
    hash: u64,
    start_bit: u32,
) -> Result<Vec<Leaf>> {
    if root == 0 {
        return Ok(Vec::new());
    }
    let lb = params.chunk_bits();
    let mut node = root;
    let mut consumed = start_bit;
    let mut depth = 0;
    loop {
        let chunk = hash_chunk(hash, consumed, lb);
        let slot_val = read_slot(src, node, chunk)?;
        if slot_val == 0 {
            return Ok(Vec::new());
        }
        let (tag, _, _, _) = src.read_chunk_header(slot_val)?;
        if tag == BlockTag::Directory {
            node = slot_val;
            consumed += lb;
            depth += 1;
            if depth > 64 {
                return Err(Error::Corruption("directory descent cycle".into()));
            }
            continue;
        }
        return Ok(read_chain(src, slot_val)?.into_iter().map(|(_, l, _)| l).collect());
    }
}

/// Unlinks the leaf with the given id from its chain and reclaims its
/// block. Directories are never collapsed. Returns whether it was found.
pub fn tree_remove(
    arena: &mut Arena,
    tree: usize,
    params: &TreeParams,
    id: u64,
    hash: u64,
    start_bit: u32,
) -> Result<bool> {
    let root = arena.tree_root(tree);
    if root == 0 {
        return Ok(false);
    }
    let lb = params.chunk_bits();
    let mut node = root;
    let mut consumed = start_bit;
    loop {
        let chunk = hash_chunk(hash, consumed, lb);
        let slot_val = read_slot(arena, node, chunk)?;
        if slot_val == 0 {
            return Ok(false);
        }
        let (tag, _, _, _) = arena.read_chunk_header(slot_val)?;
        if tag == BlockTag::Directory {
            node = slot_val;
            consumed += lb;
            continue;
        }
        let chain = read_chain(arena, slot_val)?;
        for (i, (addr, leaf, next)) in chain.iter().enumerate() {
            if leaf.id == id {
                if i == 0 {
                    write_slot(arena, node, chunk, *next)?;
                } else {
                    let (prev_addr, _, _) = chain[i - 1];
                    arena.write_payload_u64_at(prev_addr, LEAF_NEXT_OFFSET, *next)?;
                }
                arena.reclaim(*addr)?;
                return Ok(true);
            }
        }
        return Ok(false);
    }
}

/// One terminal bucket met during a full-tree walk.
pub struct Bucket {
    /// Slot indices from the root down to the terminal slot, inclusive.
    pub path: Vec<u16>,
    pub leaves: Vec<Leaf>,
    /// Depth of the directory holding the terminal slot (root = 0).
    pub level: u32,
}

/// Visits every non-empty terminal bucket of the tree.
pub fn tree_walk<S: BlockSource>(
    src: &S,
    root: u64,
    params: &TreeParams,
    f: &mut dyn FnMut(&Bucket) -> Result<()>,
) -> Result<()> {
    if root == 0 {
        return Ok(());
    }
    let mut path = Vec::new();
    walk_dir(src, root, params, 0, &mut path, f)
}

fn walk_dir<S: BlockSource>(
    src: &S,
    dir: u64,
    params: &TreeParams,
    level: u32,
    path: &mut Vec<u16>,
    f: &mut dyn FnMut(&Bucket) -> Result<()>,
) -> Result<()> {
    if level > 64 {
        return Err(Error::Corruption("directory depth exceeds hash width".into()));
    }
    for slot in 0..params.fanout {
        let val = read_slot(src, dir, slot)?;
        if val == 0 {
            continue;
        }
        path.push(slot as u16);
        let (tag, _, _, _) = src.read_chunk_header(val)?;
        if tag == BlockTag::Directory {
            walk_dir(src, val, params, level + 1, path, f)?;
        } else {
            let leaves =
                read_chain(src, val)?.into_iter().map(|(_, l, _)| l).collect();
            f(&Bucket { path: path.clone(), leaves, level })?;
        }
        path.pop();
    }
    Ok(())
}

#[derive(Clone)]
enum ShapeSlot {
    Empty,
    Dir(Vec<ShapeSlot>),
    Chain(Vec<u64>),
}

/// In-memory replica of one tree's spread decisions over its full
/// insert history. Sealing resets the live arena, so live trees regrow
/// shallow and per-epoch snapshot trees are shallower still; their
/// terminal buckets are coarser than the bucket an unbroken tree would
/// produce. Candidate lookups consult this index for the unbroken
/// tree's terminal depth and filter gathered leaves to it, which keeps
/// candidate sets independent of when seals happened.
///
/// Only hashes are kept (8 bytes per indexed ID); spreads depend on
/// chain lengths and redistribute by hash, so IDs and values are not
/// needed. Without removes the final shape is insert-order independent,
/// so rebuilding from snapshots on open reproduces it exactly.
pub struct ShapeIndex {
    params: TreeParams,
    width: u32,
    start_bit: u32,
    root: Vec<ShapeSlot>,
}

impl ShapeIndex {
    pub fn new(params: &TreeParams, width: u32, start_bit: u32) -> ShapeIndex {
        ShapeIndex {
            params: *params,
            width,
            start_bit,
            root: vec![ShapeSlot::Empty; params.fanout as usize],
        }
    }

    pub fn insert(&mut self, hash: u64) {
        let (lb, width, cap, fanout) =
            (self.params.chunk_bits(), self.width, self.params.bucket_cap, self.params.fanout);
        let mut slots = &mut self.root;
        let mut consumed = self.start_bit;
        loop {
            let chunk = hash_chunk(hash, consumed, lb) as usize;
            match &mut slots[chunk] {
                ShapeSlot::Empty => {
                    slots[chunk] = ShapeSlot::Chain(vec![hash]);
                    return;
                }
                ShapeSlot::Chain(chain) => {
                    chain.push(hash);
                    if chain.len() as u32 > cap && consumed + 2 * lb <= width {
                        spread_shape(&mut slots[chunk], consumed, lb, width, cap, fanout);
                    }
                    return;
                }
                ShapeSlot::Dir(_) => {}
            }
            let ShapeSlot::Dir(children) = &mut slots[chunk] else { unreachable!() };
            slots = children;
            consumed += lb;
        }
    }

    /// Drops one instance of the hash from its terminal chain.
    pub fn remove(&mut self, hash: u64) -> bool {
        let lb = self.params.chunk_bits();
        let mut slots = &mut self.root;
        let mut consumed = self.start_bit;
        loop {
            let chunk = hash_chunk(hash, consumed, lb) as usize;
            match &mut slots[chunk] {
                ShapeSlot::Empty => return false,
                ShapeSlot::Chain(chain) => {
                    let Some(pos) = chain.iter().position(|&h| h == hash) else {
                        return false;
                    };
                    chain.swap_remove(pos);
                    if chain.is_empty() {
                        slots[chunk] = ShapeSlot::Empty;
                    }
                    return true;
                }
                ShapeSlot::Dir(_) => {}
            }
            let ShapeSlot::Dir(children) = &mut slots[chunk] else { unreachable!() };
            slots = children;
            consumed += lb;
        }
    }

    /// Number of hash chunks past `start_bit` that define the terminal
    /// bucket this hash descends to; at least 1.
    pub fn prefix_chunks(&self, hash: u64) -> u32 {
        let lb = self.params.chunk_bits();
        let mut slots = &self.root;
        let mut consumed = self.start_bit;
        let mut chunks = 1;
        loop {
            let chunk = hash_chunk(hash, consumed, lb) as usize;
            match &slots[chunk] {
                ShapeSlot::Dir(children) => {
                    slots = children;
                    consumed += lb;
                    chunks += 1;
                }
                _ => return chunks,
            }
        }
    }

    /// First hash bit past the terminal bucket's defining prefix.
    pub fn prefix_bits(&self, hash: u64) -> u32 {
        self.start_bit + self.prefix_chunks(hash) * self.params.chunk_bits()
    }
}

fn spread_shape(slot: &mut ShapeSlot, consumed: u32, lb: u32, width: u32, cap: u32, fanout: u32) {
    let ShapeSlot::Chain(chain) = std::mem::replace(slot, ShapeSlot::Empty) else {
        unreachable!()
    };
    let mut children = vec![ShapeSlot::Empty; fanout as usize];
    for h in chain {
        let child = hash_chunk(h, consumed + lb, lb) as usize;
        match &mut children[child] {
            ShapeSlot::Empty => children[child] = ShapeSlot::Chain(vec![h]),
            ShapeSlot::Chain(c) => c.push(h),
            ShapeSlot::Dir(_) => unreachable!(),
        }
    }
    if consumed + 3 * lb <= width {
        for child in children.iter_mut() {
            if matches!(child, ShapeSlot::Chain(c) if c.len() as u32 > cap) {
                spread_shape(child, consumed + lb, lb, width, cap, fanout);
            }
        }
    }
    *slot = ShapeSlot::Dir(children);
}
