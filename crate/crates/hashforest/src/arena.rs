//! Partition-local byte arena: Header / Index / Data share one
//! contiguous region addressed by 8-byte offsets.
//!
//! Blocks are allocated in multiples of 16 bytes. Reclaimed blocks go
//! on per-size-class free lists whose heads live inside the Header at
//! `RECLAIMED_LIST + (s - 16) / 2` for physical size `s` (8-byte head
//! slots, so list index `(s - 16) / 16`). Payloads larger than the
//! biggest size class chain continuation blocks.

use crate::error::{Error, Result};

/// Byte offset of the first free-list head inside the Header.
pub const RECLAIMED_LIST: usize = 16;
/// Number of free lists; the largest single block is 16 * 256 = 4096 bytes.
pub const FREE_LIST_COUNT: usize = 256;
/// Largest physical block size.
pub const MAX_BLOCK_SIZE: usize = 16 * FREE_LIST_COUNT;
/// tag(1) + sizeClass(1) + payloadLen(8) + nextChunk(8).
pub const FRAMING: usize = 18;
/// Largest payload that fits a single block.
pub const MAX_CHUNK_PAYLOAD: usize = MAX_BLOCK_SIZE - FRAMING;

const ROOT_TABLE_OFFSET: usize = RECLAIMED_LIST + FREE_LIST_COUNT * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BlockTag {
    Leaf = 0,
    Directory = 1,
    Continuation = 2,
}

impl BlockTag {
    fn from_byte(b: u8) -> Result<BlockTag> {
        match b {
            0 => Ok(BlockTag::Leaf),
            1 => Ok(BlockTag::Directory),
            2 => Ok(BlockTag::Continuation),
            x => Err(Error::Corruption(format!("unknown block tag {x}"))),
        }
    }
}

/// A decoded block: tag plus the full payload (continuation chains
/// already concatenated).
#[derive(Debug, Clone)]
pub struct ArenaBlock {
    pub tag: BlockTag,
    pub payload: Vec<u8>,
}

/// Read access to a region of encoded blocks. Implemented by the live
/// `Arena` and by sealed snapshot images.
pub trait BlockSource {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()>;
    /// First offset past the last block; addresses must be below this.
    fn frontier(&self) -> u64;
    /// Addresses below this are Header bytes; 0 is the null address.
    fn header_size(&self) -> u64;

    fn read_u64_at(&self, offset: u64) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.read_at(offset, &mut buf)?;
        Ok(u64::from_be_bytes(buf))
    }

    /// Decodes the block at `addr`, following continuation chunks.
    fn read_block(&self, addr: u64) -> Result<ArenaBlock> {
        let (tag, payload_len, mut next, first) = self.read_chunk_header(addr)?;
        if tag == BlockTag::Continuation {
            return Err(Error::Corruption(format!(
                "block {addr} is a continuation chunk"
            )));
        }
        let mut payload = vec![0u8; payload_len];
        let first_take = first.min(payload_len);
        self.read_at(addr + FRAMING as u64, &mut payload[..first_take])?;
        let mut filled = first_take;
        let mut hops = 0usize;
        while filled < payload_len {
            if next == 0 {
                return Err(Error::Corruption(format!(
                    "chain at {addr} truncated: {filled}/{payload_len} bytes"
                )));
            }
            hops += 1;
            if hops > 1 << 20 {
                return Err(Error::Corruption(format!("chain cycle at {addr}")));
            }
            let (ctag, chunk_len, cnext, _) = self.read_chunk_header(next)?;
            if ctag != BlockTag::Continuation {
                return Err(Error::Corruption(format!(
                    "chunk {next} in chain of {addr} has tag {ctag:?}"
                )));
            }
            let take = chunk_len.min(payload_len - filled);
            self.read_at(next + FRAMING as u64, &mut payload[filled..filled + take])?;
            filled += take;
            next = cnext;
        }
        Ok(ArenaBlock { tag, payload })
    }

    /// Reads one chunk's framing: (tag, payloadLen, nextChunk, payload
    /// capacity of this chunk).
    fn read_chunk_header(&self, addr: u64) -> Result<(BlockTag, usize, u64, usize)> {
        self.check_addr(addr)?;
        let mut head = [0u8; FRAMING];
        self.read_at(addr, &mut head)?;
        let tag = BlockTag::from_byte(head[0])?;
        let size_class = head[1] as usize;
        let payload_len = u64::from_be_bytes(head[2..10].try_into().unwrap()) as usize;
        let next = u64::from_be_bytes(head[10..18].try_into().unwrap());
        let capacity = 16 * (size_class + 1) - FRAMING;
        Ok((tag, payload_len, next, capacity))
    }

    fn check_addr(&self, addr: u64) -> Result<()> {
        if addr % 16 != 0 || addr < self.header_size() || addr >= self.frontier() {
            return Err(Error::Corruption(format!(
                "address {addr} out of range [{}, {}) or misaligned",
                self.header_size(),
                self.frontier()
            )));
        }
        Ok(())
    }
}

/// The live, single-writer arena of one partition.
pub struct Arena {
    buf: Vec<u8>,
    capacity: usize,
    header_size: usize,
    frontier: usize,
    tree_count: usize,
    /// Bytes sitting on free lists (physical sizes).
    free_bytes: usize,
    /// Bytes of live blocks: frontier growth minus free-listed bytes.
    used_bytes: usize,
    /// Addresses currently on a free list; catches double reclaims.
    free_set: std::collections::HashSet<u64>,
}

impl Arena {
    pub fn new(capacity: usize, tree_count: usize) -> Arena {
        let raw_header = ROOT_TABLE_OFFSET + tree_count * 8;
        let header_size = (raw_header + 15) / 16 * 16;
        assert!(capacity > header_size, "capacity below header size");
        let mut buf = vec![0u8; capacity];
        // header starts zeroed: empty free lists, empty root table
        buf[..header_size].fill(0);
        Arena {
            buf,
            capacity,
            header_size,
            frontier: header_size,
            tree_count,
            free_bytes: 0,
            used_bytes: 0,
            free_set: std::collections::HashSet::new(),
        }
    }

    /// Rebuilds an arena view over a sealed image (used by merge).
    pub fn header_size_for(tree_count: usize) -> usize {
        ((ROOT_TABLE_OFFSET + tree_count * 8) + 15) / 16 * 16
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn used_bytes(&self) -> usize {
        self.used_bytes
    }

    pub fn tree_count(&self) -> usize {
        self.tree_count
    }

    /// The encoded image of everything up to the frontier. Snapshot
    /// files carry this verbatim, so arena offsets stay valid on disk.
    pub fn image(&self) -> &[u8] {
        &self.buf[..self.frontier]
    }

    pub fn tree_root(&self, tree: usize) -> u64 {
        debug_assert!(tree < self.tree_count);
        let off = ROOT_TABLE_OFFSET + tree * 8;
        u64::from_be_bytes(self.buf[off..off + 8].try_into().unwrap())
    }

    pub fn set_tree_root(&mut self, tree: usize, addr: u64) {
        debug_assert!(tree < self.tree_count);
        let off = ROOT_TABLE_OFFSET + tree * 8;
        self.buf[off..off + 8].copy_from_slice(&addr.to_be_bytes());
    }

    pub fn root_table(&self) -> Vec<u64> {
        (0..self.tree_count).map(|t| self.tree_root(t)).collect()
    }

    /// Drops all content: empty free lists, zeroed root table, frontier
    /// back at the header boundary.
    pub fn reset(&mut self) {
        self.buf[..self.header_size].fill(0);
        self.frontier = self.header_size;
        self.free_bytes = 0;
        self.used_bytes = 0;
        self.free_set.clear();
    }

    fn free_head_offset(physical: usize) -> usize {
        // the paper's (s - 16) / 2 indexes 8-byte head slots
        RECLAIMED_LIST + (physical - 16) / 2
    }

    fn read_free_head(&self, physical: usize) -> u64 {
        let off = Self::free_head_offset(physical);
        u64::from_be_bytes(self.buf[off..off + 8].try_into().unwrap())
    }

    fn write_free_head(&mut self, physical: usize, addr: u64) {
        let off = Self::free_head_offset(physical);
        self.buf[off..off + 8].copy_from_slice(&addr.to_be_bytes());
    }

    /// Allocates one physical chunk of the exact size class, reusing a
    /// free-listed block when one exists.
    fn allocate_chunk(&mut self, physical: usize) -> Result<u64> {
        debug_assert!(physical % 16 == 0 && physical >= 16 && physical <= MAX_BLOCK_SIZE);
        let head = self.read_free_head(physical);
        if head != 0 {
            // pop: the first 8 payload bytes of a free block hold the
            // next free address
            let next_off = head as usize + FRAMING;
            let next =
                u64::from_be_bytes(self.buf[next_off..next_off + 8].try_into().unwrap());
            self.write_free_head(physical, next);
            self.free_bytes -= physical;
            self.used_bytes += physical;
            self.free_set.remove(&head);
            return Ok(head);
        }
        if self.frontier + physical > self.capacity {
            return Err(Error::ArenaFull {
                needed: physical,
                available: self.capacity - self.frontier,
            });
        }
        let addr = self.frontier as u64;
        self.frontier += physical;
        self.used_bytes += physical;
        Ok(addr)
    }

    fn write_chunk_header(
        &mut self,
        addr: u64,
        tag: BlockTag,
        physical: usize,
        payload_len: usize,
        next: u64,
    ) {
        let a = addr as usize;
        self.buf[a] = tag as u8;
        self.buf[a + 1] = (physical / 16 - 1) as u8;
        self.buf[a + 2..a + 10].copy_from_slice(&(payload_len as u64).to_be_bytes());
        self.buf[a + 10..a + 18].copy_from_slice(&next.to_be_bytes());
    }

    /// Writes a payload as a block (chaining continuation chunks when it
    /// exceeds the largest size class) and returns its address. All
    /// chunks are allocated before any header is written, so a failed
    /// allocation leaves no partial chain behind.
    pub fn write_block(&mut self, tag: BlockTag, payload: &[u8]) -> Result<u64> {
        assert!(tag != BlockTag::Continuation);
        let mut sizes = Vec::new();
        let mut remaining = payload.len();
        loop {
            let take = remaining.min(MAX_CHUNK_PAYLOAD);
            sizes.push(take);
            remaining -= take;
            if remaining == 0 {
                break;
            }
        }
        let mut addrs = Vec::with_capacity(sizes.len());
        let mut allocated = Vec::new();
        for &chunk_payload in &sizes {
            let physical = Self::physical_size(chunk_payload);
            match self.allocate_chunk(physical) {
                Ok(a) => {
                    addrs.push((a, physical, chunk_payload));
                    allocated.push((a, physical));
                }
                Err(e) => {
                    // roll back chunks taken so far
                    for &(a, p) in &allocated {
                        self.push_free(a, p);
                    }
                    return Err(e);
                }
            }
        }
        let mut offset = 0usize;
        for (i, &(addr, physical, chunk_payload)) in addrs.iter().enumerate() {
            let next = if i + 1 < addrs.len() { addrs[i + 1].0 } else { 0 };
            let (chunk_tag, len_field) = if i == 0 {
                (tag, payload.len())
            } else {
                (BlockTag::Continuation, chunk_payload)
            };
            self.write_chunk_header(addr, chunk_tag, physical, len_field, next);
            let dst = addr as usize + FRAMING;
            self.buf[dst..dst + chunk_payload]
                .copy_from_slice(&payload[offset..offset + chunk_payload]);
            offset += chunk_payload;
        }
        Ok(addrs[0].0)
    }

    /// Smallest multiple of 16 holding `payload + FRAMING`.
    pub fn physical_size(payload: usize) -> usize {
        debug_assert!(payload <= MAX_CHUNK_PAYLOAD);
        (payload + FRAMING + 15) / 16 * 16
    }

    fn push_free(&mut self, addr: u64, physical: usize) {
        let head = self.read_free_head(physical);
        let off = addr as usize + FRAMING;
        self.buf[off..off + 8].copy_from_slice(&head.to_be_bytes());
        self.write_free_head(physical, addr);
        self.free_bytes += physical;
        self.used_bytes -= physical;
        self.free_set.insert(addr);
    }

    /// Returns the block (and its continuation chain) to the free lists.
    /// The framing `nextChunk` field links continuation chunks only, so
    /// the chain walk never follows leaf NEXT pointers.
    pub fn reclaim(&mut self, addr: u64) -> Result<()> {
        self.check_addr(addr)?;
        let (first_tag, _, _, _) = self.read_chunk_header(addr)?;
        if first_tag == BlockTag::Continuation {
            return Err(Error::Corruption(format!(
                "reclaim must start at a chain head, not chunk {addr}"
            )));
        }
        let mut cur = addr;
        let mut hops = 0usize;
        loop {
            let (_, _, next, _) = self.read_chunk_header(cur)?;
            if self.free_set.contains(&cur) {
                return Err(Error::Corruption(format!("double reclaim of {cur}")));
            }
            let size_class = self.buf[cur as usize + 1] as usize;
            self.push_free(cur, 16 * (size_class + 1));
            if next == 0 {
                break;
            }
            cur = next;
            hops += 1;
            if hops > 1 << 20 {
                return Err(Error::Corruption("reclaim chain cycle".into()));
            }
        }
        Ok(())
    }

    /// Overwrites bytes inside the first chunk's payload in place.
    /// Used for directory slot updates and leaf NEXT rewrites; callers
    /// never cross into continuation chunks.
    pub fn write_payload_at(&mut self, addr: u64, offset: usize, data: &[u8]) -> Result<()> {
        self.check_addr(addr)?;
        let size_class = self.buf[addr as usize + 1] as usize;
        let capacity = 16 * (size_class + 1) - FRAMING;
        if offset + data.len() > capacity {
            return Err(Error::Corruption(format!(
                "in-place write past chunk payload: {}+{} > {}",
                offset,
                data.len(),
                capacity
            )));
        }
        let dst = addr as usize + FRAMING + offset;
        self.buf[dst..dst + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn write_payload_u64_at(&mut self, addr: u64, offset: usize, value: u64) -> Result<()> {
        self.write_payload_at(addr, offset, &value.to_be_bytes())
    }

    /// Walks the free lists and recomputes the byte total (invariant
    /// checking in tests).
    pub fn free_list_bytes(&self) -> usize {
        let mut total = 0;
        for class in 0..FREE_LIST_COUNT {
            let physical = 16 * (class + 1);
            let mut cur = self.read_free_head(physical);
            while cur != 0 {
                total += physical;
                let off = cur as usize + FRAMING;
                cur = u64::from_be_bytes(self.buf[off..off + 8].try_into().unwrap());
            }
        }
        total
    }

    pub fn free_head(&self, physical: usize) -> u64 {
        self.read_free_head(physical)
    }

    pub fn allocated_span(&self) -> usize {
        self.frontier - self.header_size
    }
}

impl BlockSource for Arena {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let off = offset as usize;
        if off + buf.len() > self.frontier {
            return Err(Error::Corruption(format!(
                "read past frontier: {}+{} > {}",
                off,
                buf.len(),
                self.frontier
            )));
        }
        buf.copy_from_slice(&self.buf[off..off + buf.len()]);
        Ok(())
    }

    fn frontier(&self) -> u64 {
        self.frontier as u64
    }

    fn header_size(&self) -> u64 {
        self.header_size as u64
    }
}

/// Serialized sparse-vector payload, big-endian:
/// dim (4) | nnz (4) | indices (4 each) | values (8 each, IEEE-754).
pub fn encode_vector(v: &crate::hashing::SparseVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + v.nnz() * 12);
    out.extend_from_slice(&v.dim.to_be_bytes());
    out.extend_from_slice(&(v.nnz() as u32).to_be_bytes());
    for &i in &v.indices {
        out.extend_from_slice(&i.to_be_bytes());
    }
    for &x in &v.values {
        out.extend_from_slice(&x.to_be_bytes());
    }
    out
}

pub fn decode_vector(id: u64, payload: &[u8]) -> Result<crate::hashing::SparseVector> {
    if payload.len() < 8 {
        return Err(Error::Corruption("vector payload shorter than header".into()));
    }
    let dim = u32::from_be_bytes(payload[0..4].try_into().unwrap());
    let nnz = u32::from_be_bytes(payload[4..8].try_into().unwrap()) as usize;
    let need = 8 + nnz * 12;
    if payload.len() < need {
        return Err(Error::Corruption(format!(
            "truncated vector payload: {} < {}",
            payload.len(),
            need
        )));
    }
    let mut indices = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for k in 0..nnz {
        let off = 8 + k * 4;
        indices.push(u32::from_be_bytes(payload[off..off + 4].try_into().unwrap()));
    }
    let vals_base = 8 + nnz * 4;
    for k in 0..nnz {
        let off = vals_base + k * 8;
        values.push(f64::from_be_bytes(payload[off..off + 8].try_into().unwrap()));
    }
    Ok(crate::hashing::SparseVector { id, dim, indices, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::SparseVector;
    use rand::{Rng, SeedableRng};

    #[test]
    fn payload_10_rounds_to_32() {
        // oracle: ceil((payload + 18) / 16) * 16
        assert_eq!(Arena::physical_size(10), 32);
        assert_eq!(Arena::physical_size(0), 32); // 18 bytes framing alone
        assert_eq!(Arena::physical_size(14), 32);
        assert_eq!(Arena::physical_size(15), 48);
    }

    #[test]
    fn round_trip_small_block() {
        let mut arena = Arena::new(1 << 16, 4);
        let addr = arena.write_block(BlockTag::Leaf, b"hello arena").unwrap();
        assert_eq!(addr % 16, 0);
        let block = arena.read_block(addr).unwrap();
        assert_eq!(block.tag, BlockTag::Leaf);
        assert_eq!(block.payload, b"hello arena");
    }

    #[test]
    fn round_trip_continuation_chain() {
        let mut arena = Arena::new(1 << 20, 4);
        let payload: Vec<u8> = (0..5000u32).map(|i| (i % 251) as u8).collect();
        let addr = arena.write_block(BlockTag::Leaf, &payload).unwrap();
        let block = arena.read_block(addr).unwrap();
        assert_eq!(block.payload, payload);
    }

    #[test]
    fn reclaim_then_reuse_same_class() {
        let mut arena = Arena::new(1 << 16, 4);
        let a = arena.write_block(BlockTag::Leaf, &[7u8; 10]).unwrap();
        arena.reclaim(a).unwrap();
        let b = arena.write_block(BlockTag::Leaf, &[9u8; 10]).unwrap();
        assert_eq!(a, b, "free-listed block of the exact class is reused");
    }

    #[test]
    fn free_head_placement_matches_formula() {
        let mut arena = Arena::new(1 << 16, 4);
        // s = 16: payload must fit 16 - 18 < 0, impossible; smallest real is 32
        let a = arena.write_block(BlockTag::Leaf, &[1u8; 10]).unwrap(); // s = 32
        let b = arena.write_block(BlockTag::Leaf, &[1u8; 40]).unwrap(); // s = 64
        arena.reclaim(a).unwrap();
        arena.reclaim(b).unwrap();
        // head slot for s lives at RECLAIMED_LIST + (s - 16) / 2
        assert_eq!(Arena::free_head_offset(16), RECLAIMED_LIST);
        assert_eq!(Arena::free_head_offset(32), RECLAIMED_LIST + 8);
        assert_eq!(arena.free_head(32), a);
        assert_eq!(arena.free_head(64), b);
    }

    #[test]
    fn read_block_null_is_corruption() {
        let arena = Arena::new(1 << 16, 4);
        assert!(matches!(arena.read_block(0), Err(Error::Corruption(_))));
    }

    #[test]
    fn read_block_misaligned_is_corruption() {
        let mut arena = Arena::new(1 << 16, 4);
        let a = arena.write_block(BlockTag::Leaf, &[1u8; 10]).unwrap();
        assert!(arena.read_block(a + 1).is_err());
        assert!(arena.read_block(arena.frontier()).is_err());
    }

    #[test]
    fn double_reclaim_detected() {
        let mut arena = Arena::new(1 << 16, 4);
        let a = arena.write_block(BlockTag::Leaf, &[1u8; 10]).unwrap();
        arena.reclaim(a).unwrap();
        assert!(arena.reclaim(a).is_err());
    }

    #[test]
    fn arena_full_surfaces() {
        let mut arena = Arena::new(Arena::header_size_for(1) + 64, 1);
        arena.write_block(BlockTag::Leaf, &[0u8; 40]).unwrap(); // s = 64
        let err = arena.write_block(BlockTag::Leaf, &[0u8; 10]);
        assert!(matches!(err, Err(Error::ArenaFull { .. })));
    }

    #[test]
    fn vector_codec_layout() {
        let v = SparseVector::new(7, 3, &[(2, 1.0)]).unwrap();
        let enc = encode_vector(&v);
        assert_eq!(enc.len(), 20); // 4 + 4 + 4 + 8
        assert_eq!(decode_vector(7, &enc).unwrap(), v);

        let empty = SparseVector::new(1, 5, &[]).unwrap();
        assert_eq!(encode_vector(&empty).len(), 8);

        assert!(decode_vector(7, &enc[..11]).is_err());
    }

    #[test]
    fn vector_codec_random_round_trip() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for id in 0..10_000u64 {
            let dim = rng.gen_range(1..200u32);
            let nnz = rng.gen_range(0..=dim.min(20));
            let mut idxs: Vec<u32> = (0..dim).collect();
            let mut entries = Vec::new();
            for _ in 0..nnz {
                let pick = rng.gen_range(0..idxs.len());
                entries.push((idxs.swap_remove(pick), rng.gen_range(-10.0..10.0f64)));
            }
            entries.sort_by_key(|e| e.0);
            let v = SparseVector::new(id, dim, &entries).unwrap();
            assert_eq!(decode_vector(id, &encode_vector(&v)).unwrap(), v);
        }
    }

    #[test]
    fn used_bytes_conservation() {
        let mut arena = Arena::new(1 << 20, 4);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let mut live: Vec<u64> = Vec::new();
        for _ in 0..2000 {
            if !live.is_empty() && rng.gen_bool(0.4) {
                let a = live.swap_remove(rng.gen_range(0..live.len()));
                arena.reclaim(a).unwrap();
            } else {
                let size = rng.gen_range(0..200);
                let payload = vec![0u8; size];
                live.push(arena.write_block(BlockTag::Leaf, &payload).unwrap());
            }
            assert_eq!(
                arena.used_bytes(),
                arena.allocated_span() - arena.free_list_bytes()
            );
        }
    }
}
