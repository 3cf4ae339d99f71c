//! Bloom summaries for snapshot files: 15 bits per key, 10 hash
//! functions by default (FPR around 0.001), double hashing over two
//! 64-bit avalanche digests of the key bytes.

use crate::hashing::fmix64;

pub const DEFAULT_BITS_PER_KEY: usize = 15;
pub const DEFAULT_HASH_COUNT: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Bloom {
    bit_count: u64,
    hash_count: u32,
    words: Vec<u64>,
}

fn digest(bytes: &[u8], seed: u64) -> u64 {
    let mut h = fmix64(seed ^ 0x51_7cc1_b727_220a_95);
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        h = fmix64(h ^ u64::from_le_bytes(word));
    }
    fmix64(h ^ bytes.len() as u64)
}

impl Bloom {
    /// Sized for `keys` expected insertions at `bits_per_key`.
    pub fn with_capacity(keys: usize, bits_per_key: usize, hash_count: u32) -> Bloom {
        let bit_count = (keys.max(1) * bits_per_key).max(64) as u64;
        Bloom {
            bit_count,
            hash_count,
            words: vec![0u64; bit_count.div_ceil(64) as usize],
        }
    }

    pub fn standard(keys: usize) -> Bloom {
        Bloom::with_capacity(keys, DEFAULT_BITS_PER_KEY, DEFAULT_HASH_COUNT)
    }

    pub fn bit_count(&self) -> u64 {
        self.bit_count
    }

    pub fn hash_count(&self) -> u32 {
        self.hash_count
    }

    fn positions(&self, key: &[u8]) -> impl Iterator<Item = u64> + '_ {
        let h1 = digest(key, 0xb10f);
        let h2 = digest(key, 0xf17e) | 1;
        let n = self.bit_count;
        (0..self.hash_count as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % n)
    }

    pub fn insert(&mut self, key: &[u8]) {
        let positions: Vec<u64> = self.positions(key).collect();
        for p in positions {
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.positions(key)
            .all(|p| self.words[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    pub fn insert_u64(&mut self, key: u64) {
        self.insert(&key.to_be_bytes());
    }

    pub fn contains_u64(&self, key: u64) -> bool {
        self.contains(&key.to_be_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.words.len() * 8);
        out.extend_from_slice(&self.bit_count.to_be_bytes());
        out.extend_from_slice(&self.hash_count.to_be_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> crate::error::Result<Bloom> {
        if bytes.len() < 12 {
            return Err(crate::error::Error::Corruption("bloom too short".into()));
        }
        let bit_count = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let hash_count = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let want = bit_count.div_ceil(64) as usize;
        let body = &bytes[12..];
        if body.len() != want * 8 {
            return Err(crate::error::Error::Corruption(format!(
                "bloom body {} words, expected {want}",
                body.len() / 8
            )));
        }
        let words = body
            .chunks_exact(8)
            .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Bloom { bit_count, hash_count, words })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives() {
        let mut bloom = Bloom::standard(10_000);
        for i in 0..10_000u64 {
            bloom.insert_u64(i);
        }
        for i in 0..10_000u64 {
            assert!(bloom.contains_u64(i));
        }
    }

    #[test]
    fn false_positive_rate_within_target() {
        let mut bloom = Bloom::standard(100_000);
        for i in 0..100_000u64 {
            bloom.insert_u64(i);
        }
        let mut fp = 0u64;
        for i in 1_000_000..1_100_000u64 {
            if bloom.contains_u64(i) {
                fp += 1;
            }
        }
        let rate = fp as f64 / 100_000.0;
        assert!(rate <= 0.003, "FPR {rate}");
    }

    #[test]
    fn serialization_round_trip() {
        let mut bloom = Bloom::standard(100);
        for i in 0..100u64 {
            bloom.insert_u64(i * 3);
        }
        let restored = Bloom::from_bytes(&bloom.to_bytes()).unwrap();
        assert_eq!(restored, bloom);
        assert!(Bloom::from_bytes(&bloom.to_bytes()[..20]).is_err());
    }
}
