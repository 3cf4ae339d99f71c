//! Sparse vectors, sign-projection hash families and compound-key
//! distance primitives.
//!
//! A compound hash key is the concatenation of `M` single-bit sign
//! projections; two keys are compared by the length of their common
//! bit prefix (LLCP), with `dist = 1 / llcp`.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A sparse data point: only non-zero entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub id: u64,
    pub dim: u32,
    /// Strictly increasing, each `< dim`.
    pub indices: Vec<u32>,
    /// Same length as `indices`; never exactly 0.0.
    pub values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from (index, value) pairs, dropping zeros and
    /// validating ordering and range.
    pub fn new(id: u64, dim: u32, entries: &[(u32, f64)]) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(idx, val) in entries {
            if val == 0.0 {
                continue;
            }
            if idx >= dim {
                return Err(Error::Rejected(format!("index {idx} >= dim {dim}")));
            }
            if let Some(&last) = indices.last() {
                if idx <= last {
                    return Err(Error::Rejected(format!(
                        "indices not strictly increasing at {idx}"
                    )));
                }
            }
            indices.push(idx);
            values.push(val);
        }
        Ok(SparseVector { id, dim, indices, values })
    }

    /// Builds from a dense slice, omitting zero entries.
    pub fn from_dense(id: u64, dense: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                indices.push(i as u32);
                values.push(v);
            }
        }
        SparseVector { id, dim: dense.len() as u32, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product against a dense vector, iterating only non-zeros.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| dense[i as usize] * v)
            .sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let mut a = 0;
        let mut b = 0;
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }
}

/// An M-bit compound hash key. Bit index 0 is the most significant bit
/// of the stored word; unused low bits are zero when `m < 32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompoundHashKey {
    pub bits: u32,
    pub m: u8,
}

impl CompoundHashKey {
    pub fn new(bits: u32, m: u8) -> Self {
        debug_assert!(m >= 1 && m <= 32);
        let masked = if m == 32 { bits } else { bits & !(u32::MAX >> m) };
        CompoundHashKey { bits: masked, m }
    }

    /// Bit at position `i` (0 = most significant).
    pub fn bit(&self, i: u8) -> u32 {
        (self.bits >> (31 - i)) & 1
    }

    /// The key placed in the high bits of a u64, for tree descent.
    pub fn as_tree_hash(&self) -> u64 {
        (self.bits as u64) << 32
    }
}

/// A family of M unit projection vectors, deterministically derived
/// from a seed.
#[derive(Debug, Clone)]
pub struct SignProjectionFamily {
    pub seed: u64,
    pub dim: u32,
    pub m: u8,
    projections: Vec<Vec<f64>>,
}

impl SignProjectionFamily {
    pub fn new(seed: u64, dim: u32, m: u8) -> Self {
        assert!(m >= 1 && m <= 32, "key length must be in 1..=32 bits");
        assert!(dim >= 1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let projections = (0..m)
            .map(|_| {
                let mut v: Vec<f64> =
                    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= norm;
                }
                v
            })
            .collect();
        SignProjectionFamily { seed, dim, m, projections }
    }

    pub fn projection(&self, i: usize) -> &[f64] {
        &self.projections[i]
    }

    /// Hashes a vector to its M-bit compound key. Bit i is 1 when the
    /// i-th projection's dot product is >= 0 (sign(0) maps to 1 so
    /// keys are deterministic).
    pub fn compute_key(&self, v: &SparseVector) -> Result<CompoundHashKey> {
        if v.dim != self.dim {
            return Err(Error::DimMismatch { vector: v.dim, family: self.dim });
        }
        let mut bits = 0u32;
        for (i, proj) in self.projections.iter().enumerate() {
            if v.dot_dense(proj) >= 0.0 {
                bits |= 1 << (31 - i);
            }
        }
        Ok(CompoundHashKey::new(bits, self.m))
    }
}

/// Longest length of the common bit prefix of two keys, in `[0, M]`.
pub fn llcp(k1: CompoundHashKey, k2: CompoundHashKey) -> u32 {
    debug_assert_eq!(k1.m, k2.m);
    let diff = k1.bits ^ k2.bits;
    (diff.leading_zeros()).min(k1.m as u32)
}

/// Key distance `1 / llcp`; +inf when the prefixes share no bits.
pub fn key_distance(k1: CompoundHashKey, k2: CompoundHashKey) -> f64 {
    match llcp(k1, k2) {
        0 => f64::INFINITY,
        n => 1.0 / n as f64,
    }
}

/// Angular distance normalized to [0, 1]: arccos of the cosine
/// similarity over pi.
pub fn angular_distance(u: &SparseVector, v: &SparseVector) -> Result<f64> {
    if u.dim != v.dim {
        return Err(Error::DimMismatch { vector: v.dim, family: u.dim });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Rejected("zero-norm vector".into()));
    }
    let cos = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos() / std::f64::consts::PI)
}

/// 64-bit avalanche hash of a record ID (MurmurHash3 fmix64 finalizer),
/// seeded.
pub fn id_hash(id: u64, seed: u64) -> u64 {
    fmix64(id ^ fmix64(seed ^ 0x9e37_79b9_7f4a_7c15))
}

pub(crate) fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit2(id: u64, x: f64, y: f64) -> SparseVector {
        SparseVector::new(id, 2, &[(0, x), (1, y)]).unwrap()
    }

    #[test]
    fn key_bit_sign_of_positive_dot() {
        // family of one projection; steer the projection by hand
        let mut fam = SignProjectionFamily::new(1, 2, 1);
        fam.projections[0] = vec![1.0, 0.0];
        let v = unit2(0, 0.6, 0.8);
        let k = fam.compute_key(&v).unwrap();
        assert_eq!(k.bit(0), 1);
    }

    #[test]
    fn key_bit_zero_dot_maps_to_one() {
        let mut fam = SignProjectionFamily::new(1, 2, 1);
        fam.projections[0] = vec![1.0, 0.0];
        let v = unit2(0, 0.0, 1.0); // orthogonal, dot = 0.0
        let k = fam.compute_key(&v).unwrap();
        assert_eq!(k.bit(0), 1);
    }

    #[test]
    fn key_matches_naive_reimplementation() {
        // independent oracle: naive summation of each dot product
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let fam = SignProjectionFamily::new(42, 50, 32);
        for id in 0..20 {
            let dense: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = SparseVector::from_dense(id, &dense);
            let k = fam.compute_key(&v).unwrap();
            for i in 0..32u8 {
                let proj = fam.projection(i as usize);
                let mut dot = 0.0;
                for j in 0..50 {
                    dot += dense[j] * proj[j];
                }
                let expect = if dot >= 0.0 { 1 } else { 0 };
                assert_eq!(k.bit(i), expect, "id {id} bit {i}");
            }
        }
    }

    #[test]
    fn projections_are_unit_and_reproducible() {
        let a = SignProjectionFamily::new(9, 100, 16);
        let b = SignProjectionFamily::new(9, 100, 16);
        for i in 0..16 {
            let norm: f64 = a.projection(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(a.projection(i), b.projection(i));
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let fam = SignProjectionFamily::new(1, 3, 4);
        let v = unit2(0, 1.0, 0.0);
        assert!(matches!(fam.compute_key(&v), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn llcp_cases() {
        let k = |bits: u32, m: u8| CompoundHashKey::new(bits, m);
        let a = k(0xdead_beef, 32);
        assert_eq!(llcp(a, a), 32);
        // differ at bit 0
        assert_eq!(llcp(k(0x8000_0000, 32), k(0x0000_0000, 32)), 0);
        // 0b1011 vs 0b1001 at M=4: oracle says 2 (left-to-right compare)
        assert_eq!(llcp(k(0b1011 << 28, 4), k(0b1001 << 28, 4)), 2);
        // symmetric
        assert_eq!(
            llcp(k(0b1011 << 28, 4), k(0b1001 << 28, 4)),
            llcp(k(0b1001 << 28, 4), k(0b1011 << 28, 4))
        );
    }

    #[test]
    fn key_distance_cases() {
        let k = |bits: u32, m: u8| CompoundHashKey::new(bits, m);
        let a = k(0x1234_5678, 32);
        assert_eq!(key_distance(a, a), 1.0 / 32.0);
        assert_eq!(key_distance(k(0x8000_0000, 32), k(0, 32)), f64::INFINITY);
        // llcp = 4
        assert_eq!(key_distance(k(0b1111_0000 << 24, 8), k(0b1111_1000 << 24, 8)), 0.25);
    }

    #[test]
    fn angular_distance_cases() {
        let u = unit2(0, 1.0, 0.0);
        assert_eq!(angular_distance(&u, &u).unwrap(), 0.0);
        let v = unit2(1, 0.0, 1.0);
        assert!((angular_distance(&u, &v).unwrap() - 0.5).abs() < 1e-12);
        let w = unit2(2, -1.0, 0.0);
        assert!((angular_distance(&u, &w).unwrap() - 1.0).abs() < 1e-12);
        // symmetry
        assert_eq!(
            angular_distance(&u, &v).unwrap(),
            angular_distance(&v, &u).unwrap()
        );
    }

    #[test]
    fn angular_distance_zero_norm_rejected() {
        let u = unit2(0, 1.0, 0.0);
        let z = SparseVector::new(1, 2, &[]).unwrap();
        assert!(angular_distance(&u, &z).is_err());
    }

    #[test]
    fn id_hash_deterministic_and_seed_sensitive() {
        for x in [0u64, 1, u64::MAX, 123_456_789] {
            assert_eq!(id_hash(x, 5), id_hash(x, 5));
        }
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let mut differ = 0;
        for _ in 0..1000 {
            let x: u64 = rng.gen();
            if id_hash(x, 1) != id_hash(x, 2) {
                differ += 1;
            }
        }
        assert!(differ >= 999, "seed independence: {differ}/1000");
    }

    #[test]
    fn id_hash_bit_balance() {
        let n = 100_000u64;
        let mut counts = [0u64; 8];
        for x in 0..n {
            let h = id_hash(x, 77);
            for (b, c) in counts.iter_mut().enumerate() {
                *c += (h >> (63 - b)) & 1;
            }
        }
        for (b, &c) in counts.iter().enumerate() {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.5).abs() <= 0.02, "bit {b}: {frac}");
        }
    }

    #[test]
    fn scaling_invariance_of_keys() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let fam = SignProjectionFamily::new(4, 20, 16);
        for id in 0..100 {
            let dense: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = dense.iter().map(|x| x * 37.5).collect();
            let a = fam.compute_key(&SparseVector::from_dense(id, &dense)).unwrap();
            let b = fam.compute_key(&SparseVector::from_dense(id, &scaled)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sign_projection_collision_law() {
        // per-bit collision probability for unit vectors at angle theta
        // is 1 - theta/pi, measured within +/- 0.03 over 10^4 pairs
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        let dim = 16u32;
        let fam = SignProjectionFamily::new(8, dim, 32);
        let theta = 1.0f64; // radians
        let mut collisions = 0u64;
        let mut total = 0u64;
        for id in 0..10_000u64 {
            // random unit u, then v at fixed angle theta from u
            let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: Vec<f64> = u.iter().map(|x| x / nu).collect();
            let w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let proj: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
            let mut perp: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - proj * b).collect();
            let np = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut perp {
                *x /= np;
            }
            let v: Vec<f64> = u
                .iter()
                .zip(&perp)
                .map(|(a, b)| theta.cos() * a + theta.sin() * b)
                .collect();
            let ku = fam.compute_key(&SparseVector::from_dense(id, &u)).unwrap();
            let kv = fam.compute_key(&SparseVector::from_dense(id, &v)).unwrap();
            collisions += (ku.bits ^ kv.bits).count_zeros() as u64;
            total += 32;
        }
        let measured = collisions as f64 / total as f64;
        let expected = 1.0 - theta / std::f64::consts::PI;
        assert!(
            (measured - expected).abs() <= 0.03,
            "measured {measured}, expected {expected}"
        );
    }
}
