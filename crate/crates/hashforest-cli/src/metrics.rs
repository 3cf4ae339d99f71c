//! Evaluation metrics: brute-force ground truth, error ratio, candidate
//! overhead and latency summaries. The ground-truth scan shares nothing
//! with the store's ranking path except `angular_distance` itself.

use hashforest::hashing::angular_distance;
use hashforest::SparseVector;

/// A hard floor for ground-truth distances in the error-ratio
/// denominator.
pub const EPSILON: f64 = 1e-12;

/// Distance a missing result slot is charged with: the metric maximum.
/// A missing neighbor is strictly worse than an orthogonal one (0.5).
pub const MISSING_PENALTY: f64 = 1.0;

/// Exact k nearest neighbors of `q` by full scan; ascending distance,
/// ties by ascending ID.
pub fn brute_force_knn(dataset: &[SparseVector], q: &SparseVector, k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = dataset
        .iter()
        .map(|v| (v.id, angular_distance(q, v).expect("dimension mismatch in oracle")))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Mean per-slot distance ratio of `found` against `truth`, both
/// ascending by distance. Slots `found` does not fill cost the maximum
/// distance; a zero ground-truth distance yields term 1 when the found
/// distance is also zero and otherwise caps the term at 1/EPSILON.
pub fn error_ratio(found: &[f64], truth: &[f64], k: usize) -> f64 {
    assert!(truth.len() >= k, "ground truth must fill all {k} slots");
    let mut sum = 0.0;
    for i in 0..k {
        let f = found.get(i).copied().unwrap_or(MISSING_PENALTY);
        let t = truth[i];
        sum += if t <= EPSILON {
            if f <= EPSILON {
                1.0
            } else {
                1.0 / EPSILON
            }
        } else {
            f / t
        };
    }
    sum / k as f64
}

/// Eq-style candidate overhead: |A(q)|/k, defined only when the
/// candidate set exceeds k.
pub fn candidate_overhead(aq_size: usize, k: usize) -> Option<f64> {
    (aq_size > k).then(|| aq_size as f64 / k as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencySummary {
    pub min_us: u64,
    pub avg_us: u64,
    pub max_us: u64,
    pub p99_us: u64,
}

impl LatencySummary {
    pub fn from_micros(samples: &mut Vec<u64>) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        LatencySummary {
            min_us: samples[0],
            avg_us: (samples.iter().sum::<u64>() as f64 / n as f64).round() as u64,
            max_us: samples[n - 1],
            p99_us: samples[(n * 99 / 100).min(n - 1)],
        }
    }
}
