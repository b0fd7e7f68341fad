//! Seeded instance sets shared by the benchmarks.

use tourpatch::instance::{random_symmetric, CostMatrix};

/// Random symmetric instances of size `n`, one per seed.
pub fn instances(n: usize, seeds: std::ops::Range<u64>) -> Vec<CostMatrix> {
    seeds.map(|s| random_symmetric(n, 99, s)).collect()
}
