//! Shared fixtures for the simulator benchmarks.

use asgrad::{generate_synthetic, Dataset, SynConfig};

/// Synthetic problem of the given shape with fixed heterogeneity `alpha = beta = 1`.
pub fn fixture(n: usize, m: usize, d: usize) -> Dataset {
    generate_synthetic(&SynConfig {
        alpha: 1.0,
        beta: 1.0,
        n,
        m,
        d,
        seed: 0,
    })
    .expect("valid fixture shape")
}
