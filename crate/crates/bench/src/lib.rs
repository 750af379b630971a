//! Seeded inputs shared by the benchmarks.

use colar::linalg::Matrix;
use colar::model::{build_covariance, make_canonical_pair, sample, sample_covariances, SampleCovariances};
use colar::{CovarianceKind, SampleSet, SparsityProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform(−1, 1) entries scaled by `scale`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    let mut rng = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// A draw from the rank-two simulation model with `p = m`.
pub fn simulation_sample(setting: CovarianceKind, p: usize, n: usize, seed: u64) -> SampleSet {
    let mut rng = rng(seed);
    let sigma = build_covariance(setting, p).expect("valid covariance");
    let profile = SparsityProfile::simulation_default();
    let model = make_canonical_pair(&sigma, &sigma, &profile, &[0.9, 0.8], &mut rng).expect("valid model");
    sample(&model, n, &mut rng).expect("sampling succeeds")
}

pub fn simulation_covariances(setting: CovarianceKind, p: usize, n: usize, seed: u64) -> SampleCovariances {
    sample_covariances(&simulation_sample(setting, p, n, seed))
}

/// `ρ = 0.55 √(ln(p + m) / n)`.
pub fn default_rho(p: usize, m: usize, n: usize) -> f64 {
    0.55 * (((p + m) as f64).ln() / n as f64).sqrt()
}
