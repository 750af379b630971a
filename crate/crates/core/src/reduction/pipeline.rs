use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::density::{truncated_normal, EdgeIndicator, GaussianizedMixture, ReductionParams};
use super::graph::CliqueInstance;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{standard_normal_matrix, SampleSet};

const UNIT_TOL: f64 = 1e-8;

pub(crate) fn check_dimensions(inst: &CliqueInstance, params: &ReductionParams, n: usize, p: usize) -> Result<()> {
    if params.n_vertices != inst.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "parameters for {} vertices, graph has {}",
            params.n_vertices,
            inst.n_vertices()
        )));
    }
    if n == 0 || inst.n_vertices() < 12 * n {
        return Err(Error::Precondition(format!("need N >= 12n, got N={} n={n}", inst.n_vertices())));
    }
    if p < 2 * n {
        return Err(Error::Precondition(format!("need p >= 2n, got p={p} n={n}")));
    }
    Ok(())
}

/// Maps a graph to `2n × p` data. Row `i` uses the shift `√η ξ_i` with `ξ_i`
/// a truncated standard normal. Its first `2n` entries are Gaussianized
/// according to the edges between vertex `N − 2n + i` and vertices
/// `0 … 2n − 1`; the remaining entries are standard normal.
pub fn reduce_to_pca<R: Rng + ?Sized>(
    inst: &CliqueInstance,
    params: &ReductionParams,
    n: usize,
    p: usize,
    rng: &mut R,
) -> Result<Matrix> {
    check_dimensions(inst, params, n, p)?;
    let n_vertices = inst.n_vertices();
    let radius = params.trunc_radius();
    let sqrt_eta = params.eta().sqrt();
    let mut w = Matrix::zeros(2 * n, p);
    for i in 0..2 * n {
        let mu = sqrt_eta * truncated_normal(radius, rng)?;
        let mixture = GaussianizedMixture::new(mu, params)?;
        let row_vertex = n_vertices - 2 * n + i;
        for j in 0..2 * n {
            let edge = EdgeIndicator::from_edge(inst.has_edge(row_vertex, j));
            w[(i, j)] = mixture.density(edge).sample_with_fallback(rng)?;
        }
        for j in 2 * n..p {
            w[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(w)
}

/// `θ̂′ S θ̂` with `S` the uncentered second moment of the last half of the
/// rows of `w`.
pub fn pca_test_statistic(w: &Matrix, theta_hat: &DVector<f64>) -> Result<f64> {
    let rows = w.nrows();
    if rows < 2 || !rows.is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!("expected 2n rows, got {rows}")));
    }
    if theta_hat.len() != w.ncols() {
        return Err(Error::DimensionMismatch(format!("direction of length {} for {} columns", theta_hat.len(), w.ncols())));
    }
    if (theta_hat.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::Precondition(format!("direction has norm {}", theta_hat.norm())));
    }
    let n = rows / 2;
    let proj = w.rows(n, n) * theta_hat;
    Ok(proj.norm_squared() / n as f64)
}

/// Rejects the null when the statistic reaches `1 + kη/4`. The direction
/// must be estimated from the first half of the rows only.
pub fn pca_test(w: &Matrix, theta_hat: &DVector<f64>, k: usize, eta: f64) -> Result<bool> {
    Ok(pca_test_statistic(w, theta_hat)? >= 1.0 + 0.25 * k as f64 * eta)
}

/// `X = (W + Z)/√2`, `Y = (W − Z)/√2` with `Z` standard normal noise.
pub fn pca_to_cca<R: Rng + ?Sized>(w: &Matrix, rng: &mut R) -> Result<SampleSet> {
    let z = standard_normal_matrix(w.nrows(), w.ncols(), rng);
    let c = std::f64::consts::FRAC_1_SQRT_2;
    SampleSet::new((w + &z) * c, (w - &z) * c)
}

/// Normalizes the first column of a canonical direction estimate.
pub fn cca_to_pca_estimator(u_hat: &Matrix) -> Result<DVector<f64>> {
    if u_hat.ncols() == 0 {
        return Err(Error::DegenerateInput("empty estimate".into()));
    }
    let col = u_hat.column(0).into_owned();
    let norm = col.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateInput("zero canonical direction".into()));
    }
    Ok(col / norm)
}
