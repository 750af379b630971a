//! Canonical pair models, Gaussian sampling and prediction loss.
//!
//! A canonical pair model has cross-covariance `Σ_xy = Σ_x U Λ V' Σ_y` with
//! `U'Σ_x U = V'Σ_y V = I_r`. Supports are zero-based row indices.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Values drawn for the nonzero rows of `U` and `V` before normalization.
pub const DEFAULT_ALPHABET: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

const MAX_REDRAWS: usize = 100;

/// Marginal covariance structure of the simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    /// `σ_ij = 0.3^{|i−j|}`.
    Toeplitz,
    /// Correlation matrix of the inverse of a pentadiagonal band matrix.
    SparseInv,
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceKind::Identity => "identity",
            CovarianceKind::Toeplitz => "toeplitz",
            CovarianceKind::SparseInv => "sparse_inv",
        })
    }
}

impl FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(CovarianceKind::Identity),
            "toeplitz" => Ok(CovarianceKind::Toeplitz),
            "sparse_inv" | "sparseinv" | "sparse-inv" => Ok(CovarianceKind::SparseInv),
            other => Err(Error::Parse(format!("unknown covariance setting {other:?}"))),
        }
    }
}

/// Builds a `p × p` covariance with unit diagonal.
pub fn build_covariance(kind: CovarianceKind, p: usize) -> Result<Matrix> {
    if p == 0 {
        return Err(Error::DegenerateInput("dimension must be positive".into()));
    }
    match kind {
        CovarianceKind::Identity => Ok(Matrix::identity(p, p)),
        CovarianceKind::Toeplitz => {
            Ok(Matrix::from_fn(p, p, |i, j| 0.3_f64.powi(i.abs_diff(j) as i32)))
        }
        CovarianceKind::SparseInv => {
            let omega = Matrix::from_fn(p, p, |i, j| match i.abs_diff(j) {
                0 => 1.0,
                1 => 0.5,
                2 => 0.4,
                _ => 0.0,
            });
            let chol = omega.cholesky().ok_or(Error::NotPsd { min_eigenvalue: f64::NAN })?;
            let sigma0 = chol.inverse();
            let d: Vec<f64> = (0..p).map(|i| sigma0[(i, i)].sqrt()).collect();
            let mut sigma = Matrix::from_fn(p, p, |i, j| sigma0[(i, j)] / (d[i] * d[j]));
            for i in 0..p {
                sigma[(i, i)] = 1.0;
            }
            Ok(linalg::symmetrize(&sigma))
        }
    }
}

/// Row supports of `U` and `V` together with their sparsity bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityProfile {
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
    pub s_u: usize,
    pub s_v: usize,
}

impl SparsityProfile {
    /// Profile whose bounds equal the support sizes.
    pub fn new(support_u: Vec<usize>, support_v: Vec<usize>) -> Self {
        let (s_u, s_v) = (support_u.len(), support_v.len());
        SparsityProfile { support_u, support_v, s_u, s_v }
    }

    /// Zero-based form of the rows `{1, 6, 11, 16, 21}` used for both sides
    /// in the simulation settings.
    pub fn simulation_default() -> Self {
        let rows = vec![0, 5, 10, 15, 20];
        SparsityProfile::new(rows.clone(), rows)
    }

    pub fn validate(&self, p: usize, m: usize) -> Result<()> {
        let check = |support: &[usize], bound: usize, dim: usize, side: &str| -> Result<()> {
            if support.len() > bound || bound > dim {
                return Err(Error::DegenerateInput(format!(
                    "{side} support of size {} with bound {bound} in dimension {dim}",
                    support.len()
                )));
            }
            if let Some(&bad) = support.iter().find(|&&i| i >= dim) {
                return Err(Error::DegenerateInput(format!(
                    "{side} support index {bad} out of range for dimension {dim}"
                )));
            }
            let mut sorted = support.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != support.len() {
                return Err(Error::DegenerateInput(format!("{side} support has duplicates")));
            }
            Ok(())
        };
        check(&self.support_u, self.s_u, p, "U")?;
        check(&self.support_v, self.s_v, m, "V")
    }
}

/// Population parameters of a Gaussian canonical pair model.
#[derive(Debug, Clone)]
pub struct CanonicalPairModel {
    pub sigma_x: Matrix,
    pub sigma_y: Matrix,
    pub u: Matrix,
    pub v: Matrix,
    pub lambda: DVector<f64>,
}

impl CanonicalPairModel {
    pub fn p(&self) -> usize {
        self.sigma_x.nrows()
    }

    pub fn m(&self) -> usize {
        self.sigma_y.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn sigma_xy(&self) -> Matrix {
        let mut ul = &self.sigma_x * &self.u;
        for (j, l) in self.lambda.iter().enumerate() {
            ul.column_mut(j).scale_mut(*l);
        }
        ul * (&self.sigma_y * &self.v).transpose()
    }

    /// `[[Σ_x, Σ_xy], [Σ_yx, Σ_y]]`.
    pub fn joint_covariance(&self) -> Matrix {
        let (p, m) = (self.p(), self.m());
        let sxy = self.sigma_xy();
        let mut joint = Matrix::zeros(p + m, p + m);
        joint.view_mut((0, 0), (p, p)).copy_from(&self.sigma_x);
        joint.view_mut((p, p), (m, m)).copy_from(&self.sigma_y);
        joint.view_mut((0, p), (p, m)).copy_from(&sxy);
        joint.view_mut((p, 0), (m, p)).copy_from(&sxy.transpose());
        joint
    }

    /// Leading `r` canonical pairs as a smaller model.
    pub fn leading(&self, r: usize) -> CanonicalPairModel {
        let r = r.min(self.rank());
        CanonicalPairModel {
            sigma_x: self.sigma_x.clone(),
            sigma_y: self.sigma_y.clone(),
            u: self.u.columns(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
            lambda: self.lambda.rows(0, r).into_owned(),
        }
    }

    /// Checks shapes, the normalization `U'Σ_xU = V'Σ_yV = I_r` and the
    /// correlation ordering.
    pub fn validate(&self) -> Result<()> {
        let (p, m, r) = (self.p(), self.m(), self.rank());
        if self.u.shape() != (p, r) || self.v.shape() != (m, r) {
            return Err(Error::DimensionMismatch(format!(
                "U is {:?} and V is {:?}, expected ({p}, {r}) and ({m}, {r})",
                self.u.shape(),
                self.v.shape()
            )));
        }
        check_lambda(self.lambda.as_slice())?;
        let eye = Matrix::identity(r, r);
        let nu = (self.u.transpose() * &self.sigma_x * &self.u - &eye).amax();
        let nv = (self.v.transpose() * &self.sigma_y * &self.v - &eye).amax();
        if nu > 1e-8 || nv > 1e-8 {
            return Err(Error::DegenerateInput(format!(
                "canonical directions are not normalized (errors {nu:e}, {nv:e})"
            )));
        }
        Ok(())
    }

    /// Writes `sigma_x.csv`, `sigma_y.csv`, `u.csv`, `v.csv` and `lambda.csv`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        linalg::save_matrix(dir.join("sigma_x.csv"), &self.sigma_x)?;
        linalg::save_matrix(dir.join("sigma_y.csv"), &self.sigma_y)?;
        linalg::save_matrix(dir.join("u.csv"), &self.u)?;
        linalg::save_matrix(dir.join("v.csv"), &self.v)?;
        let lambda = Matrix::from_column_slice(self.rank(), 1, self.lambda.as_slice());
        linalg::save_matrix(dir.join("lambda.csv"), &lambda)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let lambda = linalg::load_matrix(dir.join("lambda.csv"))?;
        let model = CanonicalPairModel {
            sigma_x: linalg::load_matrix(dir.join("sigma_x.csv"))?,
            sigma_y: linalg::load_matrix(dir.join("sigma_y.csv"))?,
            u: linalg::load_matrix(dir.join("u.csv"))?,
            v: linalg::load_matrix(dir.join("v.csv"))?,
            lambda: DVector::from_iterator(lambda.len(), lambda.iter().copied()),
        };
        model.validate()?;
        Ok(model)
    }
}

fn check_lambda(lambda: &[f64]) -> Result<()> {
    if lambda.is_empty() {
        return Err(Error::DegenerateInput("at least one canonical correlation is required".into()));
    }
    if lambda.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::DegenerateInput(format!("correlations must lie in (0, 1): {lambda:?}")));
    }
    if lambda.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::DegenerateInput(format!("correlations must be nonincreasing: {lambda:?}")));
    }
    Ok(())
}

/// Gram–Schmidt of the columns of `raw` in the inner product `⟨a, b⟩ = a'Σb`,
/// after projecting out the (already Σ-orthonormal) columns of `basis`.
/// Returns `None` when a column collapses.
fn sigma_gram_schmidt(raw: &Matrix, sigma: &Matrix, basis: Option<&Matrix>) -> Option<Matrix> {
    let mut out: Vec<DVector<f64>> = basis
        .map(|b| b.column_iter().map(|c| c.into_owned()).collect())
        .unwrap_or_default();
    let n_fixed = out.len();
    for col in raw.column_iter() {
        let mut a = col.into_owned();
        let raw_norm = a.dot(&(sigma * &a));
        if raw_norm <= 0.0 {
            return None;
        }
        // Two passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for q in &out {
                let c = a.dot(&(sigma * q));
                a.axpy(-c, q, 1.0);
            }
        }
        let norm_sq = a.dot(&(sigma * &a));
        if norm_sq <= 1e-10 * raw_norm {
            return None;
        }
        a /= norm_sq.sqrt();
        out.push(a);
    }
    let new = &out[n_fixed..];
    Some(Matrix::from_columns(new))
}

fn draw_on_support<R: Rng + ?Sized>(
    dim: usize,
    support: &[usize],
    cols: usize,
    alphabet: &[f64],
    rng: &mut R,
) -> Matrix {
    let mut raw = Matrix::zeros(dim, cols);
    for j in 0..cols {
        for &i in support {
            raw[(i, j)] = alphabet[rng.random_range(0..alphabet.len())];
        }
    }
    raw
}

fn normalized_directions<R: Rng + ?Sized>(
    sigma: &Matrix,
    support: &[usize],
    cols: usize,
    basis: Option<&Matrix>,
    alphabet: &[f64],
    rng: &mut R,
) -> Result<Matrix> {
    for _ in 0..MAX_REDRAWS {
        let raw = draw_on_support(sigma.nrows(), support, cols, alphabet, rng);
        if let Some(dirs) = sigma_gram_schmidt(&raw, sigma, basis) {
            return Ok(dirs);
        }
    }
    Err(Error::DegenerateInput(format!(
        "support of size {} is too small for rank {cols} after {MAX_REDRAWS} redraws",
        support.len()
    )))
}

/// Draws a canonical pair model with entries from [`DEFAULT_ALPHABET`] on the
/// supports, normalized in the Σ-inner products.
pub fn make_canonical_pair<R: Rng + ?Sized>(
    sigma_x: &Matrix,
    sigma_y: &Matrix,
    profile: &SparsityProfile,
    lambda: &[f64],
    rng: &mut R,
) -> Result<CanonicalPairModel> {
    make_canonical_pair_with_alphabet(sigma_x, sigma_y, profile, lambda, &DEFAULT_ALPHABET, rng)
}

pub fn make_canonical_pair_with_alphabet<R: Rng + ?Sized>(
    sigma_x: &Matrix,
    sigma_y: &Matrix,
    profile: &SparsityProfile,
    lambda: &[f64],
    alphabet: &[f64],
    rng: &mut R,
) -> Result<CanonicalPairModel> {
    let (p, m, r) = (sigma_x.nrows(), sigma_y.nrows(), lambda.len());
    profile.validate(p, m)?;
    check_lambda(lambda)?;
    if alphabet.iter().all(|a| *a == 0.0) {
        return Err(Error::DegenerateInput("alphabet has no nonzero value".into()));
    }
    if r > profile.support_u.len().min(profile.support_v.len()) {
        return Err(Error::DegenerateInput(format!(
            "rank {r} exceeds support sizes {} and {}",
            profile.support_u.len(),
            profile.support_v.len()
        )));
    }
    let u = normalized_directions(sigma_x, &profile.support_u, r, None, alphabet, rng)?;
    let v = normalized_directions(sigma_y, &profile.support_v, r, None, alphabet, rng)?;
    let model = CanonicalPairModel {
        sigma_x: sigma_x.clone(),
        sigma_y: sigma_y.clone(),
        u,
        v,
        lambda: DVector::from_column_slice(lambda),
    };
    model.validate()?;
    Ok(model)
}

/// Appends one more canonical pair drawn on the given supports, Σ-orthogonal
/// to the existing pairs.
pub fn add_canonical_pair<R: Rng + ?Sized>(
    model: &CanonicalPairModel,
    support_u: &[usize],
    support_v: &[usize],
    lambda: f64,
    alphabet: &[f64],
    rng: &mut R,
) -> Result<CanonicalPairModel> {
    let extra_u = normalized_directions(&model.sigma_x, support_u, 1, Some(&model.u), alphabet, rng)?;
    let extra_v = normalized_directions(&model.sigma_y, support_v, 1, Some(&model.v), alphabet, rng)?;
    let mut lambdas = model.lambda.as_slice().to_vec();
    lambdas.push(lambda);
    check_lambda(&lambdas)?;
    let append = |a: &Matrix, b: &Matrix| {
        let cols: Vec<_> = a.column_iter().chain(b.column_iter()).map(|c| c.into_owned()).collect();
        Matrix::from_columns(&cols)
    };
    let extended = CanonicalPairModel {
        sigma_x: model.sigma_x.clone(),
        sigma_y: model.sigma_y.clone(),
        u: append(&model.u, &extra_u),
        v: append(&model.v, &extra_v),
        lambda: DVector::from_vec(lambdas),
    };
    extended.validate()?;
    Ok(extended)
}

/// `n` paired observations stored as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Matrix,
    pub y: Matrix,
}

impl SampleSet {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        linalg::ensure_finite(&x, "X")?;
        linalg::ensure_finite(&y, "Y")?;
        Ok(SampleSet { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn select_rows(&self, rows: &[usize]) -> SampleSet {
        SampleSet { x: self.x.select_rows(rows), y: self.y.select_rows(rows) }
    }

    pub fn row_range(&self, start: usize, len: usize) -> SampleSet {
        SampleSet { x: self.x.rows(start, len).into_owned(), y: self.y.rows(start, len).into_owned() }
    }
}

/// Uncentered sample covariances `X'X/n`, `Y'Y/n`, `X'Y/n`.
#[derive(Debug, Clone)]
pub struct SampleCovariances {
    pub sx: Matrix,
    pub sy: Matrix,
    pub sxy: Matrix,
}

pub fn sample_covariances(s: &SampleSet) -> SampleCovariances {
    let n = s.n().max(1) as f64;
    SampleCovariances {
        sx: s.x.tr_mul(&s.x) / n,
        sy: s.y.tr_mul(&s.y) / n,
        sxy: s.x.tr_mul(&s.y) / n,
    }
}

/// Factor `L` with `L L' = a`: Cholesky, falling back to a clamped
/// eigendecomposition for numerically singular input.
pub fn covariance_factor(a: &Matrix) -> Result<Matrix> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.l());
    }
    let (values, vectors) = linalg::sym_eigen(a)?;
    let lmin = values[values.len() - 1];
    if lmin < -1e-8 {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    let mut factor = vectors;
    for (j, l) in values.iter().enumerate() {
        factor.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(factor)
}

/// Standard normal `rows × cols` matrix filled in row-major draw order.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_row_slice(rows, cols, &data)
}

/// Draws `n` i.i.d. observations from `N_{p+m}(0, Σ)`.
pub fn sample<R: Rng + ?Sized>(model: &CanonicalPairModel, n: usize, rng: &mut R) -> Result<SampleSet> {
    sample_joint(&model.joint_covariance(), model.p(), n, rng)
}

/// Draws `n` rows from `N(0, joint)` and splits them after column `p`.
pub fn sample_joint<R: Rng + ?Sized>(joint: &Matrix, p: usize, n: usize, rng: &mut R) -> Result<SampleSet> {
    let factor = covariance_factor(joint)?;
    let d = joint.nrows();
    let z = standard_normal_matrix(n, d, rng);
    let data = z * factor.transpose();
    SampleSet::new(data.columns(0, p).into_owned(), data.columns(p, d - p).into_owned())
}

/// `inf_{W ∈ O(r)} Tr[(ÛW − U)'Σ(ÛW − U)]`, via the orthogonal Procrustes
/// closed form `Tr(Û'ΣÛ) + Tr(U'ΣU) − 2‖Û'ΣU‖_*`.
pub fn prediction_loss(u_hat: &Matrix, u: &Matrix, sigma: &Matrix) -> Result<f64> {
    if u_hat.shape() != u.shape() || sigma.nrows() != u.nrows() || sigma.ncols() != u.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?}, truth {:?}, covariance {:?}",
            u_hat.shape(),
            u.shape(),
            sigma.shape()
        )));
    }
    let su = sigma * u;
    let su_hat = sigma * u_hat;
    let a = u_hat.dot(&su_hat);
    let b = u.dot(&su);
    let cross = u_hat.tr_mul(&su);
    let nuc = linalg::nuclear_norm(&cross)?;
    Ok((a + b - 2.0 * nuc).max(0.0))
}
