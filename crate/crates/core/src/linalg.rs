//! Dense linear-algebra primitives shared by the solvers.
//!
//! All routines are deterministic functions of their input bits. Symmetric
//! square roots go through a symmetric eigendecomposition of `(A + A')/2`
//! rather than a general SVD.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix (column-major storage).
pub type Matrix = DMatrix<f64>;

/// Default relative eigenvalue cut-off for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Thin singular value decomposition `a = left * diag(singular_values) * right'`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub left: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    /// `cols × k` with orthonormal columns.
    pub right: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// Number of singular values above `tol * sigma_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.singular_values.get(0).copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > tol * smax).count()
    }
}

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::DegenerateInput(format!("{what} is empty")));
    }
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite entries")))
    }
}

fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD with singular values sorted nonincreasing.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    ensure_finite(a, "svd input")?;
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(SvdResult { left: Matrix::zeros(rows, 0), singular_values: DVector::zeros(0), right: Matrix::zeros(cols, 0) });
    }
    let dec = to_faer(a).thin_svd().map_err(|e| Error::SolverFailure(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (dec.U(), dec.V());
    let sv = dec.S().column_vector();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).expect("finite singular values").then(i.cmp(&j)));
    let left = Matrix::from_fn(rows, k, |r, c| u[(r, order[c])]);
    let right = Matrix::from_fn(cols, k, |r, c| v[(r, order[c])]);
    let singular_values = DVector::from_fn(k, |i, _| sv[order[i]].max(0.0));
    let frob = a.norm_squared();
    if (singular_values.norm_squared() - frob).abs() > 1e-8 * frob.max(f64::MIN_POSITIVE) {
        return Err(Error::SolverFailure("SVD spectrum does not match the Frobenius norm".into()));
    }
    Ok(SvdResult { left, singular_values, right })
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted nonincreasing.
pub fn sym_eigen(a: &Matrix) -> Result<(DVector<f64>, Matrix)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "symmetric eigen input")?;
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::DegenerateInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let n = a.nrows();
    let dec = to_faer(&symmetrize(a))
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("symmetric eigendecomposition did not converge: {e:?}")))?;
    let (u, ev) = (dec.U(), dec.S().column_vector());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ev[j].partial_cmp(&ev[i]).expect("finite eigenvalues").then(i.cmp(&j)));
    let values = DVector::from_fn(n, |i, _| ev[order[i]]);
    let vectors = Matrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

fn spectral_map(vectors: &Matrix, mapped: &[f64]) -> Matrix {
    let mut scaled = vectors.clone();
    for (j, m) in mapped.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*m);
    }
    scaled * vectors.transpose()
}

/// Checks the PSD precondition and returns `(eigenvalues, eigenvectors, lambda_max)`.
fn psd_eigen(a: &Matrix, tol: f64) -> Result<(DVector<f64>, Matrix, f64)> {
    let (values, vectors) = sym_eigen(a)?;
    let lmax = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -tol * lmax {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    Ok((values, vectors, lmax))
}

/// Principal square root of a symmetric PSD matrix. Negative eigenvalues no
/// smaller than `-tol * lambda_max` are clamped to zero.
pub fn psd_sqrt(a: &Matrix, tol: f64) -> Result<Matrix> {
    let (values, vectors, _) = psd_eigen(a, tol)?;
    let mapped: Vec<f64> = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(symmetrize(&spectral_map(&vectors, &mapped)))
}

/// Principal square root of the pseudo-inverse: eigenvalues above
/// `tol * lambda_max` map to `lambda^{-1/2}`, the rest to zero.
pub fn psd_pinv_sqrt(a: &Matrix, tol: f64) -> Result<Matrix> {
    let (values, vectors, lmax) = psd_eigen(a, tol)?;
    let mapped: Vec<f64> = values
        .iter()
        .map(|&l| if lmax > 0.0 && l > tol * lmax { 1.0 / l.sqrt() } else { 0.0 })
        .collect();
    Ok(symmetrize(&spectral_map(&vectors, &mapped)))
}

/// Inverse square root of a positive definite matrix; fails with `NotPsd`
/// when the smallest eigenvalue is not above `tol * lambda_max`.
pub fn pd_inv_sqrt(a: &Matrix, tol: f64) -> Result<Matrix> {
    let (values, vectors, lmax) = psd_eigen(a, tol)?;
    let lmin = values[values.len() - 1];
    if lmax <= 0.0 || lmin <= tol * lmax {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    let mapped: Vec<f64> = values.iter().map(|&l| 1.0 / l.sqrt()).collect();
    Ok(symmetrize(&spectral_map(&vectors, &mapped)))
}

/// Orthonormal basis of the column space; errors if the columns are not
/// linearly independent.
pub fn column_basis(a: &Matrix) -> Result<Matrix> {
    let dec = svd(a)?;
    let k = a.ncols();
    if a.nrows() < k || dec.rank(DEFAULT_RANK_TOL) < k {
        return Err(Error::DegenerateInput(format!(
            "{}x{} matrix does not have full column rank",
            a.nrows(),
            k
        )));
    }
    Ok(dec.left.columns(0, k).into_owned())
}

/// Orthogonal projector onto the column space of a full-column-rank matrix.
pub fn projector(a: &Matrix) -> Result<Matrix> {
    let q = column_basis(a)?;
    Ok(&q * q.transpose())
}

/// `‖P_a − P_b‖_F²` for the projectors onto the column spaces of `a` and `b`.
pub fn subspace_dist_sq(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "row counts differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = column_basis(a)?;
    let qb = column_basis(b)?;
    let cross = qa.transpose() * &qb;
    let d = (qa.ncols() + qb.ncols()) as f64 - 2.0 * cross.norm_squared();
    Ok(d.max(0.0))
}

pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.sum())
}

pub fn op_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.get(0).copied().unwrap_or(0.0))
}

/// Frobenius inner product `⟨a, b⟩ = Tr(a'b)`.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.dot(b)
}

/// `left * x * right`, exploiting row/column sparsity of `x`.
///
/// When only the rows `I` and columns `J` of `x` are nonzero the product is
/// `left[:, I] * x[I, J] * right[J, :]`.
pub fn sandwich(left: &Matrix, x: &Matrix, right: &Matrix) -> Matrix {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| x.row(i).iter().any(|v| *v != 0.0)).collect();
    let cols: Vec<usize> = (0..x.ncols()).filter(|&j| x.column(j).iter().any(|v| *v != 0.0)).collect();
    if rows.is_empty() || cols.is_empty() {
        return Matrix::zeros(left.nrows(), right.ncols());
    }
    let dense_cost = x.nrows() * x.ncols();
    if 4 * rows.len() * cols.len() > dense_cost {
        return left * x * right;
    }
    let core = Matrix::from_fn(rows.len(), cols.len(), |a, b| x[(rows[a], cols[b])]);
    let l = left.select_columns(&rows);
    let r = right.select_rows(&cols);
    (l * core) * r
}

/// Writes a matrix as CSV: one row per line, no header, 17 significant digits.
pub fn write_matrix_csv<W: Write>(writer: W, a: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..a.nrows() {
        w.write_record(a.row(i).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {c}",
                    rows + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("invalid number {field:?} in row {}", rows + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let m = Matrix::from_row_slice(rows, cols, &data);
    ensure_finite(&m, "CSV matrix")?;
    Ok(m)
}

pub fn save_matrix(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_matrix_csv(std::io::BufWriter::new(file), a)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let file = std::fs::File::open(path)?;
    read_matrix_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn toeplitz(p: usize, rho: f64) -> Matrix {
        Matrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
    }

    #[test]
    fn svd_of_diagonal() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let s = svd(&a).unwrap();
        assert_abs_diff_eq!(s.singular_values[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.singular_values[1], 1.0, epsilon = 1e-14);
        for i in 0..2 {
            assert_abs_diff_eq!(s.left[(i, i)].abs(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(s.right[(i, i)].abs(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn svd_of_zero_matrix() {
        let s = svd(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(s.singular_values.len(), 2);
        assert!(s.singular_values.iter().all(|v| *v == 0.0));
        assert_eq!(s.rank(DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let a = random_matrix(5, 4, 1);
        let s = svd(&a).unwrap();
        assert!((s.reconstruct() - &a).norm() <= 1e-8);
        let eye = Matrix::identity(4, 4);
        assert!((s.left.transpose() * &s.left - &eye).amax() < 1e-10);
        assert!((s.right.transpose() * &s.right - &eye).amax() < 1e-10);
        assert!(s.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_handles_wide_input() {
        let a = random_matrix(3, 7, 2);
        let s = svd(&a).unwrap();
        assert_eq!(s.left.shape(), (3, 3));
        assert_eq!(s.right.shape(), (7, 3));
        assert!((s.reconstruct() - &a).norm() <= 1e-10);
    }

    #[test]
    fn svd_of_rank_one_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0)).normalize();
            let v = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0)).normalize();
            let a = &u * v.transpose() * 1.7;
            let s = svd(&a).unwrap();
            assert_abs_diff_eq!(s.singular_values[0], 1.7, epsilon = 1e-12);
            assert!(s.singular_values[1] <= 1e-12);
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i3 = Matrix::identity(3, 3);
        assert!((psd_sqrt(&i3, DEFAULT_RANK_TOL).unwrap() - &i3).amax() < 1e-14);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let b = psd_sqrt(&d, DEFAULT_RANK_TOL).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(1, 1)], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_of_toeplitz_squares_back() {
        let a = toeplitz(3, 0.3);
        let b = psd_sqrt(&a, DEFAULT_RANK_TOL).unwrap();
        assert!((&b * &b - &a).norm() <= 1e-10);
        assert!((&b - b.transpose()).amax() == 0.0);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(psd_sqrt(&a, DEFAULT_RANK_TOL), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn sqrt_clamps_tiny_negative_eigenvalues() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-14]));
        let b = psd_sqrt(&a, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(b[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_sqrt_examples() {
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let b = psd_pinv_sqrt(&d, DEFAULT_RANK_TOL).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(1, 1)], 0.0, epsilon = 1e-14);
        let i4 = Matrix::identity(4, 4);
        assert!((psd_pinv_sqrt(&i4, DEFAULT_RANK_TOL).unwrap() - &i4).amax() < 1e-14);
    }

    #[test]
    fn pinv_sqrt_of_rank_one_gives_range_projector() {
        let u = DVector::from_vec(vec![2.0_f64.sqrt(), 0.0, -(2.0_f64.sqrt())]);
        assert_abs_diff_eq!(u.norm(), 2.0, epsilon = 1e-14);
        let a = &u * u.transpose();
        let b = psd_pinv_sqrt(&a, DEFAULT_RANK_TOL).unwrap();
        let proj = &u * u.transpose() / u.norm_squared();
        assert!((&b * &a * &b - &proj).amax() < 1e-12);
        // b itself is uu'/‖u‖³ for a rank-one PSD matrix.
        assert!((&b - &proj / u.norm()).amax() < 1e-12);
    }

    #[test]
    fn subspace_distance_examples() {
        let u = random_matrix(6, 2, 3);
        assert_abs_diff_eq!(subspace_dist_sq(&u, &u).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(subspace_dist_sq(&u, &(&u * 2.0)).unwrap(), 0.0, epsilon = 1e-12);
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_abs_diff_eq!(subspace_dist_sq(&e1, &e2).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn subspace_distance_rejects_rank_deficient() {
        let a = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let b = random_matrix(3, 2, 4);
        assert!(matches!(subspace_dist_sq(&a, &b), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn sandwich_matches_dense_product() {
        let left = random_matrix(7, 7, 5);
        let right = random_matrix(6, 6, 6);
        let mut x = Matrix::zeros(7, 6);
        x[(1, 2)] = 0.7;
        x[(4, 2)] = -1.3;
        x[(4, 5)] = 0.2;
        let fast = sandwich(&left, &x, &right);
        let slow = &left * &x * &right;
        assert!((fast - slow).amax() < 1e-13);
        assert_eq!(sandwich(&left, &Matrix::zeros(7, 6), &right), Matrix::zeros(7, 6));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let a = random_matrix(4, 3, 7) * 1e-3;
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
        let b = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "1,2\n3\n";
        assert!(matches!(read_matrix_csv(text.as_bytes()), Err(Error::Parse(_))));
    }
}
