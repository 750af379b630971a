//! Reference solvers and random fixtures shared by the integration tests.
#![allow(dead_code)]

use colar::linalg::Matrix;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    gaussian(rows, cols, rng).qr().q()
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn spd_with_spectrum(p: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let q = orthonormal(p, p, rng);
    let d = DVector::from_fn(p, |_, _| rng.random_range(lo..=hi));
    &q * Matrix::from_diagonal(&d) * q.transpose()
}

/// Projection of `w` onto the capped nuclear ball by scanning thresholds on
/// a fixed grid and keeping the feasible candidate closest to `w`. Every
/// candidate shares the singular vectors of `w`, so distances come from the
/// spectrum alone.
pub fn svcst_grid(w: &Matrix, r: usize, step: f64) -> Matrix {
    let dec = w.clone().svd(true, true);
    let (u, vt) = (dec.u.unwrap(), dec.v_t.unwrap());
    let omega = dec.singular_values;
    let capped = |gamma: f64| omega.map(|o| (o - gamma).clamp(0.0, 1.0));
    let mut best: Option<(f64, f64)> = None;
    let steps = (omega.max() / step).ceil() as usize + 1;
    for i in 0..=steps {
        let gamma = i as f64 * step;
        let d = capped(gamma);
        if d.sum() > r as f64 + 1e-12 {
            continue;
        }
        let dist = (&omega - &d).norm_squared();
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, gamma));
        }
    }
    let (_, gamma) = best.expect("the zero matrix is feasible");
    &u * Matrix::from_diagonal(&capped(gamma)) * &vt
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Cyclic coordinate descent for `½ f'Qf + c'f + ρ‖f‖₁`.
pub fn lasso_cd(q: &Matrix, c: &DVector<f64>, rho: f64, sweeps: usize) -> DVector<f64> {
    let n = c.len();
    let mut f = DVector::zeros(n);
    for _ in 0..sweeps {
        let mut change = 0.0_f64;
        for j in 0..n {
            let partial = c[j] + q.row(j).transpose().dot(&f) - q[(j, j)] * f[j];
            let new = soft(-partial, rho) / q[(j, j)];
            change = change.max((new - f[j]).abs());
            f[j] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    f
}

/// Column-major vectorization.
pub fn vec_of(a: &Matrix) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Accelerated proximal gradient for
/// `Tr(L'SL) − 2Tr(L'T) + ρ Σ_j ‖L_j‖` with row-wise group shrinkage.
pub fn group_lasso_reference(sx: &Matrix, target: &Matrix, rho: f64, iters: usize) -> Matrix {
    let lmax = nalgebra::SymmetricEigen::new(sx.clone()).eigenvalues.max();
    let step = 1.0 / (2.0 * lmax);
    let prox = |y: &Matrix| {
        let grad = (sx * y - target) * 2.0;
        let mut z = y - grad * step;
        for mut row in z.row_iter_mut() {
            let norm = row.norm();
            let scale = if norm > 0.0 { (1.0 - step * rho / norm).max(0.0) } else { 0.0 };
            row *= scale;
        }
        z
    };
    let mut x = Matrix::zeros(target.nrows(), target.ncols());
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let x_next = prox(&y);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        x = x_next;
        t = t_next;
    }
    x
}

/// Largest violation of the group-Lasso optimality conditions.
pub fn group_lasso_kkt_residual(sx: &Matrix, target: &Matrix, l: &Matrix, rho: f64) -> f64 {
    let grad = (sx * l - target) * 2.0;
    (0..l.nrows())
        .map(|j| {
            let g = grad.row(j);
            let row = l.row(j);
            let norm = row.norm();
            if norm > 0.0 {
                (g + row * (rho / norm)).norm()
            } else {
                (g.norm() - rho).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
