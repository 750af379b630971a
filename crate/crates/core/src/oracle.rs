//! Classical CCA and the exhaustive-search two-stage estimator.
//!
//! The exhaustive estimator enumerates every pair of row supports, so it is
//! only usable at very small dimensions. It serves as a reference for the
//! convex estimator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{sample_covariances, SampleCovariances, SampleSet};
use crate::stage2::{normalize, row_support, three_batches, EstimatorOutput};

/// Default cap on the number of support pairs examined.
pub const DEFAULT_MAX_ENUMERATIONS: u128 = 1_000_000;

/// Relative tolerance below which a restricted covariance counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub s_u: usize,
    pub s_v: usize,
    pub max_enumerations: u128,
}

impl OracleBudget {
    pub fn new(s_u: usize, s_v: usize) -> Self {
        OracleBudget { s_u, s_v, max_enumerations: DEFAULT_MAX_ENUMERATIONS }
    }

    /// Fails unless `C(p, s_u) · C(m, s_v)` fits the budget.
    pub fn check(&self, p: usize, m: usize) -> Result<u128> {
        if self.s_u == 0 || self.s_v == 0 || self.s_u > p || self.s_v > m {
            return Err(Error::DegenerateInput(format!(
                "sparsity ({}, {}) invalid for dimensions ({p}, {m})",
                self.s_u, self.s_v
            )));
        }
        let required = binomial(p, self.s_u).saturating_mul(binomial(m, self.s_v));
        if required > self.max_enumerations {
            return Err(Error::BudgetExceeded { required, budget: self.max_enumerations });
        }
        Ok(required)
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Canonical directions and correlations of a covariance triple.
#[derive(Debug, Clone)]
pub struct CcaResult {
    pub u: Matrix,
    pub v: Matrix,
    pub correlations: Vec<f64>,
}

/// Top-`r` canonical pairs: `U = Σ_x^{-1/2} A_r`, `V = Σ_y^{-1/2} B_r` where
/// `A_r, B_r` are the leading singular vectors of `Σ_x^{-1/2} Σ_xy Σ_y^{-1/2}`.
pub fn classical_cca(sx: &Matrix, sy: &Matrix, sxy: &Matrix, r: usize) -> Result<CcaResult> {
    let (p, m) = sxy.shape();
    if sx.shape() != (p, p) || sy.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "Σ_x {:?}, Σ_y {:?}, Σ_xy {:?}",
            sx.shape(),
            sy.shape(),
            sxy.shape()
        )));
    }
    if r == 0 || r > p.min(m) {
        return Err(Error::DimensionMismatch(format!("rank {r} for dimensions ({p}, {m})")));
    }
    let wx = linalg::pd_inv_sqrt(sx, SINGULAR_TOL)?;
    let wy = linalg::pd_inv_sqrt(sy, SINGULAR_TOL)?;
    let dec = linalg::svd(&(&wx * sxy * &wy))?;
    Ok(CcaResult {
        u: &wx * dec.left.columns(0, r),
        v: &wy * dec.right.columns(0, r),
        correlations: dec.singular_values.iter().take(r).copied().collect(),
    })
}

fn restrict(a: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

fn embed(block: &Matrix, rows: &[usize], total: usize) -> Matrix {
    let mut out = Matrix::zeros(total, block.ncols());
    for (i, &row) in rows.iter().enumerate() {
        out.row_mut(row).copy_from(&block.row(i));
    }
    out
}

/// Better-of for `(objective, enumeration index)`: larger objective wins,
/// ties go to the earlier index.
fn pick_max(a: Option<(f64, usize)>, b: Option<(f64, usize)>) -> Option<(f64, usize)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

/// Maximizes `Tr(L'Σ̂_xy R)` subject to `L'Σ̂_xL = R'Σ̂_yR = I_r` over row
/// supports of sizes `s_u` and `s_v`. Supports whose restricted covariance is
/// singular are skipped. Returns `(L, R)` embedded in `p` and `m` rows.
pub fn exhaustive_stage1(
    sx: &Matrix,
    sy: &Matrix,
    sxy: &Matrix,
    budget: &OracleBudget,
    r: usize,
) -> Result<(Matrix, Matrix)> {
    let (p, m) = sxy.shape();
    budget.check(p, m)?;
    if r > budget.s_u.min(budget.s_v) {
        return Err(Error::DegenerateInput(format!("rank {r} exceeds the sparsity levels")));
    }
    let supports_u = combinations(p, budget.s_u);
    let supports_v = combinations(m, budget.s_v);
    let whiten = |s: &Matrix, support: &[usize]| linalg::pd_inv_sqrt(&restrict(s, support, support), SINGULAR_TOL).ok();
    let wx: Vec<Option<Matrix>> = supports_u.par_iter().map(|s| whiten(sx, s)).collect();
    let wy: Vec<Option<Matrix>> = supports_v.iter().map(|t| whiten(sy, t)).collect();
    let n_v = supports_v.len();
    let best = supports_u
        .par_iter()
        .enumerate()
        .map(|(a, su)| {
            let Some(wa) = &wx[a] else { return None };
            let mut best: Option<(f64, usize)> = None;
            for (b, sv) in supports_v.iter().enumerate() {
                let Some(wb) = &wy[b] else { continue };
                let core = wa * restrict(sxy, su, sv) * wb;
                let Ok(dec) = linalg::svd(&core) else { continue };
                let obj: f64 = dec.singular_values.iter().take(r).sum();
                best = pick_max(best, Some((obj, a * n_v + b)));
            }
            best
        })
        .reduce(|| None, pick_max);
    let (_, index) = best.ok_or_else(|| Error::DegenerateInput("every support had a singular covariance".into()))?;
    let (a, b) = (index / n_v, index % n_v);
    let (su, sv) = (&supports_u[a], &supports_v[b]);
    let cca = classical_cca(&restrict(sx, su, su), &restrict(sy, sv, sv), &restrict(sxy, su, sv), r)?;
    Ok((embed(&cca.u, su, p), embed(&cca.v, sv, m)))
}

/// Best-support least squares: minimizes `Tr(L'Σ̂_xL) − 2Tr(L'T)` with
/// `T = Σ̂_xy V⁽⁰⁾` over row supports of size `s_u`.
pub fn exhaustive_stage2(
    sx: &Matrix,
    sxy: &Matrix,
    v0: &Matrix,
    s_u: usize,
    max_enumerations: u128,
) -> Result<Matrix> {
    let p = sx.nrows();
    if s_u == 0 || s_u > p {
        return Err(Error::DegenerateInput(format!("sparsity {s_u} invalid for dimension {p}")));
    }
    let required = binomial(p, s_u);
    if required > max_enumerations {
        return Err(Error::BudgetExceeded { required, budget: max_enumerations });
    }
    let target = sxy * v0;
    let supports = combinations(p, s_u);
    let solve = |support: &[usize]| -> Option<(f64, Matrix)> {
        let block = restrict(sx, support, support);
        let scale = block.amax().max(f64::MIN_POSITIVE);
        let chol = block.cholesky()?;
        let diag_min = chol.l().diagonal().iter().copied().fold(f64::INFINITY, f64::min);
        if diag_min * diag_min <= SINGULAR_TOL * scale {
            return None;
        }
        let t = target.select_rows(support);
        let l = chol.solve(&t);
        Some((-t.dot(&l), l))
    };
    let best = supports
        .par_iter()
        .enumerate()
        .map(|(i, s)| solve(s).map(|(obj, _)| (-obj, i)))
        .reduce(|| None, pick_max);
    let (_, index) = best.ok_or_else(|| Error::DegenerateInput("every support had a singular covariance".into()))?;
    let (_, l) = solve(&supports[index]).expect("support was solvable");
    Ok(embed(&l, &supports[index], p))
}

/// The exhaustive two-stage estimator given the covariances of the three
/// batches (stage 1, refinement, normalization).
pub fn oracle_with_covariances(
    batches: [&SampleCovariances; 3],
    budget: &OracleBudget,
    r: usize,
) -> Result<EstimatorOutput> {
    let [c0, c1, c2] = batches;
    let (u0, v0) = exhaustive_stage1(&c0.sx, &c0.sy, &c0.sxy, budget, r)?;
    let u1 = exhaustive_stage2(&c1.sx, &c1.sxy, &v0, budget.s_u, budget.max_enumerations)?;
    let syx = c1.sxy.transpose();
    let v1 = exhaustive_stage2(&c1.sy, &syx, &u0, budget.s_v, budget.max_enumerations)?;
    let norm_or_zero = |l: &Matrix, s: &Matrix| {
        if l.iter().all(|v| *v == 0.0) {
            Ok(l.clone())
        } else {
            normalize(l, s)
        }
    };
    Ok(EstimatorOutput {
        u_hat: norm_or_zero(&u1, &c2.sx)?,
        v_hat: norm_or_zero(&v1, &c2.sy)?,
        u_init: normalize(&u0, &c2.sx)?,
        v_init: normalize(&v0, &c2.sy)?,
        support_u: row_support(&u1),
        support_v: row_support(&v1),
        chosen_b: None,
        converged: true,
        admm_iterations: 0,
    })
}

/// The exhaustive two-stage estimator with the three-batch sample split.
pub fn oracle_estimate(s: &SampleSet, budget: &OracleBudget, r: usize) -> Result<EstimatorOutput> {
    let [b0, b1, b2] = three_batches(s)?;
    let (c0, c1, c2) = (sample_covariances(&b0), sample_covariances(&b1), sample_covariances(&b2));
    oracle_with_covariances([&c0, &c1, &c2], budget, r)
}
