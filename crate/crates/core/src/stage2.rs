//! Stage 2: row-sparse group-Lasso refinement of the stage-1 singular
//! vectors, covariance normalization, penalty selection by cross validation,
//! and the end-to-end estimator.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{sample_covariances, SampleCovariances, SampleSet};
use crate::stage1::{self, AdmmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoConfig {
    pub rho_u: f64,
    /// Sweeps stop once the largest row change is below `tol` times the
    /// largest row norm.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl GroupLassoConfig {
    pub fn new(rho_u: f64) -> Self {
        GroupLassoConfig { rho_u, tol: 1e-7, max_sweeps: 1000 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_u >= 0.0) || !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::DegenerateInput(format!("invalid group-Lasso settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub b_grid: Vec<f64>,
    pub rank_r: usize,
    pub group_lasso_tol: f64,
    pub max_sweeps: usize,
}

impl CvConfig {
    pub fn new(rank_r: usize) -> Self {
        CvConfig { folds: 5, b_grid: vec![0.5, 1.0, 1.5, 2.0], rank_r, group_lasso_tol: 1e-7, max_sweeps: 1000 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::DegenerateInput("cross validation needs at least two folds".into()));
        }
        if self.b_grid.is_empty() || self.b_grid.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::DegenerateInput(format!("invalid penalty grid {:?}", self.b_grid)));
        }
        if self.rank_r == 0 {
            return Err(Error::DegenerateInput("rank must be at least 1".into()));
        }
        Ok(())
    }

    fn group_lasso(&self, rho: f64) -> GroupLassoConfig {
        GroupLassoConfig { rho_u: rho, tol: self.group_lasso_tol, max_sweeps: self.max_sweeps }
    }
}

/// `b · √((r + ln p) / n)`.
pub fn penalty_level(b: f64, r: usize, p: usize, n: usize) -> f64 {
    b * ((r as f64 + (p as f64).ln()) / n as f64).sqrt()
}

/// `Tr(L'SL) − 2 Tr(L'T) + ρ Σ_j ‖L_j‖`.
pub fn group_lasso_objective(sx: &Matrix, target: &Matrix, l: &Matrix, rho: f64) -> f64 {
    let quad = l.dot(&(sx * l));
    let lin = l.dot(target);
    let pen: f64 = l.row_iter().map(|r| r.norm()).sum();
    quad - 2.0 * lin + rho * pen
}

/// Block coordinate descent over the rows of `L` for
/// `min_L Tr(L'Σ̂_xL) − 2Tr(L'T) + ρ Σ_j ‖L_j‖`.
pub fn group_lasso_solve(sx: &Matrix, target: &Matrix, cfg: &GroupLassoConfig) -> Result<Matrix> {
    Ok(group_lasso_solve_from(sx, target, cfg, None)?.0)
}

/// As [`group_lasso_solve`] with an optional warm start; also returns the
/// number of sweeps performed.
pub fn group_lasso_solve_from(
    sx: &Matrix,
    target: &Matrix,
    cfg: &GroupLassoConfig,
    start: Option<&Matrix>,
) -> Result<(Matrix, usize)> {
    cfg.validate()?;
    let (p, r) = target.shape();
    if sx.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!("Σ_x {:?} with target {:?}", sx.shape(), target.shape())));
    }
    if let Some(j) = (0..p).find(|&j| !(sx[(j, j)] > 0.0)) {
        return Err(Error::DegenerateInput(format!("diagonal entry {j} of the covariance is not positive")));
    }
    let mut l = match start {
        Some(s) if s.shape() == (p, r) => s.clone(),
        _ => Matrix::zeros(p, r),
    };
    let mut sl = sx * &l;
    let mut row = vec![0.0; r];
    let mut delta = vec![0.0; r];
    for sweep in 1..=cfg.max_sweeps {
        let mut max_change = 0.0_f64;
        let mut max_norm = 0.0_f64;
        for j in 0..p {
            let d = sx[(j, j)];
            for c in 0..r {
                row[c] = target[(j, c)] - (sl[(j, c)] - d * l[(j, c)]);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let shrink = if norm > 0.0 { (1.0 - cfg.rho_u / (2.0 * norm)).max(0.0) / d } else { 0.0 };
            let mut change_sq = 0.0;
            for c in 0..r {
                let new = row[c] * shrink;
                delta[c] = new - l[(j, c)];
                change_sq += delta[c] * delta[c];
                l[(j, c)] = new;
            }
            if change_sq > 0.0 {
                for (c, &dc) in delta.iter().enumerate().take(r) {
                    if dc != 0.0 {
                        sl.column_mut(c).axpy(dc, &sx.column(j), 1.0);
                    }
                }
            }
            max_change = max_change.max(change_sq.sqrt());
            max_norm = max_norm.max(norm * shrink);
        }
        if max_change <= cfg.tol * max_norm.max(f64::MIN_POSITIVE) || max_change == 0.0 {
            return Ok((l, sweep));
        }
    }
    Ok((l, cfg.max_sweeps))
}

/// `U₁ (U₁'Σ̂_x U₁)^{-1/2}`, with the pseudo-inverse root for rank-deficient
/// Gram matrices.
pub fn normalize(u1: &Matrix, sx: &Matrix) -> Result<Matrix> {
    if u1.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateInput("cannot normalize a zero matrix".into()));
    }
    if sx.shape() != (u1.nrows(), u1.nrows()) {
        return Err(Error::DimensionMismatch(format!("Σ_x {:?} with U {:?}", sx.shape(), u1.shape())));
    }
    let gram = linalg::symmetrize(&u1.tr_mul(&(sx * u1)));
    Ok(u1 * linalg::psd_pinv_sqrt(&gram, linalg::DEFAULT_RANK_TOL)?)
}

/// Nonzero rows of `l`.
pub fn row_support(l: &Matrix) -> Vec<usize> {
    (0..l.nrows()).filter(|&i| l.row(i).iter().any(|v| *v != 0.0)).collect()
}

/// Refined directions for both sides given the stage-1 pair.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub u_hat: Matrix,
    pub v_hat: Matrix,
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
}

/// Group-Lasso regressions with targets `Σ̂_xy V̂⁽⁰⁾` and `Σ̂_yx Û⁽⁰⁾` on
/// `fit`, normalized with the marginal covariances of `norm`. A side whose
/// regression is identically zero is returned as a zero matrix.
pub fn refine(
    fit: &SampleCovariances,
    norm: &SampleCovariances,
    u0: &Matrix,
    v0: &Matrix,
    gl_u: &GroupLassoConfig,
    gl_v: &GroupLassoConfig,
) -> Result<Refinement> {
    let target_u = &fit.sxy * v0;
    let target_v = fit.sxy.tr_mul(u0);
    let lu = group_lasso_solve(&fit.sx, &target_u, gl_u)?;
    let lv = group_lasso_solve(&fit.sy, &target_v, gl_v)?;
    let normalize_or_zero = |l: &Matrix, s: &Matrix| -> Result<Matrix> {
        if l.iter().all(|v| *v == 0.0) {
            Ok(l.clone())
        } else {
            normalize(l, s)
        }
    };
    Ok(Refinement {
        u_hat: normalize_or_zero(&lu, &norm.sx)?,
        v_hat: normalize_or_zero(&lv, &norm.sy)?,
        support_u: row_support(&lu),
        support_v: row_support(&lv),
    })
}

/// Sum of the classical (uncentered) canonical correlations between the
/// columns of `a` and `b`.
pub fn canonical_correlation_sum(a: &Matrix, b: &Matrix) -> Result<f64> {
    let saa = linalg::symmetrize(&a.tr_mul(a));
    let sbb = linalg::symmetrize(&b.tr_mul(b));
    if saa.amax() == 0.0 || sbb.amax() == 0.0 {
        return Ok(0.0);
    }
    let wa = linalg::psd_pinv_sqrt(&saa, 1e-10)?;
    let wb = linalg::psd_pinv_sqrt(&sbb, 1e-10)?;
    let core = &wa * a.tr_mul(b) * &wb;
    Ok(linalg::svd(&core)?.singular_values.iter().map(|s| s.min(1.0)).sum())
}

/// Contiguous fold boundaries: the first `n mod folds` folds get one extra
/// row.
pub fn fold_ranges(n: usize, folds: usize) -> Vec<(usize, usize)> {
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push((start, len));
        start += len;
    }
    out
}

/// Outcome of the penalty search.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub chosen_b: f64,
    /// `(b, CV(b))` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks `b` maximizing the summed held-out canonical correlations; ties go
/// to the smaller `b`.
///
/// The penalty for a fold is `b √((r + ln p)/n_train)`. Training covariances
/// are formed as full-sample sums minus the held-out fold.
pub fn cross_validate(s: &SampleSet, u0: &Matrix, v0: &Matrix, cfg: &CvConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let n = s.n();
    let r = cfg.rank_r;
    if n < cfg.folds * (r + 1) {
        return Err(Error::DegenerateInput(format!(
            "{n} samples are too few for {} folds at rank {r}",
            cfg.folds
        )));
    }
    let (p, m) = (s.x.ncols(), s.y.ncols());
    let full_xx = s.x.tr_mul(&s.x);
    let full_yy = s.y.tr_mul(&s.y);
    let full_xy = s.x.tr_mul(&s.y);
    let mut totals = vec![0.0; cfg.b_grid.len()];
    let mut usable = vec![false; cfg.b_grid.len()];
    for (start, len) in fold_ranges(n, cfg.folds) {
        let test = s.row_range(start, len);
        let n_train = n - len;
        let scale = 1.0 / n_train as f64;
        let train = SampleCovariances {
            sx: (&full_xx - test.x.tr_mul(&test.x)) * scale,
            sy: (&full_yy - test.y.tr_mul(&test.y)) * scale,
            sxy: (&full_xy - test.x.tr_mul(&test.y)) * scale,
        };
        for (bi, &b) in cfg.b_grid.iter().enumerate() {
            let gl_u = cfg.group_lasso(penalty_level(b, r, p, n_train));
            let gl_v = cfg.group_lasso(penalty_level(b, r, m, n_train));
            let fitted = match refine(&train, &train, u0, v0, &gl_u, &gl_v) {
                Ok(f) => f,
                Err(Error::DegenerateInput(_)) => continue,
                Err(e) => return Err(e),
            };
            if fitted.support_u.is_empty() || fitted.support_v.is_empty() {
                usable[bi] = true;
                continue;
            }
            let score = canonical_correlation_sum(&(&test.x * &fitted.u_hat), &(&test.y * &fitted.v_hat))?;
            totals[bi] += score;
            usable[bi] = true;
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for (bi, &b) in cfg.b_grid.iter().enumerate() {
        if !usable[bi] {
            continue;
        }
        let score = totals[bi];
        let better = match best {
            None => true,
            Some((bb, bs)) => score > bs || (score == bs && b < bb),
        };
        if better {
            best = Some((b, score));
        }
    }
    let (chosen_b, _) = best.ok_or_else(|| Error::CvFailure("every fold was degenerate".into()))?;
    Ok(CvOutcome { chosen_b, scores: cfg.b_grid.iter().copied().zip(totals).collect() })
}

/// Result of the two-stage estimator.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub u_hat: Matrix,
    pub v_hat: Matrix,
    /// Normalized stage-1 singular vectors.
    pub u_init: Matrix,
    pub v_init: Matrix,
    /// Nonzero rows of the un-normalized refinement solutions.
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
    /// Penalty multiplier chosen by cross validation, if it ran.
    pub chosen_b: Option<f64>,
    /// Whether the stage-1 ADMM met its tolerance.
    pub converged: bool,
    pub admm_iterations: usize,
}

impl EstimatorOutput {
    /// Writes `u_hat.csv`, `v_hat.csv`, `u_init.csv`, `v_init.csv` and a
    /// one-line `metadata.csv` record.
    pub fn write_dir(&self, dir: impl AsRef<Path>, seed: Option<u64>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        linalg::save_matrix(dir.join("u_hat.csv"), &self.u_hat)?;
        linalg::save_matrix(dir.join("v_hat.csv"), &self.v_hat)?;
        linalg::save_matrix(dir.join("u_init.csv"), &self.u_init)?;
        linalg::save_matrix(dir.join("v_init.csv"), &self.v_init)?;
        let mut meta = std::fs::File::create(dir.join("metadata.csv"))?;
        writeln!(meta, "chosen_b,converged,admm_iterations,support_u,support_v,seed")?;
        let join = |s: &[usize]| s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(
            meta,
            "{},{},{},{},{},{}",
            self.chosen_b.map(|b| b.to_string()).unwrap_or_default(),
            self.converged,
            self.admm_iterations,
            join(&self.support_u),
            join(&self.support_v),
            seed.map(|s| s.to_string()).unwrap_or_default()
        )?;
        Ok(())
    }
}

/// Sample covariances of the three batches used with sample splitting:
/// sizes `⌊n/3⌋`, `⌊n/3⌋` and the remainder.
pub fn three_batches(s: &SampleSet) -> Result<[SampleSet; 3]> {
    let n = s.n();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("{n} samples cannot be split into three batches")));
    }
    let b = n / 3;
    Ok([s.row_range(0, b), s.row_range(b, b), s.row_range(2 * b, n - 2 * b)])
}

/// The full two-stage estimator with the penalty chosen by cross validation.
///
/// Without splitting, every step uses the full-sample covariances. With
/// splitting, the first batch feeds stage 1, the second the refinement and
/// its cross validation, and the third the normalization.
pub fn colar_estimate(
    s: &SampleSet,
    admm_cfg: &AdmmConfig,
    cv_cfg: &CvConfig,
    split: bool,
) -> Result<EstimatorOutput> {
    admm_cfg.validate()?;
    cv_cfg.validate()?;
    let r = admm_cfg.rank_r;
    if cv_cfg.rank_r != r {
        return Err(Error::DimensionMismatch(format!("ADMM rank {r} differs from CV rank {}", cv_cfg.rank_r)));
    }
    let (stage1_data, fit_data, norm_data) = if split {
        let [a, b, c] = three_batches(s)?;
        (a, b, c)
    } else {
        (s.clone(), s.clone(), s.clone())
    };
    let cov0 = sample_covariances(&stage1_data);
    let (a_hat, state) = stage1::admm_solve(&cov0.sx, &cov0.sy, &cov0.sxy, admm_cfg)?;
    let (u0, v0) = stage1::extract_pair(&a_hat, r)?;
    let cv = cross_validate(&fit_data, &u0, &v0, cv_cfg)?;
    let cov1 = if split { sample_covariances(&fit_data) } else { cov0.clone() };
    let cov2 = if split { sample_covariances(&norm_data) } else { cov0 };
    let n_fit = fit_data.n();
    let (p, m) = (s.x.ncols(), s.y.ncols());
    let gl_u = cv_cfg.group_lasso(penalty_level(cv.chosen_b, r, p, n_fit));
    let gl_v = cv_cfg.group_lasso(penalty_level(cv.chosen_b, r, m, n_fit));
    let refined = refine(&cov1, &cov2, &u0, &v0, &gl_u, &gl_v)?;
    Ok(EstimatorOutput {
        u_init: normalize(&u0, &cov2.sx)?,
        v_init: normalize(&v0, &cov2.sy)?,
        u_hat: refined.u_hat,
        v_hat: refined.v_hat,
        support_u: refined.support_u,
        support_v: refined.support_v,
        chosen_b: Some(cv.chosen_b),
        converged: state.converged,
        admm_iterations: state.outer_iter,
    })
}

/// Two-stage estimator on given covariances with fixed penalties, no cross
/// validation.
pub fn colar_from_covariances(
    cov: &SampleCovariances,
    admm_cfg: &AdmmConfig,
    gl_u: &GroupLassoConfig,
    gl_v: &GroupLassoConfig,
) -> Result<EstimatorOutput> {
    let r = admm_cfg.rank_r;
    let (a_hat, state) = stage1::admm_solve(&cov.sx, &cov.sy, &cov.sxy, admm_cfg)?;
    let (u0, v0) = stage1::extract_pair(&a_hat, r)?;
    let refined = refine(cov, cov, &u0, &v0, gl_u, gl_v)?;
    Ok(EstimatorOutput {
        u_init: normalize(&u0, &cov.sx)?,
        v_init: normalize(&v0, &cov.sy)?,
        u_hat: refined.u_hat,
        v_hat: refined.v_hat,
        support_u: refined.support_u,
        support_v: refined.support_v,
        chosen_b: None,
        converged: state.converged,
        admm_iterations: state.outer_iter,
    })
}
