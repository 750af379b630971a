//! Stage 1: the ℓ1-penalized convex relaxation
//!
//! ```text
//! minimize   −⟨Σ̂_xy, F⟩ + ρ‖F‖_1
//! subject to Σ̂_x^{1/2} F Σ̂_y^{1/2} = G,  ‖G‖_* ≤ r,  ‖G‖_op ≤ 1
//! ```
//!
//! solved by ADMM. The F-subproblem is handled by accelerated proximal
//! gradient directly on the augmented Lagrangian, so singular sample
//! covariances (n < p) need no special treatment.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Relative eigenvalue tolerance used when taking square roots of sample
/// covariances.
const SQRT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    /// ℓ1 penalty level.
    pub rho: f64,
    /// Augmented Lagrangian parameter.
    pub eta: f64,
    pub rank_r: usize,
    /// Outer stopping tolerance on `max{‖ΔF‖_F, ρ‖ΔG‖_F}`.
    pub eps: f64,
    pub max_outer: usize,
    /// Relative objective change at which the F-subproblem stops.
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl AdmmConfig {
    pub fn new(rho: f64, rank_r: usize) -> Self {
        AdmmConfig { rho, eta: 2.0, rank_r, eps: 1e-3, max_outer: 500, inner_tol: 1e-6, max_inner: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::DegenerateInput(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.rho, "rho")?;
        positive(self.eta, "eta")?;
        positive(self.eps, "eps")?;
        positive(self.inner_tol, "inner_tol")?;
        if self.rank_r == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::DegenerateInput("rank and iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub change_metric: f64,
    pub primal_residual: f64,
}

/// Iterates of the ADMM solver.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub outer_iter: usize,
    /// `‖Σ̂_x^{1/2} F Σ̂_y^{1/2} − G‖_F` after the last step.
    pub primal_residual: f64,
    /// `max{‖F^{k+1} − F^k‖_F, ρ‖G^{k+1} − G^k‖_F}` after the last step.
    pub change_metric: f64,
    pub converged: bool,
    pub inner_iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl AdmmState {
    /// Starting point `F⁰ = SVCST(Σ̂_xy, r)`, `G⁰ = H⁰ = 0`.
    pub fn initial(sxy: &Matrix, rank_r: usize) -> Result<Self> {
        let (p, m) = sxy.shape();
        Ok(AdmmState {
            f: svcst(sxy, rank_r)?,
            g: Matrix::zeros(p, m),
            h: Matrix::zeros(p, m),
            outer_iter: 0,
            primal_residual: f64::INFINITY,
            change_metric: f64::INFINITY,
            converged: false,
            inner_iterations: 0,
            history: Vec::new(),
        })
    }

    /// Writes the per-iteration diagnostics as CSV with a header line.
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,change_metric,primal_residual")?;
        for rec in &self.history {
            writeln!(w, "{},{:.10e},{:.10e}", rec.iter, rec.change_metric, rec.primal_residual)?;
        }
        Ok(())
    }
}

/// Smallest `γ ≥ 0` with `Σ_i min(1, (ω_i − γ)_+) ≤ r`.
///
/// The left-hand side is piecewise linear and nonincreasing in `γ` with
/// breakpoints at `ω_i` and `ω_i − 1`, so the root is found exactly by
/// interpolating between the bracketing breakpoints.
pub fn capped_threshold_level(omega: &[f64], r: usize) -> f64 {
    let capped_sum = |gamma: f64| omega.iter().map(|&w| (w - gamma).clamp(0.0, 1.0)).sum::<f64>();
    let target = r as f64;
    if capped_sum(0.0) <= target {
        return 0.0;
    }
    let mut breaks: Vec<f64> = omega.iter().flat_map(|&w| [w, w - 1.0]).filter(|&b| b > 0.0).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (mut lo, mut s_lo) = (0.0, capped_sum(0.0));
    for b in breaks {
        let s_b = capped_sum(b);
        if s_b <= target {
            return lo + (s_lo - target) * (b - lo) / (s_lo - s_b);
        }
        lo = b;
        s_lo = s_b;
    }
    // At the largest breakpoint every term is zero, so the loop returns.
    lo
}

/// Singular value capped soft thresholding: the Frobenius projection of `w`
/// onto `{‖G‖_* ≤ r, ‖G‖_op ≤ 1}`.
pub fn svcst(w: &Matrix, r: usize) -> Result<Matrix> {
    let dec = linalg::svd(w)?;
    let omega = dec.singular_values.as_slice();
    let gamma = capped_threshold_level(omega, r);
    let mut left = dec.left.clone();
    let mut any = false;
    for (j, &om) in omega.iter().enumerate() {
        let g = (om - gamma).clamp(0.0, 1.0);
        any |= g > 0.0;
        left.column_mut(j).scale_mut(g);
    }
    if !any {
        return Ok(Matrix::zeros(w.nrows(), w.ncols()));
    }
    Ok(left * dec.right.transpose())
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Square roots of the sample covariances and the quadratic-form factors
/// shared by every F-subproblem.
#[derive(Debug, Clone)]
pub struct CovarianceRoots {
    pub sx_half: Matrix,
    pub sy_half: Matrix,
    sx_quad: Matrix,
    sy_quad: Matrix,
    curvature: f64,
}

impl CovarianceRoots {
    pub fn new(sx: &Matrix, sy: &Matrix) -> Result<Self> {
        let sx_half = linalg::psd_sqrt(sx, SQRT_TOL)?;
        let sy_half = linalg::psd_sqrt(sy, SQRT_TOL)?;
        Ok(Self::from_halves(sx_half, sy_half))
    }

    pub fn from_halves(sx_half: Matrix, sy_half: Matrix) -> Self {
        // The quadratic uses the squares of the roots so that the smooth part
        // is exactly ½η‖Σ̂_x^{1/2} F Σ̂_y^{1/2}‖² even after eigenvalue clamping.
        let sx_quad = &sx_half * &sx_half;
        let sy_quad = &sy_half * &sy_half;
        let lx = max_eigen(&sx_quad);
        let ly = max_eigen(&sy_quad);
        CovarianceRoots { sx_half, sy_half, sx_quad, sy_quad, curvature: lx * ly }
    }

    fn quad(&self, f: &Matrix) -> Matrix {
        linalg::sandwich(&self.sx_quad, f, &self.sy_quad)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix, falling back to the
/// Gershgorin bound if the eigensolver fails.
fn max_eigen(a: &Matrix) -> f64 {
    let gersh = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    match linalg::sym_eigen(a) {
        Ok((values, _)) => values[0].max(0.0),
        Err(_) => gersh,
    }
}

/// One F-subproblem solve; returns the minimizer and the number of proximal
/// gradient iterations used.
fn f_update_inner(
    roots: &CovarianceRoots,
    f_start: &Matrix,
    g: &Matrix,
    h: &Matrix,
    sxy: &Matrix,
    cfg: &AdmmConfig,
) -> Result<(Matrix, usize)> {
    let eta = cfg.eta;
    let rho = cfg.rho;
    let lipschitz = eta * roots.curvature;
    if lipschitz <= 0.0 {
        // Zero covariance: the subproblem is linear in F.
        if sxy.amax() <= rho {
            return Ok((Matrix::zeros(sxy.nrows(), sxy.ncols()), 0));
        }
        return Err(Error::Divergence("unbounded F-subproblem with zero covariance".into()));
    }
    let step = 1.0 / lipschitz;
    let shifted = h - g * eta;
    let c = linalg::sandwich(&roots.sx_half, &shifted, &roots.sy_half) - sxy;
    let objective =
        |x: &Matrix, qx: &Matrix| 0.5 * eta * x.dot(qx) + x.dot(&c) + rho * x.iter().map(|v| v.abs()).sum::<f64>();
    let prox_step = |y: &Matrix, qy: &Matrix| -> Matrix {
        let mut out = y.clone();
        for ((o, q), cc) in out.iter_mut().zip(qy.iter()).zip(c.iter()) {
            let grad = eta * q + cc;
            *o = soft_threshold(*o - step * grad, step * rho);
        }
        out
    };

    let mut x = f_start.clone();
    let mut qx = roots.quad(&x);
    let mut obj = objective(&x, &qx);
    if !obj.is_finite() {
        return Err(Error::Divergence("non-finite F-subproblem objective".into()));
    }
    let mut x_prev = x.clone();
    let mut qx_prev = qx.clone();
    let mut t = 1.0_f64;
    for it in 1..=cfg.max_inner {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let mut candidate = if beta > 0.0 {
            let y = &x + (&x - &x_prev) * beta;
            let qy = &qx + (&qx - &qx_prev) * beta;
            prox_step(&y, &qy)
        } else {
            prox_step(&x, &qx)
        };
        let mut q_candidate = roots.quad(&candidate);
        let mut obj_candidate = objective(&candidate, &q_candidate);
        t = t_next;
        if obj_candidate > obj && beta > 0.0 {
            // Momentum overshot: restart with a plain proximal step, which
            // cannot increase the objective.
            candidate = prox_step(&x, &qx);
            q_candidate = roots.quad(&candidate);
            obj_candidate = objective(&candidate, &q_candidate);
            t = 1.0;
        }
        if !obj_candidate.is_finite() {
            return Err(Error::Divergence(format!("non-finite F-subproblem objective at iteration {it}")));
        }
        let change = (obj - obj_candidate).abs();
        x_prev = std::mem::replace(&mut x, candidate);
        qx_prev = std::mem::replace(&mut qx, q_candidate);
        obj = obj_candidate;
        if change <= cfg.inner_tol * obj.abs().max(1e-8) {
            return Ok((x, it));
        }
    }
    Ok((x, cfg.max_inner))
}

/// Approximate minimizer over `F` of the augmented Lagrangian
/// `−⟨Σ̂_xy,F⟩ + ρ‖F‖_1 + ⟨H, K⟩ + (η/2)‖K − G‖_F²` with
/// `K = Σ̂_x^{1/2} F Σ̂_y^{1/2}`, warm-started at `state.f`.
pub fn f_update(
    state: &AdmmState,
    sx_half: &Matrix,
    sy_half: &Matrix,
    sxy: &Matrix,
    cfg: &AdmmConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let roots = CovarianceRoots::from_halves(sx_half.clone(), sy_half.clone());
    Ok(f_update_inner(&roots, &state.f, &state.g, &state.h, sxy, cfg)?.0)
}

fn check_shapes(sx: &Matrix, sy: &Matrix, sxy: &Matrix) -> Result<()> {
    let (p, m) = sxy.shape();
    if sx.shape() != (p, p) || sy.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "Σ_x {:?}, Σ_y {:?} do not match Σ_xy {:?}",
            sx.shape(),
            sy.shape(),
            sxy.shape()
        )));
    }
    linalg::ensure_finite(sxy, "cross covariance")
}

/// Runs ADMM from the standard starting point. Returns `Â` together with the
/// final state; when the iteration cap is hit, `Â` is the iterate with the
/// smallest change metric and `state.converged` is false.
pub fn admm_solve(sx: &Matrix, sy: &Matrix, sxy: &Matrix, cfg: &AdmmConfig) -> Result<(Matrix, AdmmState)> {
    cfg.validate()?;
    check_shapes(sx, sy, sxy)?;
    let roots = CovarianceRoots::new(sx, sy)?;
    admm_solve_with_roots(&roots, sxy, cfg)
}

pub fn admm_solve_with_roots(roots: &CovarianceRoots, sxy: &Matrix, cfg: &AdmmConfig) -> Result<(Matrix, AdmmState)> {
    cfg.validate()?;
    let mut state = AdmmState::initial(sxy, cfg.rank_r)?;
    let mut best: Option<(f64, Matrix)> = None;
    for k in 1..=cfg.max_outer {
        let (f_new, inner) = f_update_inner(roots, &state.f, &state.g, &state.h, sxy, cfg)?;
        state.inner_iterations += inner;
        let k_mat = linalg::sandwich(&roots.sx_half, &f_new, &roots.sy_half);
        let g_new = svcst(&(&state.h / cfg.eta + &k_mat), cfg.rank_r)?;
        let residual = &k_mat - &g_new;
        state.h += &residual * cfg.eta;
        let df = (&f_new - &state.f).norm();
        let dg = (&g_new - &state.g).norm();
        state.change_metric = df.max(cfg.rho * dg);
        state.primal_residual = residual.norm();
        state.f = f_new;
        state.g = g_new;
        state.outer_iter = k;
        state.history.push(IterationRecord {
            iter: k,
            change_metric: state.change_metric,
            primal_residual: state.primal_residual,
        });
        if !state.change_metric.is_finite() {
            return Err(Error::Divergence(format!("non-finite ADMM iterate at step {k}")));
        }
        if state.change_metric <= cfg.eps {
            state.converged = true;
            return Ok((state.f.clone(), state));
        }
        if best.as_ref().is_none_or(|(c, _)| state.change_metric < *c) {
            best = Some((state.change_metric, state.f.clone()));
        }
    }
    let a_hat = best.map(|(_, f)| f).unwrap_or_else(|| state.f.clone());
    Ok((a_hat, state))
}

/// Leading `r` left and right singular vectors of `Â`.
pub fn extract_pair(a_hat: &Matrix, r: usize) -> Result<(Matrix, Matrix)> {
    let (p, m) = a_hat.shape();
    if r == 0 || r > p.min(m) {
        return Err(Error::DimensionMismatch(format!("rank {r} for a {p}x{m} matrix")));
    }
    let dec = linalg::svd(a_hat)?;
    let s = &dec.singular_values;
    if s[0] <= 0.0 || s[r - 1] <= linalg::DEFAULT_RANK_TOL * s[0] {
        return Err(Error::DegenerateRank { index: r });
    }
    Ok((dec.left.columns(0, r).into_owned(), dec.right.columns(0, r).into_owned()))
}
