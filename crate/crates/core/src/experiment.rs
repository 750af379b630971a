//! Simulation runner for the estimator tables and the reduction checks.
//!
//! Each repetition draws its own model and sample from a ChaCha stream keyed
//! by `(seed, rep)`, so results do not depend on thread count or scheduling.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    add_canonical_pair, build_covariance, make_canonical_pair, prediction_loss, sample, sample_covariances,
    CanonicalPairModel, CovarianceKind, SparsityProfile, DEFAULT_ALPHABET,
};
use crate::oracle::classical_cca;
use crate::reduction::density::{phi0, symmetric_mixture_pdf, untruncated_density};
use crate::reduction::{
    pca_to_cca, reduce_to_pca, sample_graph, tv_numeric, EdgeIndicator, GaussianizedMixture, ReductionParams,
};
use crate::stage1::AdmmConfig;
use crate::stage2::{colar_estimate, CvConfig};

/// How the third, unmodelled canonical pair is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspecification {
    /// Same support as the first pairs.
    SharedSupport,
    /// Every coordinate may be nonzero.
    FreeSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: CovarianceKind,
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rank_r: usize,
    /// `ρ = rho_multiplier · √(ln(p + m) / n)`.
    pub rho_multiplier: f64,
    pub eta: f64,
    pub admm_eps: f64,
    pub admm_max_outer: usize,
    pub b_grid: Vec<f64>,
    pub folds: usize,
    pub lambda: Vec<f64>,
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
    pub misspec: Option<Misspecification>,
    pub lambda3: f64,
    /// Use disjoint batches for the two stages and the normalization.
    pub split: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let profile = SparsityProfile::simulation_default();
        let admm = AdmmConfig::new(1.0, 2);
        let cv = CvConfig::new(2);
        ExperimentConfig {
            setting: CovarianceKind::Identity,
            p: 300,
            m: 300,
            n: 500,
            reps: 20,
            seed: 2024,
            rank_r: 2,
            rho_multiplier: 0.55,
            eta: admm.eta,
            admm_eps: admm.eps,
            admm_max_outer: admm.max_outer,
            b_grid: cv.b_grid,
            folds: cv.folds,
            lambda: vec![0.9, 0.8],
            support_u: profile.support_u,
            support_v: profile.support_v,
            misspec: None,
            lambda3: 0.3,
            split: false,
        }
    }
}

impl ExperimentConfig {
    pub fn rho(&self) -> f64 {
        self.rho_multiplier * (((self.p + self.m) as f64).ln() / self.n as f64).sqrt()
    }

    pub fn admm_config(&self) -> AdmmConfig {
        AdmmConfig {
            eta: self.eta,
            eps: self.admm_eps,
            max_outer: self.admm_max_outer,
            ..AdmmConfig::new(self.rho(), self.rank_r)
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig { folds: self.folds, b_grid: self.b_grid.clone(), ..CvConfig::new(self.rank_r) }
    }

    pub fn profile(&self) -> SparsityProfile {
        SparsityProfile::new(self.support_u.clone(), self.support_v.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.m == 0 || self.n == 0 || self.reps == 0 {
            return Err(Error::Precondition("dimensions and reps must be positive".into()));
        }
        if self.lambda.len() != self.rank_r {
            return Err(Error::Precondition(format!(
                "{} canonical correlations for rank {}",
                self.lambda.len(),
                self.rank_r
            )));
        }
        if !(self.rho_multiplier > 0.0) {
            return Err(Error::Precondition("rho multiplier must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lambda3) {
            return Err(Error::Precondition(format!("third correlation {} outside [0, 1)", self.lambda3)));
        }
        self.profile().validate(self.p, self.m)?;
        self.admm_config().validate()?;
        self.cv_config().validate()
    }

    /// Draws the model for one repetition, including the misspecified third
    /// pair when configured.
    pub fn draw_model(&self, rng: &mut ChaCha8Rng) -> Result<CanonicalPairModel> {
        let sx = build_covariance(self.setting, self.p)?;
        let sy = build_covariance(self.setting, self.m)?;
        let model = make_canonical_pair(&sx, &sy, &self.profile(), &self.lambda, rng)?;
        match self.misspec {
            Some(kind) if self.lambda3 > 0.0 => {
                let (su, sv) = match kind {
                    Misspecification::SharedSupport => (self.support_u.clone(), self.support_v.clone()),
                    Misspecification::FreeSupport => ((0..self.p).collect(), (0..self.m).collect()),
                };
                add_canonical_pair(&model, &su, &sv, self.lambda3, &DEFAULT_ALPHABET, rng)
            }
            _ => Ok(model),
        }
    }
}

/// One repetition. Losses are absent when the repetition failed; the error
/// message is then recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub setting: String,
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub rep: usize,
    pub loss_u_init: Option<f64>,
    pub loss_v_init: Option<f64>,
    pub loss_u_colar: Option<f64>,
    pub loss_v_colar: Option<f64>,
    pub chosen_b: Option<f64>,
    pub converged: Option<bool>,
    pub admm_iterations: Option<usize>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub setting: String,
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub failed: usize,
    pub not_converged: usize,
    pub median_loss_u_init: Option<f64>,
    pub median_loss_v_init: Option<f64>,
    pub median_loss_u_colar: Option<f64>,
    pub median_loss_v_colar: Option<f64>,
}

/// Lower median: the `⌈len/2⌉`-th smallest value.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

impl ExperimentSummary {
    /// Medians over the repetitions that did not fail.
    pub fn from_rows(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Self {
        let ok: Vec<&ResultRow> = rows.iter().filter(|r| !r.failed()).collect();
        let median = |get: fn(&ResultRow) -> Option<f64>| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            lower_median(&vals)
        };
        ExperimentSummary {
            setting: cfg.setting.to_string(),
            p: cfg.p,
            m: cfg.m,
            n: cfg.n,
            reps: rows.len(),
            failed: rows.len() - ok.len(),
            not_converged: ok.iter().filter(|r| r.converged == Some(false)).count(),
            median_loss_u_init: median(|r| r.loss_u_init),
            median_loss_v_init: median(|r| r.loss_v_init),
            median_loss_u_colar: median(|r| r.loss_u_colar),
            median_loss_v_colar: median(|r| r.loss_v_colar),
        }
    }
}

pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn run_rep(cfg: &ExperimentConfig, rep: usize) -> ResultRow {
    let mut row = ResultRow {
        setting: cfg.setting.to_string(),
        p: cfg.p,
        m: cfg.m,
        n: cfg.n,
        rep,
        loss_u_init: None,
        loss_v_init: None,
        loss_u_colar: None,
        loss_v_colar: None,
        chosen_b: None,
        converged: None,
        admm_iterations: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mut rng = rep_rng(cfg.seed, rep);
        let model = cfg.draw_model(&mut rng)?;
        let data = sample(&model, cfg.n, &mut rng)?;
        let est = colar_estimate(&data, &cfg.admm_config(), &cfg.cv_config(), cfg.split)?;
        let r = cfg.rank_r;
        let (u, v) = (model.u.columns(0, r).into_owned(), model.v.columns(0, r).into_owned());
        row.loss_u_init = Some(prediction_loss(&est.u_init, &u, &model.sigma_x)?);
        row.loss_v_init = Some(prediction_loss(&est.v_init, &v, &model.sigma_y)?);
        row.loss_u_colar = Some(prediction_loss(&est.u_hat, &u, &model.sigma_x)?);
        row.loss_v_colar = Some(prediction_loss(&est.v_hat, &v, &model.sigma_y)?);
        row.chosen_b = est.chosen_b;
        row.converged = Some(est.converged);
        row.admm_iterations = Some(est.admm_iterations);
        Ok(())
    })();
    if let Err(e) = outcome {
        row = ResultRow { error: Some(e.to_string()), ..row };
    }
    row
}

/// Runs all repetitions in parallel; rows come back in repetition order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, ExperimentSummary)> {
    cfg.validate()?;
    let rows: Vec<ResultRow> = (0..cfg.reps).into_par_iter().map(|rep| run_rep(cfg, rep)).collect();
    let summary = ExperimentSummary::from_rows(cfg, &rows);
    Ok((rows, summary))
}

/// A run with an extra canonical pair the fitted rank does not account for.
pub fn run_misspec(cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, ExperimentSummary)> {
    if cfg.misspec.is_none() {
        return Err(Error::Precondition("no misspecification scenario configured".into()));
    }
    run_experiment(cfg)
}

pub fn write_rows<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionCheckConfig {
    /// Graph sizes for the TV decay fit.
    pub tv_sizes: Vec<usize>,
    /// Clique size used with `tv_sizes`.
    pub tv_clique_size: usize,
    /// Shift as a fraction of its admissible bound.
    pub mu_fraction: f64,
    /// Largest accepted log-log TV slope.
    pub max_tv_slope: f64,
    /// Graph and clique size for the absolute TV cap.
    pub n_vertices: usize,
    pub clique_size: usize,
    /// Planted instance for the spike-variance check.
    pub spike_n_vertices: usize,
    pub spike_clique_size: usize,
    pub spike_rows: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for ReductionCheckConfig {
    fn default() -> Self {
        ReductionCheckConfig {
            tv_sizes: vec![50, 100, 200, 400],
            tv_clique_size: 4,
            mu_fraction: 0.5,
            max_tv_slope: -2.7,
            n_vertices: 100,
            clique_size: 8,
            spike_n_vertices: 1200,
            spike_clique_size: 100,
            spike_rows: 50,
            reps: 200,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub detail: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &str, detail: String, value: f64, bound: String, pass: bool) -> Self {
        CheckRow { check: check.into(), detail, value, bound, pass }
    }
}

/// Panels for TV integrals on the truncation interval.
const TV_PANELS: usize = 400;

/// TV distances of the null mixture to `φ` and the clique mixture to the
/// symmetric Gaussian mixture, for one graph size.
pub fn mixture_tv(params: &ReductionParams, mu_fraction: f64) -> Result<(f64, f64)> {
    let mu = mu_fraction * params.mu_bound();
    let mix = GaussianizedMixture::new(mu, params)?;
    let r = params.trunc_radius();
    let tv0 = tv_numeric(|x| mix.null_pdf(x), phi0, -r, r, TV_PANELS)?;
    let tv1 = tv_numeric(|x| mix.clique_pdf(x), |x| symmetric_mixture_pdf(x, mu), -r, r, TV_PANELS)?;
    Ok((tv0, tv1))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Second moment of `N(0, 1)` truncated to `±radius`.
fn truncated_second_moment(radius: f64) -> Result<f64> {
    let mass = crate::quadrature::adaptive(phi0, -radius, radius, 1e-14)?;
    let second = crate::quadrature::adaptive(|x| x * x * phi0(x), -radius, radius, 1e-14)?;
    Ok(second / mass)
}

/// Pooled second moment of the clique columns of one planted reduction,
/// with the number of entries pooled.
fn spike_rep(cfg: &ReductionCheckConfig, params: &ReductionParams, rep: usize) -> Result<(f64, usize)> {
    let mut rng = rep_rng(cfg.seed, rep);
    let graph = sample_graph(cfg.spike_n_vertices, Some(cfg.spike_clique_size), &mut rng)?;
    let n = cfg.spike_rows;
    let w = reduce_to_pca(&graph, params, n, 2 * n, &mut rng)?;
    let columns: Vec<usize> = graph.clique().unwrap_or(&[]).iter().copied().filter(|&j| j < 2 * n).collect();
    let sum: f64 = columns.iter().map(|&j| w.column(j).norm_squared()).sum();
    Ok((sum, columns.len() * w.nrows()))
}

/// Distribution-level checks of the reduction samplers.
pub fn run_reduction_checks(cfg: &ReductionCheckConfig) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();

    // Mixture identities of the untruncated functions.
    let base = ReductionParams::new(cfg.n_vertices, cfg.clique_size)?;
    let delta = base.delta();
    let mut worst: f64 = 0.0;
    for frac in [0.25, 0.5, 1.0] {
        let mu = frac * base.mu_bound();
        for i in 0..=400 {
            let x = -8.0 + 0.04 * i as f64;
            let g0 = untruncated_density(x, mu, EdgeIndicator::Absent, delta);
            let g1 = untruncated_density(x, mu, EdgeIndicator::Present, delta);
            worst = worst.max((0.5 * (g0 + g1) - phi0(x)).abs());
            worst = worst.max((delta * g1 + (1.0 - delta) * 0.5 * (g0 + g1) - symmetric_mixture_pdf(x, mu)).abs());
        }
    }
    rows.push(CheckRow::new("mixture_identity", format!("N={} k={}", cfg.n_vertices, cfg.clique_size), worst, "<= 1e-12".into(), worst <= 1e-12));

    // Normalization of both densities.
    for &nv in &cfg.tv_sizes {
        let params = ReductionParams::new(nv, cfg.tv_clique_size)?;
        let r = params.trunc_radius();
        let mix = GaussianizedMixture::new(params.mu_bound(), &params)?;
        let mut err: f64 = 0.0;
        for edge in [EdgeIndicator::Absent, EdgeIndicator::Present] {
            let d = mix.density(edge);
            err = err.max((crate::quadrature::adaptive(|x| d.pdf(x), -r, r, 1e-13)? - 1.0).abs());
        }
        rows.push(CheckRow::new("density_mass", format!("N={nv} mu=bound"), err, "<= 1e-8".into(), err <= 1e-8));
    }

    // Zero shift: both densities are the same truncated normal.
    let zero = GaussianizedMixture::new(0.0, &base)?;
    let r = base.trunc_radius();
    let gap = tv_numeric(|x| zero.absent.pdf(x), |x| zero.present.pdf(x), -r, r, TV_PANELS)?;
    rows.push(CheckRow::new("mu_zero", format!("N={}", cfg.n_vertices), gap, "== 0".into(), gap == 0.0));

    // TV decay across graph sizes.
    let sizes: Vec<f64> = cfg.tv_sizes.iter().map(|&n| n as f64).collect();
    let mut tv0 = Vec::new();
    let mut tv1 = Vec::new();
    for &nv in &cfg.tv_sizes {
        let params = ReductionParams::new(nv, cfg.tv_clique_size)?;
        let (a, b) = mixture_tv(&params, cfg.mu_fraction)?;
        rows.push(CheckRow::new("tv_null", format!("N={nv} k={}", cfg.tv_clique_size), a, "reported".into(), a.is_finite()));
        rows.push(CheckRow::new("tv_clique", format!("N={nv} k={}", cfg.tv_clique_size), b, "reported".into(), b.is_finite()));
        tv0.push(a);
        tv1.push(b);
    }
    // The N^-3 rate is an upper bound; faster decay also passes here.
    for (name, tv) in [("tv_slope_null", &tv0), ("tv_slope_clique", &tv1)] {
        let slope = log_log_slope(&sizes, tv);
        rows.push(CheckRow::new(
            name,
            "log-log slope over N".into(),
            slope,
            format!("<= {}", cfg.max_tv_slope),
            slope <= cfg.max_tv_slope,
        ));
    }
    let (cap0, cap1) = mixture_tv(&base, cfg.mu_fraction)?;
    let cap = 10.0 * (cfg.n_vertices as f64).powi(-3);
    rows.push(CheckRow::new("tv_cap_null", format!("N={} k={}", cfg.n_vertices, cfg.clique_size), cap0, format!("<= {cap:e}"), cap0 <= cap));
    rows.push(CheckRow::new("tv_cap_clique", format!("N={} k={}", cfg.n_vertices, cfg.clique_size), cap1, format!("<= {cap:e}"), cap1 <= cap));

    // Spike variance on planted instances.
    let spike = ReductionParams::new(cfg.spike_n_vertices, cfg.spike_clique_size)?;
    let per_rep: Vec<(f64, usize)> =
        (0..cfg.reps).into_par_iter().map(|rep| spike_rep(cfg, &spike, rep)).collect::<Result<_>>()?;
    let per_rep: Vec<(f64, usize)> = per_rep.into_iter().filter(|&(_, c)| c > 0).collect();
    let (sum, count) = per_rep.iter().fold((0.0, 0usize), |(s, c), &(a, b)| (s + a, c + b));
    let pooled = sum / count.max(1) as f64;
    let expected = 1.0 + spike.eta() * truncated_second_moment(spike.trunc_radius())?;
    // Entries in one repetition share shifts, so the error is estimated
    // from the spread of per-repetition means.
    let means: Vec<f64> = per_rep.iter().map(|&(s, c)| s / c as f64).collect();
    let k = means.len() as f64;
    let weights: Vec<f64> = per_rep.iter().map(|&(_, c)| c as f64 / count as f64).collect();
    let var: f64 = means.iter().zip(&weights).map(|(m, w)| w * w * (m - pooled).powi(2)).sum::<f64>() * k / (k - 1.0).max(1.0);
    let se = var.sqrt();
    rows.push(CheckRow::new(
        "spike_variance",
        format!("N={} k={} n={} reps={}", cfg.spike_n_vertices, cfg.spike_clique_size, cfg.spike_rows, means.len()),
        pooled,
        format!("{expected:.6} +/- {:.6}", 3.0 * se),
        (pooled - expected).abs() <= 3.0 * se,
    ));

    // The CCA split preserves the spike direction.
    let p = 6;
    let tau = 1.5;
    let mut theta = DVector::zeros(p);
    theta[0] = 0.6;
    theta[2] = 0.8;
    let sigma_w = &theta * theta.transpose() * tau + Matrix::identity(p, p);
    let sx = (&sigma_w + Matrix::identity(p, p)) * 0.5;
    let sxy = (&sigma_w - Matrix::identity(p, p)) * 0.5;
    let cca = classical_cca(&sx, &sx, &sxy, 1)?;
    let u = cca.u.column(0).into_owned();
    let expected_u = &theta / (tau / 2.0 + 1.0).sqrt();
    let dir_err = (&u - &expected_u).norm().min((&u + &expected_u).norm());
    let lam_err = (cca.correlations[0] - (tau / 2.0) / (tau / 2.0 + 1.0)).abs();
    let err = dir_err.max(lam_err);
    rows.push(CheckRow::new("cca_split_population", format!("p={p} tau={tau}"), err, "<= 1e-10".into(), err <= 1e-10));

    let mut rng = rep_rng(cfg.seed, cfg.reps);
    let n = 20_000;
    let factor = crate::model::covariance_factor(&sigma_w)?;
    let z = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let w = z * factor.transpose();
    let s = pca_to_cca(&w, &mut rng)?;
    let cov = sample_covariances(&s);
    let mc_err = (&cov.sx - &sx).amax();
    let tol = 5.0 * (2.0 * (1.0 + tau) * (1.0 + tau) / n as f64).sqrt();
    rows.push(CheckRow::new("cca_split_sample", format!("p={p} n={n}"), mc_err, format!("<= {tol:.4}"), mc_err <= tol));

    Ok(rows)
}
