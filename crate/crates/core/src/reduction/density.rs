//! Gaussianization densities.
//!
//! For a clique size `k` in a graph of `N` vertices let `δ = k/N`. Given a
//! shift `μ`, the two densities
//!
//! ```text
//! f_0(x) ∝ φ(x) − δ⁻¹(φ̄_μ(x) − φ(x)),   f_1(x) ∝ φ(x) + δ⁻¹(φ̄_μ(x) − φ(x))
//! ```
//!
//! truncated to `|x| ≤ 3√(ln N)` are mixed so that an absent/present edge
//! indicator with probability 1/2 yields approximately `N(0, 1)`, while a
//! clique row yields approximately the symmetric mixture `φ̄_μ` of
//! `N(±μ, 1)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature;

const MAX_PROPOSALS: usize = 100_000;
const TAIL_LENGTH: f64 = 40.0;
const FALLBACK_CELLS: usize = 4096;

pub fn phi0(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `(φ̄_μ(x) − φ(x)) / φ(x)`, evaluated without cancellation.
fn relative_deviation(x: f64, mu: f64) -> f64 {
    let half_sq = 0.5 * mu * mu;
    0.5 * ((mu * x - half_sq).exp_m1() + (-mu * x - half_sq).exp_m1())
}

/// Density of `½N(μ, 1) + ½N(−μ, 1)`.
pub fn symmetric_mixture_pdf(x: f64, mu: f64) -> f64 {
    phi0(x) * (1.0 + relative_deviation(x, mu))
}

/// Graph size and clique size driving the reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionParams {
    pub n_vertices: usize,
    pub clique_size: usize,
}

impl ReductionParams {
    pub fn new(n_vertices: usize, clique_size: usize) -> Result<Self> {
        if n_vertices < 2 || clique_size == 0 || clique_size > n_vertices {
            return Err(Error::Precondition(format!(
                "clique size {clique_size} with {n_vertices} vertices"
            )));
        }
        Ok(ReductionParams { n_vertices, clique_size })
    }

    fn ln_n(&self) -> f64 {
        (self.n_vertices as f64).ln()
    }

    /// `k / N`.
    pub fn delta(&self) -> f64 {
        self.clique_size as f64 / self.n_vertices as f64
    }

    /// `k / (45 N (ln N)²)`.
    pub fn eta(&self) -> f64 {
        let ln = self.ln_n();
        self.clique_size as f64 / (45.0 * self.n_vertices as f64 * ln * ln)
    }

    /// `3 √(ln N)`.
    pub fn trunc_radius(&self) -> f64 {
        3.0 * self.ln_n().sqrt()
    }

    /// Largest admissible `|μ|`, `3 √(η ln N)`.
    pub fn mu_bound(&self) -> f64 {
        3.0 * (self.eta() * self.ln_n()).sqrt()
    }
}

/// Which of the two densities: the one used for absent edges or for
/// present edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeIndicator {
    Absent,
    Present,
}

impl EdgeIndicator {
    fn sign(self) -> f64 {
        match self {
            EdgeIndicator::Absent => -1.0,
            EdgeIndicator::Present => 1.0,
        }
    }

    pub fn from_edge(present: bool) -> Self {
        if present {
            EdgeIndicator::Present
        } else {
            EdgeIndicator::Absent
        }
    }
}

/// `φ(x) ∓ δ⁻¹(φ̄_μ(x) − φ(x))` on the whole real line.
pub fn untruncated_density(x: f64, mu: f64, edge: EdgeIndicator, delta: f64) -> f64 {
    phi0(x) * (1.0 + edge.sign() * relative_deviation(x, mu) / delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianizationDensity {
    pub mu: f64,
    pub edge: EdgeIndicator,
    pub delta: f64,
    pub trunc_radius: f64,
    /// Normalizing constant of the truncated density.
    pub norm_const: f64,
}

impl GaussianizationDensity {
    /// Requires `k ≤ N/12` and `|μ| ≤ 3√(η ln N)`, under which the density is
    /// positive on the truncation interval.
    pub fn new(mu: f64, edge: EdgeIndicator, params: &ReductionParams) -> Result<Self> {
        if 12 * params.clique_size > params.n_vertices {
            return Err(Error::Precondition(format!(
                "clique size {} exceeds a twelfth of {} vertices",
                params.clique_size, params.n_vertices
            )));
        }
        let bound = params.mu_bound();
        if !(mu.abs() <= bound * (1.0 + 1e-12)) {
            return Err(Error::Precondition(format!("|mu| = {} exceeds the bound {bound}", mu.abs())));
        }
        let delta = params.delta();
        let radius = params.trunc_radius();
        // The untruncated function integrates to one, so the mass inside the
        // interval is one minus the two (equal) tails.
        let tail = quadrature::adaptive(
            |x| untruncated_density(x, mu, edge, delta),
            radius,
            radius + TAIL_LENGTH,
            1e-20,
        )?;
        let norm_const = 1.0 / (1.0 - 2.0 * tail);
        Ok(GaussianizationDensity { mu, edge, delta, trunc_radius: radius, norm_const })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x.abs() > self.trunc_radius {
            0.0
        } else {
            self.norm_const * untruncated_density(x, self.mu, self.edge, self.delta)
        }
    }

    /// Probability of accepting a standard normal proposal at `x` under the
    /// envelope `2 M φ`.
    fn acceptance(&self, x: f64) -> f64 {
        0.5 * (1.0 + self.edge.sign() * relative_deviation(x, self.mu) / self.delta)
    }

    /// Exact draw by rejection from the standard normal restricted to the
    /// truncation interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        for _ in 0..MAX_PROPOSALS {
            let x = truncated_normal(self.trunc_radius, rng)?;
            if rng.random::<f64>() < self.acceptance(x) {
                return Ok(x);
            }
        }
        Err(Error::SamplerFailure(format!("no acceptance in {MAX_PROPOSALS} proposals (mu = {})", self.mu)))
    }

    /// Rejection sampling, switching to an inverse-CDF table if the
    /// acceptance guard trips.
    pub fn sample_with_fallback<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self.sample(rng) {
            Err(Error::SamplerFailure(_)) => InverseCdfSampler::new(|x| self.pdf(x), self.trunc_radius)?.sample(rng),
            other => other,
        }
    }

    pub fn moment(&self, power: i32) -> Result<f64> {
        let r = self.trunc_radius;
        quadrature::composite(|x| x.powi(power) * self.pdf(x), -r, r, 64)
    }
}

/// `N(0, 1)` conditioned on `|x| ≤ radius`.
pub fn truncated_normal<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_PROPOSALS {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= radius {
            return Ok(z);
        }
    }
    Err(Error::SamplerFailure(format!("truncation radius {radius} too small")))
}

/// Piecewise-linear inverse CDF built from a density on `[−radius, radius]`.
#[derive(Debug, Clone)]
pub struct InverseCdfSampler {
    lo: f64,
    width: f64,
    cumulative: Vec<f64>,
}

impl InverseCdfSampler {
    pub fn new<F: Fn(f64) -> f64>(pdf: F, radius: f64) -> Result<Self> {
        let lo = -radius;
        let width = 2.0 * radius / FALLBACK_CELLS as f64;
        let mut cumulative = Vec::with_capacity(FALLBACK_CELLS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for i in 0..FALLBACK_CELLS {
            let a = lo + i as f64 * width;
            let mass = quadrature::composite(&pdf, a, a + width, 1)?;
            if mass < 0.0 {
                return Err(Error::SamplerFailure("negative density mass".into()));
            }
            acc += mass;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::SamplerFailure("density has no mass".into()));
        }
        for c in &mut cumulative {
            *c /= acc;
        }
        Ok(InverseCdfSampler { lo, width, cumulative })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let u: f64 = rng.random();
        let cell = self.cumulative.partition_point(|&c| c <= u).clamp(1, FALLBACK_CELLS) - 1;
        let (c0, c1) = (self.cumulative[cell], self.cumulative[cell + 1]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        Ok(self.lo + (cell as f64 + frac) * self.width)
    }
}

/// The pair of truncated densities for one shift, and the two mixtures they
/// are designed to match.
#[derive(Debug, Clone)]
pub struct GaussianizedMixture {
    pub absent: GaussianizationDensity,
    pub present: GaussianizationDensity,
}

impl GaussianizedMixture {
    pub fn new(mu: f64, params: &ReductionParams) -> Result<Self> {
        Ok(GaussianizedMixture {
            absent: GaussianizationDensity::new(mu, EdgeIndicator::Absent, params)?,
            present: GaussianizationDensity::new(mu, EdgeIndicator::Present, params)?,
        })
    }

    pub fn density(&self, edge: EdgeIndicator) -> &GaussianizationDensity {
        match edge {
            EdgeIndicator::Absent => &self.absent,
            EdgeIndicator::Present => &self.present,
        }
    }

    /// `½(f_0 + f_1)`: an entry outside the clique, approximately `φ`.
    pub fn null_pdf(&self, x: f64) -> f64 {
        0.5 * (self.absent.pdf(x) + self.present.pdf(x))
    }

    /// `δ f_1 + (1 − δ) ½(f_0 + f_1)`: approximately `φ̄_μ`.
    pub fn clique_pdf(&self, x: f64) -> f64 {
        let delta = self.present.delta;
        delta * self.present.pdf(x) + (1.0 - delta) * self.null_pdf(x)
    }
}
