//! Finite-precision variants: dyadic quantization, the dyadic mass table
//! sampler and the discretized reductions built on them.

use nalgebra::DVector;
use rand::Rng;

use super::density::{phi0, EdgeIndicator, GaussianizedMixture, ReductionParams};
use super::graph::CliqueInstance;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::SampleSet;
use crate::quadrature;

/// Largest supported `K + w + 1`, i.e. at most 2^20 table cells.
pub const MAX_TABLE_BITS: u32 = 20;
/// Masses are stored in units of `2^-b` in a `u128`.
pub const MAX_MASS_BITS: u32 = 127;

/// `2^-t ⌊2^t x⌋`.
pub fn quantize(x: f64, t: u32) -> f64 {
    let scale = (t as f64).exp2();
    (x * scale).floor() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicParams {
    /// Grid resolution: cells have width `2^-w`.
    pub w: u32,
    /// Mass precision: probabilities are multiples of `2^-b`.
    pub b: u32,
    /// Support `[−2^K, 2^K]`.
    pub big_k: u32,
}

impl DyadicParams {
    pub fn new(w: u32, b: u32, big_k: u32) -> Result<Self> {
        let params = DyadicParams { w, b, big_k };
        params.validate()?;
        Ok(params)
    }

    /// The constants tied to output precision `t`, graph size `N` and
    /// dimension `p`:
    /// `w = t + ⌈4 log₂ p⌉`, `K = ⌈log₂(3√ln(N + p))⌉`, `b = w + K + 1 + ⌈4 log₂ p⌉`.
    pub fn paper_constants(t: u32, n_vertices: usize, p: usize) -> Self {
        let extra = (4.0 * (p as f64).log2()).ceil().max(0.0) as u32;
        let w = t + extra;
        let big_k = (3.0 * ((n_vertices + p) as f64).ln().sqrt()).log2().ceil().max(0.0) as u32;
        DyadicParams { w, b: w + big_k + 1 + extra, big_k }
    }

    pub fn table_bits(&self) -> u32 {
        self.big_k + self.w + 1
    }

    /// Bound on the TV distance between the table and the quantized target.
    pub fn tv_bound(&self) -> f64 {
        (self.table_bits() as f64 - self.b as f64).exp2()
    }

    pub fn validate(&self) -> Result<()> {
        if self.table_bits() >= self.b {
            return Err(Error::Precondition(format!("need K + w + 1 < b, got K={} w={} b={}", self.big_k, self.w, self.b)));
        }
        if self.b > MAX_MASS_BITS {
            return Err(Error::Precondition(format!("mass precision b = {} exceeds {MAX_MASS_BITS}", self.b)));
        }
        if self.table_bits() > MAX_TABLE_BITS {
            return Err(Error::Precondition(format!(
                "table with 2^{} cells exceeds the 2^{MAX_TABLE_BITS} limit",
                self.table_bits()
            )));
        }
        Ok(())
    }
}

/// Discrete distribution on the grid `−2^K + i 2^-w`, `i = 0 … 2^(K+w+1) − 1`,
/// whose masses are the normalized cell probabilities of a density rounded
/// down to multiples of `2^-b`, with the last point taking the remainder.
#[derive(Debug, Clone)]
pub struct DyadicTable {
    params: DyadicParams,
    masses: Vec<u128>,
    /// Running sums of `masses`.
    cumulative: Vec<u128>,
    cell_probabilities: Vec<f64>,
}

impl DyadicTable {
    pub fn from_density<F: Fn(f64) -> f64>(pdf: F, params: DyadicParams) -> Result<Self> {
        params.validate()?;
        let cells = 1usize << params.table_bits();
        let width = (-(params.w as f64)).exp2();
        let lo = -(params.big_k as f64).exp2();
        let mut integrals = Vec::with_capacity(cells);
        for i in 0..cells {
            let a = lo + i as f64 * width;
            integrals.push(quadrature::composite(&pdf, a, a + width, 1)?);
        }
        let total: f64 = integrals.iter().sum();
        if !(total > 0.0 && total.is_finite()) || integrals.iter().any(|&m| m < 0.0) {
            return Err(Error::Precondition("density mass on the table support is not normalizable".into()));
        }
        let cell_probabilities: Vec<f64> = integrals.iter().map(|m| m / total).collect();
        let scale = (params.b as f64).exp2();
        let full = 1u128 << params.b;
        let mut masses: Vec<u128> = cell_probabilities[..cells - 1].iter().map(|&q| (q * scale).floor() as u128).collect();
        let assigned: u128 = masses.iter().sum();
        let remainder = match full.checked_sub(assigned) {
            Some(rem) => rem,
            None => {
                // Beyond 53 bits the f64 products can overshoot; the excess is
                // a few units and comes off the heaviest cell.
                let excess = assigned - full;
                let heaviest = (0..masses.len()).max_by_key(|&i| masses[i]).expect("at least two cells");
                if masses[heaviest] < excess {
                    return Err(Error::Numeric("rounded cell masses exceed one".into()));
                }
                masses[heaviest] -= excess;
                0
            }
        };
        masses.push(remainder);
        let cumulative = masses
            .iter()
            .scan(0u128, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        Ok(DyadicTable { params, masses, cumulative, cell_probabilities })
    }

    pub fn standard_normal(params: DyadicParams) -> Result<Self> {
        Self::from_density(phi0, params)
    }

    /// Standard normal conditioned on `|x| ≤ radius`.
    pub fn truncated_normal(radius: f64, params: DyadicParams) -> Result<Self> {
        Self::from_density(|x| if x.abs() <= radius { phi0(x) } else { 0.0 }, params)
    }

    pub fn params(&self) -> DyadicParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        -(self.params.big_k as f64).exp2() + i as f64 * (-(self.params.w as f64)).exp2()
    }

    /// Masses in units of `2^-b`.
    pub fn masses(&self) -> &[u128] {
        &self.masses
    }

    pub fn total_units(&self) -> u128 {
        *self.cumulative.last().expect("table is never empty")
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.masses[i] as f64 / (self.params.b as f64).exp2()
    }

    /// Unrounded cell probabilities of the normalized target.
    pub fn cell_probabilities(&self) -> &[f64] {
        &self.cell_probabilities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<u128>() >> (128 - self.params.b);
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.point(i)
    }

    /// `½ Σ |table(i) − target(i)|` against the given per-cell probabilities.
    pub fn tv_to(&self, target: &[f64]) -> Result<f64> {
        if target.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("{} target cells for a table of {}", target.len(), self.len())));
        }
        Ok(0.5 * (0..self.len()).map(|i| (self.probability(i) - target[i]).abs()).sum::<f64>())
    }

    /// TV against the quantized target restricted to `[−2^K, 2^K]`.
    pub fn tv_to_target(&self) -> f64 {
        self.tv_to(&self.cell_probabilities).expect("lengths agree")
    }
}

/// Discretized graph-to-PCA reduction: shifts, Gaussianized entries and the
/// unrelated columns are all drawn from dyadic tables, and each shift is
/// `[√η]_w ξ`.
pub fn reduce_to_pca_dyadic<R: Rng + ?Sized>(
    inst: &CliqueInstance,
    params: &ReductionParams,
    n: usize,
    p: usize,
    dyadic: DyadicParams,
    rng: &mut R,
) -> Result<Matrix> {
    super::pipeline::check_dimensions(inst, params, n, p)?;
    let n_vertices = inst.n_vertices();
    let radius = params.trunc_radius();
    let shift_table = DyadicTable::truncated_normal(radius, dyadic)?;
    let normal_table = DyadicTable::standard_normal(dyadic)?;
    let scale = quantize(params.eta().sqrt(), dyadic.w);
    let bound = params.mu_bound();
    let mut w = Matrix::zeros(2 * n, p);
    for i in 0..2 * n {
        // Grid points may sit just past the truncation radius.
        let mu = (scale * shift_table.sample(rng)).clamp(-bound, bound);
        let mixture = GaussianizedMixture::new(mu, params)?;
        let row_vertex = n_vertices - 2 * n + i;
        let tables = [EdgeIndicator::Absent, EdgeIndicator::Present]
            .map(|edge| DyadicTable::from_density(|x| mixture.density(edge).pdf(x), dyadic));
        let [absent, present] = tables;
        let (absent, present) = (absent?, present?);
        for j in 0..2 * n {
            w[(i, j)] = if inst.has_edge(row_vertex, j) { present.sample(rng) } else { absent.sample(rng) };
        }
        for j in 2 * n..p {
            w[(i, j)] = normal_table.sample(rng);
        }
    }
    Ok(w)
}

/// Discretized PCA-to-CCA step: `X = [1/√2]_w (W + Z)`, `Y = [1/√2]_w (W − Z)`
/// with `Z` drawn from the standard normal table.
pub fn pca_to_cca_dyadic<R: Rng + ?Sized>(w: &Matrix, dyadic: DyadicParams, rng: &mut R) -> Result<SampleSet> {
    let table = DyadicTable::standard_normal(dyadic)?;
    let z = Matrix::from_fn(w.nrows(), w.ncols(), |_, _| table.sample(rng));
    let c = quantize(std::f64::consts::FRAC_1_SQRT_2, dyadic.w);
    SampleSet::new((w + &z) * c, (w - &z) * c)
}

/// `[û / ‖û‖]_w`, entrywise.
pub fn cca_to_pca_estimator_dyadic(u_hat: &Matrix, w: u32) -> Result<DVector<f64>> {
    Ok(super::pipeline::cca_to_pca_estimator(u_hat)?.map(|x| quantize(x, w)))
}
