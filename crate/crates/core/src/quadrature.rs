//! One-dimensional Gauss–Legendre quadrature: fixed composite rules and an
//! adaptive bisection scheme.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

const RULE_ORDER: usize = 15;
const MAX_DEPTH: usize = 40;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(RULE_ORDER).expect("order is at least 2"))
}

/// Integral over `[a, b]` split into `panels` equal panels, each integrated
/// with a 15-point Gauss–Legendre rule.
pub fn composite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> Result<f64> {
    if panels == 0 || !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!("invalid composite rule on [{a}, {b}] with {panels} panels")));
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == panels { b } else { lo + h };
        total += rule().integrate(lo, hi, &f);
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite integrand on [{a}, {b}]")));
    }
    Ok(total)
}

/// Adaptive integral over `[a, b]` to absolute tolerance `tol`: a panel is
/// accepted when its 15-point estimate agrees with the sum over its halves.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || !(tol > 0.0) {
        return Err(Error::Numeric(format!("invalid adaptive rule on [{a}, {b}] with tolerance {tol}")));
    }
    let whole = rule().integrate(a, b, &f);
    let total = refine(&f, a, b, whole, tol, 0)?;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite integrand on [{a}, {b}]")));
    }
    Ok(total)
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = rule().integrate(a, mid, f);
    let right = rule().integrate(mid, b, f);
    let split = left + right;
    if !split.is_finite() {
        return Err(Error::Numeric(format!("non-finite integrand near [{a}, {b}]")));
    }
    if (split - whole).abs() <= tol || depth >= MAX_DEPTH {
        return Ok(split);
    }
    Ok(refine(f, a, mid, left, 0.5 * tol, depth + 1)? + refine(f, mid, b, right, 0.5 * tol, depth + 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomials_are_exact() {
        let v = composite(|x| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 1).unwrap();
        assert_abs_diff_eq!(v, (2f64.powi(8) - 1.0) / 8.0 - 9.0, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = adaptive(|x: f64| (x - 0.3).abs(), -1.0, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(v, 0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7, epsilon = 1e-11);
    }

    #[test]
    fn gaussian_mass() {
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(adaptive(pdf, -12.0, 12.0, 1e-14).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(composite(pdf, -12.0, 12.0, 24).unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(matches!(composite(|_| f64::NAN, 0.0, 1.0, 4), Err(Error::Numeric(_))));
        assert!(matches!(adaptive(|x| if x > 0.5 { f64::INFINITY } else { x }, -1.0, 1.0, 1e-8), Err(Error::Numeric(_))));
        assert!(composite(|x| x, 0.0, 1.0, 0).is_err());
    }
}
