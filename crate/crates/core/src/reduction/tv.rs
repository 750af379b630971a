use crate::error::Result;
use crate::quadrature;

const TAIL_LENGTH: f64 = 40.0;
const TAIL_PANELS: usize = 80;

/// Total variation distance `½∫|f − g|` between two densities on the real
/// line. `[a, b]` is integrated with `panels` composite panels; both tails
/// beyond it are added over a further 40 units each.
///
/// Place any kinks of either density (truncation points) on panel
/// boundaries, for example by taking `[a, b]` as the truncation interval.
pub fn tv_numeric<F, G>(f: F, g: G, a: f64, b: f64, panels: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let diff = |x: f64| 0.5 * (f(x) - g(x)).abs();
    let body = quadrature::composite(diff, a, b, panels)?;
    let left = quadrature::composite(diff, a - TAIL_LENGTH, a, TAIL_PANELS)?;
    let right = quadrature::composite(diff, b, b + TAIL_LENGTH, TAIL_PANELS)?;
    Ok(body + left + right)
}
