use colar::CovarianceKind;
use colar_bench::{default_rho, random_matrix, simulation_covariances};

#[test]
fn fixtures_are_seeded() {
    assert_eq!(random_matrix(4, 3, 1.0, 9), random_matrix(4, 3, 1.0, 9));
    let a = simulation_covariances(CovarianceKind::Toeplitz, 30, 50, 1);
    let b = simulation_covariances(CovarianceKind::Toeplitz, 30, 50, 1);
    assert_eq!(a.sxy, b.sxy);
    assert_eq!(a.sx.shape(), (30, 30));
}

#[test]
fn default_penalty_matches_simulation_setting() {
    let rho = default_rho(300, 300, 500);
    assert!((rho - 0.55 * (600f64.ln() / 500.0).sqrt()).abs() < 1e-15);
}
