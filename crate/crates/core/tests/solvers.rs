mod common;

use colar::linalg::{self, Matrix};
use colar::model::{build_covariance, make_canonical_pair, prediction_loss, sample, sample_covariances};
use colar::oracle::{classical_cca, combinations, exhaustive_stage1, OracleBudget};
use colar::stage1::{admm_solve, f_update, svcst, AdmmConfig, AdmmState};
use colar::stage2::{colar_estimate, group_lasso_objective, group_lasso_solve, group_lasso_solve_from, CvConfig, GroupLassoConfig};
use colar::{CovarianceKind, SparsityProfile};
use common::{gaussian, kron, lasso_cd, spd_with_spectrum, vec_of};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn f_objective(f: &Matrix, state: &AdmmState, sx_half: &Matrix, sy_half: &Matrix, sxy: &Matrix, cfg: &AdmmConfig) -> f64 {
    let k = sx_half * f * sy_half;
    -sxy.dot(f) + cfg.rho * f.abs().sum() + state.h.dot(&k) + 0.5 * cfg.eta * (&k - &state.g).norm_squared()
}

#[test]
fn f_update_matches_vectorized_lasso() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let (p, m) = (4, 3);
        let sx_half = linalg::psd_sqrt(&spd_with_spectrum(p, 0.5, 2.0, &mut rng), 1e-12).unwrap();
        let sy_half = linalg::psd_sqrt(&spd_with_spectrum(m, 0.5, 2.0, &mut rng), 1e-12).unwrap();
        let sxy = gaussian(p, m, &mut rng) * 0.3;
        let mut state = AdmmState::initial(&sxy, 2).unwrap();
        state.g = svcst(&gaussian(p, m, &mut rng), 2).unwrap();
        state.h = gaussian(p, m, &mut rng) * 0.1;
        let cfg = AdmmConfig { inner_tol: 1e-15, max_inner: 100_000, ..AdmmConfig::new(0.1, 2) };

        let ours = f_update(&state, &sx_half, &sy_half, &sxy, &cfg).unwrap();

        let big = kron(&sy_half, &sx_half);
        let q = big.transpose() * &big * cfg.eta;
        let c = big.transpose() * vec_of(&(&state.h - &state.g * cfg.eta)) - vec_of(&sxy);
        let reference = lasso_cd(&q, &c, cfg.rho, 100_000);
        let reference = Matrix::from_column_slice(p, m, reference.as_slice());

        let a = f_objective(&ours, &state, &sx_half, &sy_half, &sxy, &cfg);
        let b = f_objective(&reference, &state, &sx_half, &sy_half, &sxy, &cfg);
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "trial {trial}: {a} vs {b}");
    }
}

#[test]
fn admm_with_identity_covariances_recovers_leading_projector() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (p, m, r) = (6, 5, 2);
    let u = common::orthonormal(p, p, &mut rng);
    let v = common::orthonormal(m, m, &mut rng);
    let d = [2.0, 1.5, 0.4, 0.2, 0.1];
    let sxy = Matrix::from_fn(p, m, |i, j| (0..m).map(|k| u[(i, k)] * d[k] * v[(j, k)]).sum());
    let cfg = AdmmConfig { eps: 1e-8, max_outer: 5000, inner_tol: 1e-12, ..AdmmConfig::new(1e-6, r) };
    let (a_hat, state) = admm_solve(&Matrix::identity(p, p), &Matrix::identity(m, m), &sxy, &cfg).unwrap();
    assert!(state.converged);
    let target = u.columns(0, r) * v.columns(0, r).transpose();
    assert!((&a_hat - &target).norm() <= 1e-3, "{}", (&a_hat - &target).norm());
}

#[test]
fn admm_iterates_are_nearly_feasible_at_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sx = build_covariance(CovarianceKind::Toeplitz, 20).unwrap();
    let profile = SparsityProfile::new(vec![0, 3, 6], vec![1, 4, 7]);
    let model = make_canonical_pair(&sx, &sx, &profile, &[0.9, 0.7], &mut rng).unwrap();
    let data = sample(&model, 300, &mut rng).unwrap();
    let cov = sample_covariances(&data);
    let rho = 0.55 * (40f64.ln() / 300.0).sqrt();
    let cfg = AdmmConfig { eps: 1e-6, max_outer: 5000, ..AdmmConfig::new(rho, 2) };
    let (a_hat, state) = admm_solve(&cov.sx, &cov.sy, &cov.sxy, &cfg).unwrap();
    assert!(state.converged);
    assert_eq!(a_hat, state.f);
    assert!(state.primal_residual <= 10.0 * cfg.eps / cfg.eta, "residual {}", state.primal_residual);
    assert!(linalg::op_norm(&state.g).unwrap() <= 1.0 + 1e-9);
    assert!(linalg::nuclear_norm(&state.g).unwrap() <= 2.0 + 1e-9);
    let last = state.history.last().unwrap();
    assert_eq!(last.iter, state.outer_iter);
}

#[test]
fn group_lasso_zero_above_critical_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let sx = spd_with_spectrum(8, 0.5, 2.0, &mut rng);
    let target = gaussian(8, 2, &mut rng);
    let critical = 2.0 * target.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let l = group_lasso_solve(&sx, &target, &GroupLassoConfig::new(critical * 1.001)).unwrap();
    assert!(l.iter().all(|v| *v == 0.0));
    let l = group_lasso_solve(&sx, &target, &GroupLassoConfig::new(critical * 0.9)).unwrap();
    assert!(l.iter().any(|v| *v != 0.0));
}

#[test]
fn group_lasso_without_penalty_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let sx = spd_with_spectrum(6, 0.5, 2.0, &mut rng);
    let target = gaussian(6, 3, &mut rng);
    let cfg = GroupLassoConfig { tol: 1e-13, max_sweeps: 100_000, ..GroupLassoConfig::new(0.0) };
    let l = group_lasso_solve(&sx, &target, &cfg).unwrap();
    let exact = sx.clone().cholesky().unwrap().solve(&target);
    assert!((&l - &exact).amax() <= 1e-8);
}

#[test]
fn group_lasso_warm_start_at_solution_stops_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let sx = spd_with_spectrum(10, 0.5, 2.0, &mut rng);
    let target = gaussian(10, 3, &mut rng);
    let cfg = GroupLassoConfig { tol: 1e-12, ..GroupLassoConfig::new(1.0) };
    let (l, _) = group_lasso_solve_from(&sx, &target, &cfg, None).unwrap();
    let (l2, sweeps) = group_lasso_solve_from(&sx, &target, &cfg, Some(&l)).unwrap();
    assert!(sweeps <= 2, "{sweeps} sweeps");
    let (a, b) = (group_lasso_objective(&sx, &target, &l, 1.0), group_lasso_objective(&sx, &target, &l2, 1.0));
    assert!(b <= a + 1e-12);
}

#[test]
fn exhaustive_stage1_beats_every_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sigma = Matrix::identity(6, 6);
    let profile = SparsityProfile::new(vec![1, 2], vec![1, 2]);
    let model = make_canonical_pair(&sigma, &sigma, &profile, &[0.8], &mut rng).unwrap();
    let data = sample(&model, 2000, &mut rng).unwrap();
    let cov = sample_covariances(&data);
    let (l, r) = exhaustive_stage1(&cov.sx, &cov.sy, &cov.sxy, &OracleBudget::new(2, 2), 1).unwrap();
    let chosen = l.dot(&(&cov.sxy * &r));

    let restrict = |a: &Matrix, rows: &[usize], cols: &[usize]| {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
    };
    let mut best = f64::NEG_INFINITY;
    for su in combinations(6, 2) {
        for sv in combinations(6, 2) {
            let cca = classical_cca(
                &restrict(&cov.sx, &su, &su),
                &restrict(&cov.sy, &sv, &sv),
                &restrict(&cov.sxy, &su, &sv),
                1,
            )
            .unwrap();
            best = best.max(cca.correlations[0]);
        }
    }
    assert!((chosen - best).abs() <= 1e-10, "{chosen} vs {best}");
    let nonzero: Vec<usize> = (0..6).filter(|&i| l[(i, 0)] != 0.0).collect();
    assert_eq!(nonzero, vec![1, 2]);
}

#[test]
fn sample_covariance_concentrates() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let sx = build_covariance(CovarianceKind::SparseInv, 10).unwrap();
    let sy = build_covariance(CovarianceKind::Toeplitz, 8).unwrap();
    let profile = SparsityProfile::new(vec![0, 2, 4], vec![1, 3]);
    let model = make_canonical_pair(&sx, &sy, &profile, &[0.9, 0.5], &mut rng).unwrap();
    let n = 40_000;
    let cov = sample_covariances(&sample(&model, n, &mut rng).unwrap());
    let bound = 6.0 / (n as f64).sqrt();
    assert!((&cov.sx - &model.sigma_x).amax() <= bound);
    assert!((&cov.sy - &model.sigma_y).amax() <= bound);
    assert!((&cov.sxy - model.sigma_xy()).amax() <= bound);
}

#[test]
fn estimator_recovers_a_sparse_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (p, m, n) = (40, 40, 600);
    let sigma = Matrix::identity(p, p);
    let profile = SparsityProfile::new(vec![0, 5, 10, 15], vec![2, 7, 12, 17]);
    let model = make_canonical_pair(&sigma, &sigma, &profile, &[0.9], &mut rng).unwrap();
    let data = sample(&model, n, &mut rng).unwrap();
    let rho = 0.55 * (((p + m) as f64).ln() / n as f64).sqrt();
    let est = colar_estimate(&data, &AdmmConfig::new(rho, 1), &CvConfig::new(1), false).unwrap();
    let loss = prediction_loss(&est.u_hat, &model.u, &model.sigma_x).unwrap();
    assert!(loss <= 0.05, "loss {loss}");
    for j in (0..p).filter(|&j| model.u[(j, 0)] != 0.0) {
        assert!(est.support_u.contains(&j), "row {j} missing from {:?}", est.support_u);
    }
    let gram = est.u_hat.transpose() * sample_covariances(&data).sx * &est.u_hat;
    assert!((gram[(0, 0)] - 1.0).abs() <= 1e-8);
}
