mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rclqr::linalg::{self, Mat};

fn stable_matrix(seed: u64, n: usize, target: f64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_mat(&mut rng, n, n, 1.0);
    let rho = linalg::spectral_radius(&a).unwrap();
    a * (target / rho)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_matches_series(seed in any::<u64>(), n in 1usize..7, target in 0.05f64..0.97) {
        let a = stable_matrix(seed, n, target);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let w = random_pd(&mut rng, n, 0.0);
        let sigma = linalg::solve_discrete_lyapunov(&a, &w).unwrap();
        let oracle = lyapunov_series(&a, &w);
        prop_assert!((&sigma - &oracle).norm() <= 1e-8 * oracle.norm());
        prop_assert!(linalg::lyapunov_residual(&a, &w, &sigma) <= 1e-9 * oracle.norm());
    }

    #[test]
    fn spectral_radius_matches_power_growth(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mat(&mut rng, n, n, 1.0);
        let rho = linalg::spectral_radius(&a).unwrap();
        prop_assert!((rho - gelfand_radius(&a)).abs() <= 2e-2 * rho.max(1e-3));
    }

    #[test]
    fn dare_is_a_fixed_point_of_value_iteration(seed in any::<u64>(), n in 1usize..7, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, n, m);
        let (a, b, q, r) = (sys.a(), sys.b(), sys.q(), sys.r());
        let p = linalg::solve_dare(a, b, q, r).unwrap();
        prop_assert!(linalg::dare_residual(a, b, q, r, &p) <= 1e-9 * p.norm().max(1.0));
        prop_assert!(linalg::is_symmetric(&p, 1e-9 * p.norm()));
        prop_assert!(linalg::is_pd(&p));
        let k = linalg::riccati_gain(&p, a, b, r).unwrap();
        let k_vi = lqr_gain(&sys);
        prop_assert!((&k - &k_vi).norm() <= 1e-7 * k_vi.norm().max(1.0));
        prop_assert!(linalg::spectral_radius(&sys.closed_loop(&k)).unwrap() < 1.0);
    }

    #[test]
    fn symmetric_eigenvalues_bound_quadratic_forms(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_pd(&mut rng, n, 0.0) - Mat::identity(n, n) * 0.5;
        let (lo, hi) = (linalg::min_eigenvalue(&m), linalg::max_eigenvalue(&m));
        for _ in 0..20 {
            let x = random_mat(&mut rng, n, 1, 1.0);
            let rq = (x.transpose() * &m * &x)[(0, 0)] / x.norm_squared();
            prop_assert!(rq >= lo - 1e-12 && rq <= hi + 1e-12);
        }
        let trace: f64 = linalg::symmetric_eigenvalues(&m).iter().sum();
        prop_assert!((trace - m.trace()).abs() <= 1e-10 * m.norm().max(1.0));
    }
}

#[test]
fn unstable_closed_loop_is_rejected() {
    let a = Mat::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
    let w = Mat::identity(2, 2);
    assert!(linalg::solve_discrete_lyapunov(&a, &w).is_err());
}

#[test]
fn scalar_dare_closed_form() {
    // p = a²p − a²b²p²/(r + b²p) + q, solved as a quadratic in p.
    let (a, b, q, r) = (1.5f64, 0.7f64, 2.0f64, 0.3f64);
    let c2 = b * b;
    let c1 = r - a * a * r - q * b * b;
    let c0 = -q * r;
    let p = (-c1 + (c1 * c1 - 4.0 * c2 * c0).sqrt()) / (2.0 * c2);
    let m = |v: f64| Mat::from_element(1, 1, v);
    let got = linalg::solve_dare(&m(a), &m(b), &m(q), &m(r)).unwrap()[(0, 0)];
    assert!((got - p).abs() <= 1e-10 * p);
}
