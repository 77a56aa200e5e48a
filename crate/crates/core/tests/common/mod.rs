#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rclqr::linalg::{Mat, Vector};
use rclqr::model::{GaussianComponent, NoiseDistribution, NoiseOptions};
use rclqr::{LinearSystem, NoiseModel, Policy, RiskLagrangian, RiskSpec};

pub fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_mat<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * gauss(rng))
}

pub fn random_pd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Mat {
    let m = random_mat(rng, n, n, 1.0 / (n as f64).sqrt());
    &m * m.transpose() + Mat::identity(n, n) * floor
}

/// Random plant with `n` states and `m` inputs. `A` is not necessarily stable.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize) -> LinearSystem {
    let a = random_mat(rng, n, n, 1.1 / (n as f64).sqrt());
    let b = random_mat(rng, n, m, 1.0);
    LinearSystem::new(a, b, random_pd(rng, n, 0.5), random_pd(rng, m, 0.5)).unwrap()
}

/// Two-component Gaussian mixture in state space, so all moment terms are nonzero.
pub fn random_noise<R: Rng>(rng: &mut R, sys: &LinearSystem) -> NoiseModel {
    let n = sys.n();
    let comp = |rng: &mut R, w: f64| GaussianComponent {
        weight: w,
        mean: Vector::from_fn(n, |_, _| gauss(rng)),
        cov: random_pd(rng, n, 0.05) * 0.3,
    };
    let components = vec![comp(rng, 0.3), comp(rng, 0.7)];
    NoiseModel::new(
        NoiseDistribution::GaussianMixture { components },
        None,
        sys.q(),
        NoiseOptions::default(),
    )
    .unwrap()
}

pub fn lagrangian(sys: &LinearSystem, noise: &NoiseModel, mu: f64) -> RiskLagrangian {
    let spec = RiskSpec::from_rho(10.0, noise.stats(), sys.q()).unwrap();
    RiskLagrangian::new(sys, noise, spec, mu).unwrap()
}

/// LQR gain for `(A, B, Q, R)` by plain Riccati value iteration.
pub fn lqr_gain(sys: &LinearSystem) -> Mat {
    let (a, b, q, r) = (sys.a(), sys.b(), sys.q(), sys.r());
    let mut p = q.clone();
    for _ in 0..100_000 {
        let h = r + b.transpose() * &p * b;
        let k = h.clone().lu().solve(&(b.transpose() * &p * a)).unwrap();
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).norm() <= 1e-13 * next.norm();
        p = next;
        if done {
            break;
        }
    }
    let h = r + b.transpose() * &p * b;
    h.lu().solve(&(b.transpose() * &p * a)).unwrap()
}

/// Stabilizing policies near the LQR gain, with closed-loop radius below `max_radius`.
pub fn stabilizing_policies<R: Rng>(
    rng: &mut R,
    sys: &LinearSystem,
    count: usize,
    spread: f64,
    max_radius: f64,
) -> Vec<Policy> {
    let k0 = lqr_gain(sys);
    let (n, m) = (sys.n(), sys.m());
    let mut out = Vec::new();
    while out.len() < count {
        let k = &k0 + random_mat(rng, m, n, spread);
        let l = Vector::from_fn(m, |_, _| gauss(rng));
        let p = Policy::new(k, l);
        if p.closed_loop_radius(sys).unwrap() < max_radius {
            out.push(p);
        }
    }
    out
}

/// Spectral radius as `‖Mᵏ‖^{1/k}` for large `k`.
pub fn gelfand_radius(m: &Mat) -> f64 {
    let mut pow = m.clone();
    let mut log_scale = 0.0;
    let k = 4096;
    for _ in 1..k {
        pow = &pow * m;
        let s = pow.norm();
        if s == 0.0 {
            return 0.0;
        }
        pow /= s;
        log_scale += s.ln();
    }
    (log_scale / k as f64).exp()
}

/// `Σ_k Aᵏ W (Aᵏ)ᵀ` summed to convergence.
pub fn lyapunov_series(acl: &Mat, rhs: &Mat) -> Mat {
    let mut sum = rhs.clone();
    let mut term = rhs.clone();
    for _ in 0..1_000_000 {
        term = acl * &term * acl.transpose();
        sum += &term;
        if term.norm() <= 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

/// Central difference of `L` in every entry of `[K l]`, step `h`.
pub fn finite_difference(rl: &RiskLagrangian, p: &Policy, h: f64) -> Mat {
    let x = p.as_matrix();
    let f = |y: &Mat| rl.lagrangian(&Policy::from_matrix(y).unwrap()).unwrap();
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
        let mut up = x.clone();
        let mut dn = x.clone();
        up[(i, j)] += h;
        dn[(i, j)] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    })
}

/// Entrywise relative error with denominator `max(|g|, 1e-3·max|g|)`.
pub fn relative_error(analytic: &Mat, reference: &Mat) -> f64 {
    let floor = 1e-3 * reference.amax();
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor))
        .fold(0.0, f64::max)
}
