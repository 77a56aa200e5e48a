//! Self-checks against independent oracles: truncated series for the
//! Lyapunov equations, finite differences for the gradient, the Bellman
//! equation in closed form, and the advantage identity by polarization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rclqr::linalg::{self, Mat, Vector};
use rclqr::{par, rng, LinearSystem, Policy, RiskLagrangian};
use serde::Serialize;

use crate::config::Resolved;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, worst: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{} {}: worst {:.3e} (tol {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

/// `Σ_k Aᵏ W (Aᵏ)ᵀ`, summed until a term is negligible.
pub fn lyapunov_series(acl: &Mat, rhs: &Mat) -> Mat {
    let mut sum = rhs.clone();
    let mut term = rhs.clone();
    for _ in 0..1_000_000 {
        term = acl * &term * acl.transpose();
        sum += &term;
        if term.norm() <= 1e-18 * sum.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    sum
}

/// Relative residual of the Riccati equation for `Q`, written out directly.
pub fn riccati_residual(sys: &LinearSystem, q: &Mat, p: &Mat) -> f64 {
    let (a, b, r) = (sys.a(), sys.b(), sys.r());
    let h = r + b.transpose() * p * b;
    let Some(h_inv) = h.clone().try_inverse() else {
        return f64::INFINITY;
    };
    let bpa = b.transpose() * p * a;
    let res = a.transpose() * p * a - p + q - bpa.transpose() * h_inv * bpa;
    res.norm() / p.norm().max(1.0)
}

/// Random stabilizing policies around `center`, each entry perturbed with
/// standard deviation `spread·(|x| + 0.5)`, kept when `ρ(A − BK) < max_radius`.
pub fn sample_stabilizing<R: Rng>(
    sys: &LinearSystem,
    center: &Policy,
    spread: f64,
    count: usize,
    max_radius: f64,
    rng: &mut R,
) -> Vec<Policy> {
    let base = center.as_matrix();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let x = Mat::from_fn(base.nrows(), base.ncols(), |i, j| {
            let z: f64 = StandardNormal.sample(rng);
            base[(i, j)] + spread * (base[(i, j)].abs() + 0.5) * z
        });
        let p = Policy::from_matrix(&x).expect("shape preserved");
        if p.closed_loop_radius(sys).is_ok_and(|rad| rad < max_radius) {
            out.push(p);
        }
    }
    out
}

fn random_state<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn check_lyapunov(rl: &RiskLagrangian, policies: &[Policy]) -> Result<CheckLine, CliError> {
    let sys = rl.sys();
    let w = &rl.stats().cov;
    let mut worst: f64 = 0.0;
    for p in policies {
        let acl = sys.closed_loop(&p.k);
        let q_k = rl.q_mu() + p.k.transpose() * sys.r() * &p.k;
        for (a, rhs) in [(acl.clone(), w.clone()), (acl.transpose(), q_k)] {
            let fast = linalg::solve_discrete_lyapunov(&a, &rhs).map_err(CliError::from)?;
            let slow = lyapunov_series(&a, &rhs);
            worst = worst.max((fast - &slow).norm() / slow.norm().max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckLine::new(
        "lyapunov-vs-series",
        worst,
        1e-8,
        format!("{} policies, state and cost equations", policies.len()),
    ))
}

pub fn check_dare(rl: &RiskLagrangian, mus: &[f64]) -> Result<CheckLine, CliError> {
    let sys = rl.sys();
    let mut worst: f64 = 0.0;
    for &mu in mus {
        let at = rl.with_mu(mu)?;
        let p = linalg::solve_dare(sys.a(), sys.b(), at.q_mu(), sys.r())?;
        worst = worst.max(riccati_residual(sys, at.q_mu(), &p));
    }
    Ok(CheckLine::new(
        "dare-residual",
        worst,
        1e-9,
        format!("mu in {mus:?}"),
    ))
}

/// `V(x) + L = c(x, u) + E V(Ax + Bu + w)` with `E V(y + w) = (y+w̄)ᵀP(y+w̄) + tr(PW) + gᵀ(y+w̄)`.
pub fn check_bellman<R: Rng>(
    rl: &RiskLagrangian,
    policies: &[Policy],
    states: usize,
    rng: &mut R,
) -> Result<CheckLine, CliError> {
    let sys = rl.sys();
    let (wbar, w) = (&rl.stats().mean, &rl.stats().cov);
    let mut worst: f64 = 0.0;
    for p in policies {
        let ev = rl.evaluate(p)?;
        let pw = (&ev.p * w).trace();
        for _ in 0..states {
            let x = random_state(sys.n(), 5.0, rng);
            let u = p.apply(&x)?;
            let y = sys.a() * &x + sys.b() * &u + wbar;
            let expected_next = y.dot(&(&ev.p * &y)) + pw + ev.g.dot(&y);
            let lhs = ev.value_at(&x) + ev.l_value;
            let rhs = rl.stage_cost(&x, &u) + expected_next;
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(CheckLine::new(
        "bellman-residual",
        worst,
        1e-8,
        format!(
            "{} policies x {states} states, mu = {}",
            policies.len(),
            rl.mu()
        ),
    ))
}

/// Stationary mean of the (quadratic) advantage under `probe`, by polarization:
/// `E[A(x)] = A(x̄) + ½ tr(∇²A · Σ)`.
pub fn expected_advantage(
    rl: &RiskLagrangian,
    base: &Policy,
    probe: &Policy,
) -> Result<f64, CliError> {
    let ev_base = rl.evaluate(base)?;
    let ev_probe = rl.evaluate(probe)?;
    let a = |x: &Vector| ev_base.advantage(base, probe, x);
    let xbar = &ev_probe.xbar;
    let n = xbar.len();
    let unit = |i: usize| Vector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let a0 = a(xbar);
    let mut correction = 0.0;
    for i in 0..n {
        let ai = a(&(xbar + unit(i)));
        for j in 0..n {
            let aj = a(&(xbar + unit(j)));
            let aij = a(&(xbar + unit(i) + unit(j)));
            let hess = aij - ai - aj + a0;
            correction += 0.5 * hess * ev_probe.sigma[(i, j)];
        }
    }
    Ok(a0 + correction)
}

pub fn check_advantage(
    rl: &RiskLagrangian,
    pairs: &[(Policy, Policy)],
) -> Result<CheckLine, CliError> {
    let mut worst: f64 = 0.0;
    for (base, probe) in pairs {
        let diff = rl.lagrangian(probe)? - rl.lagrangian(base)?;
        let avg = expected_advantage(rl, base, probe)?;
        worst = worst.max((diff - avg).abs() / diff.abs().max(f64::MIN_POSITIVE));
    }
    Ok(CheckLine::new(
        "advantage-identity",
        worst,
        1e-7,
        format!(
            "{} pairs, L(probe) - L(base) vs stationary mean advantage",
            pairs.len()
        ),
    ))
}

/// `J_c(X*(μ))` over a grid must not increase.
pub fn check_mu_grid(rl: &RiskLagrangian, grid: &[f64]) -> Result<CheckLine, CliError> {
    let values = grid
        .iter()
        .map(|&mu| {
            let at = rl.with_mu(mu)?;
            Ok(at.evaluate(&at.stationary_point()?)?.jc_value)
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let worst = values
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckLine::new(
        "risk-monotone-in-mu",
        worst.max(0.0),
        1e-10,
        format!(
            "J_c from {:.4} (mu = {}) to {:.4} (mu = {})",
            values[0],
            grid[0],
            values[values.len() - 1],
            grid[grid.len() - 1]
        ),
    ))
}

/// Policies in `{X : L(X) − L(X₀) ≤ 10 (L(X₀) − D)}`, by random rays from `X*`.
pub fn sample_sublevel<R: Rng>(
    rl: &RiskLagrangian,
    p0: &Policy,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Policy>, CliError> {
    let (d, star) = rl.dual_value()?;
    let l0 = rl.lagrangian(p0)?;
    let level = l0 + 10.0 * (l0 - d);
    let centre = star.as_matrix();
    let reach = (p0.as_matrix() - &centre).norm().max(1.0);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 10_000 * count.max(1) {
        attempts += 1;
        let dir = Mat::from_fn(centre.nrows(), centre.ncols(), |_, _| {
            StandardNormal.sample(rng)
        });
        let t = 2.0 * reach * rng.random::<f64>();
        let p = Policy::from_matrix(&(&centre + &dir * (t / dir.norm()))).expect("shape preserved");
        if let Ok(l) = rl.lagrangian(&p) {
            if l <= level {
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn check_dominance<R: Rng>(
    rl: &RiskLagrangian,
    p0: &Policy,
    samples: usize,
    rng: &mut R,
) -> Result<CheckLine, CliError> {
    let policies = sample_sublevel(rl, p0, samples, rng)?;
    if policies.len() < samples {
        return Ok(CheckLine::new(
            "gradient-dominance",
            f64::INFINITY,
            0.0,
            format!(
                "only {} of {samples} sublevel policies found",
                policies.len()
            ),
        ));
    }
    let cert = rl.gradient_dominance_certificate(&policies)?;
    let worst = cert
        .checks
        .iter()
        .map(|c| (c.gap - c.bound) / cert.dual_value.abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckLine::new(
        "gradient-dominance",
        worst.max(0.0),
        1e-9,
        format!(
            "{samples} sublevel policies, lambda = {:.3e}, phi_min = {:.3e}",
            cert.lambda, cert.phi_min
        ),
    ))
}

/// Central difference of `L` along entry `(i, j)` of `[K l]`; five-point when `wide`.
fn finite_difference(
    rl: &RiskLagrangian,
    x: &Mat,
    i: usize,
    j: usize,
    h: f64,
    wide: bool,
) -> Result<f64, CliError> {
    let at = |t: f64| -> Result<f64, CliError> {
        let mut y = x.clone();
        y[(i, j)] += t;
        Ok(rl.lagrangian(&Policy::from_matrix(&y).expect("shape preserved"))?)
    };
    if wide {
        Ok((8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h))
    } else {
        Ok((at(h)? - at(-h)?) / (2.0 * h))
    }
}

/// Entrywise relative error of the analytic gradient against central
/// differences (`h = 1e-6`, with a five-point `h = 1e-4` retry for entries that
/// miss). Entries are compared relative to `max(|g_ij|, 1e-3·max|g|)`.
pub fn gradient_error(rl: &RiskLagrangian, p: &Policy, tol: f64) -> Result<f64, CliError> {
    let grad = rl.gradient(p)?;
    let x = p.as_matrix();
    let floor = 1e-3 * grad.amax();
    let mut worst: f64 = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let denom = grad[(i, j)].abs().max(floor).max(f64::MIN_POSITIVE);
            let mut err =
                (finite_difference(rl, &x, i, j, 1e-6, false)? - grad[(i, j)]).abs() / denom;
            if err > tol {
                err = err.min(
                    (finite_difference(rl, &x, i, j, 1e-4, true)? - grad[(i, j)]).abs() / denom,
                );
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn check_gradient(rl: &RiskLagrangian, policies: &[Policy]) -> Result<CheckLine, CliError> {
    let tol = 1e-5;
    let errs = par::map(policies, |p| gradient_error(rl, p, tol));
    let worst = errs
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckLine::new(
        "gradient-vs-finite-differences",
        worst,
        tol,
        format!("{} policies, mu = {}", policies.len(), rl.mu()),
    ))
}

/// The full `check` suite on a resolved configuration. No optimizer runs.
pub fn run_checks(res: &Resolved) -> Result<Vec<CheckLine>, CliError> {
    let cfg = &res.config.check;
    let rl = RiskLagrangian::new(&res.sys, &res.noise, res.spec, cfg.mu)?;
    let star = rl.stationary_point()?;
    let mut rng = rng::stream(cfg.seed, &[7]);
    let mut policies = vec![res.p0.clone(), star.clone()];
    policies.extend(sample_stabilizing(
        &res.sys,
        &star,
        0.3,
        cfg.policies.saturating_sub(2),
        0.95,
        &mut rng,
    ));

    let grid: Vec<f64> = (0..)
        .map(|i| i as f64 * cfg.mu_grid_step)
        .take_while(|&mu| mu <= cfg.mu_grid_max + 1e-12)
        .collect();
    let pool = sample_stabilizing(&res.sys, &star, 0.3, 2 * cfg.pairs, 0.95, &mut rng);
    let pairs: Vec<(Policy, Policy)> = pool
        .chunks_exact(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    let grad_policies = {
        let mut v = vec![res.p0.clone()];
        v.extend(sample_stabilizing(
            &res.sys,
            &star,
            0.3,
            cfg.gradient_policies.saturating_sub(1),
            0.97,
            &mut rng,
        ));
        v
    };

    Ok(vec![
        check_lyapunov(&rl, &policies)?,
        check_dare(&rl, &[0.0, 0.5, cfg.mu, 5.0, 10.0])?,
        check_bellman(
            &rl,
            &policies[..policies.len().min(5)],
            cfg.states,
            &mut rng,
        )?,
        check_advantage(&rl, &pairs)?,
        check_mu_grid(&rl, &grid)?,
        check_dominance(&rl, &res.p0, cfg.dominance_samples, &mut rng)?,
        check_gradient(&rl, &grad_policies)?,
    ])
}
