use rclqr::model::{uav, RiskSpec};
use rclqr::optimize::{
    dual_gap_trace, primal_dual, secant_step, InnerSolver, PrimalDualConfig, StepSchedule,
};
use rclqr::{uav_benchmark, RiskLagrangian};

/// The UAV plant with a budget the stationary policies can meet: `ρ = 15`
/// read as the raw predictive-variance bound.
fn feasible() -> (
    rclqr::LinearSystem,
    rclqr::NoiseModel,
    RiskSpec,
    rclqr::Policy,
) {
    let (sys, noise, _, p0) = uav_benchmark();
    let spec = RiskSpec::from_rho(15.0, noise.stats(), &uav::q()).unwrap();
    (sys, noise, spec, p0)
}

/// `μ*` by bisection on `ω(μ) = J_c(X*(μ)) − ρ̄`, which is decreasing.
fn bisect_multiplier(base: &RiskLagrangian) -> f64 {
    let omega = |mu: f64| {
        let rl = base.with_mu(mu).unwrap();
        rl.evaluate(&rl.stationary_point().unwrap())
            .unwrap()
            .jc_value
            - rl.rho_bar()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while omega(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if omega(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn exact_primal_dual_reaches_strong_duality() {
    let (sys, noise, spec, p0) = feasible();
    let base = RiskLagrangian::new(&sys, &noise, spec, 0.0).unwrap();
    let mu_star = bisect_multiplier(&base);
    let cfg = PrimalDualConfig {
        step_schedule: StepSchedule::Constant {
            xi: secant_step(&base, 0.0).unwrap(),
        },
        tolerance: Some(1e-11),
        ..PrimalDualConfig::exact(20_000)
    };
    let out = primal_dual(&sys, &noise, spec, &cfg, &p0).unwrap();
    assert!(out.converged);
    assert!(
        (out.mu - mu_star).abs() <= 1e-6 * mu_star,
        "{} vs {mu_star}",
        out.mu
    );
    let at = base.with_mu(out.mu).unwrap();
    let ev = at.evaluate(&out.policy).unwrap();
    let d = at.dual_value().unwrap().0;
    assert!((ev.j_value - d).abs() / d <= 1e-6);
    assert!((out.mu * (ev.jc_value - spec.rho_bar)).abs() <= 1e-6 * spec.rho_bar);
}

#[test]
fn literal_uav_budget_is_infeasible() {
    let (sys, noise, spec, _) = uav_benchmark();
    let base = RiskLagrangian::new(&sys, &noise, spec, 0.0).unwrap();
    // ω(μ) stays positive: J_c(X*(μ)) decreases towards a floor above ρ̄ = 15.
    for mu in [0.0, 10.0, 1e3, 1e6] {
        let rl = base.with_mu(mu).unwrap();
        let jc = rl
            .evaluate(&rl.stationary_point().unwrap())
            .unwrap()
            .jc_value;
        assert!(jc > spec.rho_bar + 7.0, "mu {mu}: J_c = {jc}");
    }
}

#[test]
fn diminishing_steps_satisfy_the_dual_gap_bound() {
    let (sys, noise, spec, p0) = feasible();
    let base = RiskLagrangian::new(&sys, &noise, spec, 0.0).unwrap();
    let mu_star = bisect_multiplier(&base);
    let d_star = base.with_mu(mu_star).unwrap().dual_value().unwrap().0;
    let cfg = PrimalDualConfig::exact(1000);
    assert!(matches!(cfg.inner, InnerSolver::Exact));
    let out = primal_dual(&sys, &noise, spec, &cfg, &p0).unwrap();
    let (b, e, points) = dual_gap_trace(&base, &out.records, d_star, 1).unwrap();
    assert!(b > 0.0 && e > 0.0);
    assert_eq!(points.len(), 1000);
    assert!(points.iter().all(|p| p.holds()));
    let last = points.last().unwrap();
    assert!(last.gap >= -1e-9 * d_star && last.gap < points[9].gap);
}
