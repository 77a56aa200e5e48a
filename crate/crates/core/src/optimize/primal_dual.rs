use serde::{Deserialize, Serialize};

use super::log::{Clock, IterateLog, IterateRecord};
use super::random_search::{random_search, RandomSearchConfig};
use crate::analytic::RiskLagrangian;
use crate::error::{Error, Result};
use crate::model::{LinearSystem, NoiseModel, RiskSpec};
use crate::oracle::{RolloutConfig, RolloutOracle};
use crate::policy::Policy;
use crate::rng;

pub const MU_OVERFLOW: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `ξ_j = scale·√(2/j)`; without a scale, calibrated so `ξ₁ ≈ 0.1·ρ̄/|ω̂(μ₁)|`.
    Diminishing {
        #[serde(default)]
        scale: Option<f64>,
    },
    Constant {
        xi: f64,
    },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Diminishing { scale: None }
    }
}

impl StepSchedule {
    /// Resolves an uncalibrated schedule from the first subgradient.
    pub fn calibrated(self, rho_bar: f64, omega1: f64) -> Self {
        match self {
            StepSchedule::Diminishing { scale: None } => {
                let denom = omega1.abs().max(f64::MIN_POSITIVE) * std::f64::consts::SQRT_2;
                StepSchedule::Diminishing {
                    scale: Some(0.1 * rho_bar.abs() / denom),
                }
            }
            other => other,
        }
    }

    /// Step for outer iteration `j ≥ 1`.
    pub fn step(&self, j: usize) -> f64 {
        match *self {
            StepSchedule::Diminishing { scale } => scale.unwrap_or(1.0) * (2.0 / j as f64).sqrt(),
            StepSchedule::Constant { xi } => xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerSolver {
    /// `X*(μ)` from the Riccati equation.
    Exact,
    RandomSearch(RandomSearchConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalDualConfig {
    #[serde(default)]
    pub mu_init: f64,
    pub outer_iters: usize,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    pub inner: InnerSolver,
    #[serde(default = "default_risk_horizon")]
    pub risk_oracle_horizon: usize,
    #[serde(default)]
    pub risk_oracle_burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Stop once `|μ_{j+1} − μ_j| ≤ tolerance·max(1, μ_j)`.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub record_wallclock: bool,
}

fn default_risk_horizon() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

impl PrimalDualConfig {
    pub fn exact(outer_iters: usize) -> Self {
        Self {
            mu_init: 0.0,
            outer_iters,
            step_schedule: StepSchedule::default(),
            inner: InnerSolver::Exact,
            risk_oracle_horizon: default_risk_horizon(),
            risk_oracle_burn_in: 0,
            seed: 0,
            warm_start: true,
            tolerance: None,
            record_wallclock: false,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.inner, InnerSolver::Exact)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_init >= 0.0 && self.mu_init.is_finite()) {
            return Err(Error::Config(format!(
                "mu_init must be nonnegative, got {}",
                self.mu_init
            )));
        }
        if self.outer_iters == 0 {
            return Err(Error::Config("outer_iters must be at least 1".into()));
        }
        match self.step_schedule {
            StepSchedule::Diminishing { scale: Some(s) } if !(s > 0.0 && s.is_finite()) => {
                return Err(Error::Config(format!(
                    "diminishing scale must be positive, got {s}"
                )))
            }
            StepSchedule::Constant { xi } if !(xi > 0.0 && xi.is_finite()) => {
                return Err(Error::Config(format!(
                    "constant step must be positive, got {xi}"
                )))
            }
            _ => {}
        }
        if self.risk_oracle_horizon == 0 {
            return Err(Error::Config(
                "risk oracle horizon must be at least 1".into(),
            ));
        }
        if let InnerSolver::RandomSearch(rs) = &self.inner {
            rs.validate()?;
        }
        Ok(())
    }

    fn risk_rollout(&self) -> RolloutConfig {
        RolloutConfig::new(self.risk_oracle_horizon, self.seed)
            .with_burn_in(self.risk_oracle_burn_in)
    }
}

/// `ω(μ) = J_c(X) − ρ̄` from the model.
pub fn dual_subgradient_exact(rl: &RiskLagrangian, p_star: &Policy) -> Result<f64> {
    Ok(rl.evaluate(p_star)?.jc_value - rl.rho_bar())
}

/// `ω̂(μ) = Ĵ_c(X) − ρ̄` from one rollout.
pub fn dual_subgradient(
    rl: &RiskLagrangian,
    noise: &NoiseModel,
    p_star: &Policy,
    risk: &RolloutConfig,
) -> Result<f64> {
    let sample = RolloutOracle::new(rl, noise)?.rollout(p_star, risk)?;
    Ok(sample.jc_hat - rl.rho_bar())
}

/// Constant dual step `1/ĥ`, where `ĥ` is the secant slope of the exact
/// subgradient at `mu`. Steepest near zero for convex-decreasing `ω`, so this
/// step stays stable along an upward path.
pub fn secant_step(base: &RiskLagrangian, mu: f64) -> Result<f64> {
    let omega = |m: f64| -> Result<f64> {
        let rl = base.with_mu(m)?;
        dual_subgradient_exact(&rl, &rl.stationary_point()?)
    };
    let delta = 1e-3 * mu.max(1.0);
    let slope = ((omega(mu + delta)? - omega(mu)?) / delta).abs();
    Ok(if slope > 0.0 && slope.is_finite() {
        1.0 / slope
    } else {
        1.0
    })
}

/// One outer iteration of the primal-dual loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualRecord {
    pub j: usize,
    pub mu: f64,
    /// Running average of `μ_1..μ_j`.
    pub mu_bar: f64,
    pub omega: f64,
    pub xi: f64,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalDualOutcome {
    pub policy: Policy,
    /// Multiplier at which `policy` was computed.
    pub mu: f64,
    pub mu_bar: f64,
    pub converged: bool,
    pub schedule: StepSchedule,
    pub records: Vec<DualRecord>,
    pub log: IterateLog,
}

/// Primal-dual loop: alternate an inner solve at `μ_j` with the projected dual step
/// `μ_{j+1} = max(0, μ_j + ξ_j·ω̂(μ_j))`.
pub fn primal_dual(
    sys: &LinearSystem,
    noise: &NoiseModel,
    spec: RiskSpec,
    cfg: &PrimalDualConfig,
    p0: &Policy,
) -> Result<PrimalDualOutcome> {
    cfg.validate()?;
    p0.check_dims(sys)?;
    if !p0.is_stabilizing(sys)? {
        return Err(Error::Precondition(
            "initial policy is not stabilizing".into(),
        ));
    }
    let base = RiskLagrangian::new(sys, noise, spec, cfg.mu_init)?;
    let clock = Clock::new(cfg.record_wallclock);
    let mut schedule = cfg.step_schedule;
    let mut log = IterateLog::with_capacity(cfg.outer_iters);
    let mut records: Vec<DualRecord> = Vec::with_capacity(cfg.outer_iters);
    let mut mu = cfg.mu_init;
    let mut mu_sum = 0.0;
    let mut prev = p0.clone();
    let mut converged = false;

    let stopped = |j: usize, mu: f64, last: &Policy, cause: Error| Error::Stopped {
        iteration: j,
        mu,
        last: Box::new(last.clone()),
        cause: Box::new(cause),
    };

    for j in 1..=cfg.outer_iters {
        let rl = base.with_mu(mu)?;
        let (policy, record) = match &cfg.inner {
            InnerSolver::Exact => {
                let x = rl
                    .stationary_point()
                    .map_err(|e| stopped(j, mu, &prev, e))?;
                let ev = rl.evaluate(&x).map_err(|e| stopped(j, mu, &prev, e))?;
                let rec = IterateRecord {
                    iter: j,
                    mu,
                    l_est: ev.l_value,
                    j_est: ev.j_value,
                    jc_est: ev.jc_value,
                    grad_norm: ev.grad.norm(),
                    eta_effective: 0.0,
                    wallclock_ms: 0.0,
                };
                (x, rec)
            }
            InnerSolver::RandomSearch(rs) => {
                let start = if cfg.warm_start { &prev } else { p0 };
                let inner_cfg = RandomSearchConfig {
                    seed: rng::derive(cfg.seed, &[j as u64, 0]),
                    ..rs.clone()
                };
                let (x, inner_log) = random_search(&rl, noise, start, &inner_cfg)
                    .map_err(|e| stopped(j, mu, &prev, e))?;
                let risk = cfg
                    .risk_rollout()
                    .with_seed(rng::derive(cfg.seed, &[j as u64, 1]));
                let sample = RolloutOracle::new(&rl, noise)?
                    .rollout(&x, &risk)
                    .map_err(|e| stopped(j, mu, &prev, e))?;
                let rec = IterateRecord {
                    iter: j,
                    mu,
                    l_est: sample.l_hat,
                    j_est: sample.j_hat,
                    jc_est: sample.jc_hat,
                    grad_norm: inner_log.last().map_or(0.0, |r| r.grad_norm),
                    eta_effective: 0.0,
                    wallclock_ms: 0.0,
                };
                (x, rec)
            }
        };
        let omega = record.jc_est - rl.rho_bar();
        if j == 1 {
            schedule = schedule.calibrated(rl.rho_bar(), omega);
        }
        let xi = schedule.step(j);
        mu_sum += mu;
        records.push(DualRecord {
            j,
            mu,
            mu_bar: mu_sum / j as f64,
            omega,
            xi,
            policy: policy.clone(),
        });
        log.push(IterateRecord {
            eta_effective: xi,
            wallclock_ms: clock.ms(),
            ..record
        });
        prev = policy;

        let next = (mu + xi * omega).max(0.0);
        if !(next <= MU_OVERFLOW) {
            return Err(stopped(
                j,
                mu,
                &prev,
                Error::Numerical(format!("multiplier exceeded {MU_OVERFLOW:e}")),
            ));
        }
        if let Some(tol) = cfg.tolerance {
            if (next - mu).abs() <= tol * mu.max(1.0) {
                converged = true;
                break;
            }
        }
        if j < cfg.outer_iters {
            mu = next;
        }
    }

    let last = records.last().expect("at least one outer iteration");
    Ok(PrimalDualOutcome {
        policy: prev,
        mu: last.mu,
        mu_bar: last.mu_bar,
        converged,
        schedule,
        records,
        log,
    })
}

/// Post-hoc check of `D* − D(μ̄_j) ≤ 3·b̂·ê/√j`, with `b̂ = max|ω_i|` and
/// `ê = max μ_i` measured over the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualGapPoint {
    pub j: usize,
    pub mu_bar: f64,
    pub gap: f64,
    pub bound: f64,
}

impl DualGapPoint {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

pub fn dual_gap_trace(
    base: &RiskLagrangian,
    records: &[DualRecord],
    d_star: f64,
    every: usize,
) -> Result<(f64, f64, Vec<DualGapPoint>)> {
    let b_hat = records.iter().map(|r| r.omega.abs()).fold(0.0, f64::max);
    let e_hat = records.iter().map(|r| r.mu).fold(0.0, f64::max);
    let every = every.max(1);
    let mut points = Vec::new();
    for r in records
        .iter()
        .filter(|r| r.j % every == 0 || r.j == records.len())
    {
        let (d, _) = base.with_mu(r.mu_bar)?.dual_value()?;
        points.push(DualGapPoint {
            j: r.j,
            mu_bar: r.mu_bar,
            gap: d_star - d,
            bound: 3.0 * b_hat * e_hat / (r.j as f64).sqrt(),
        });
    }
    Ok((b_hat, e_hat, points))
}
