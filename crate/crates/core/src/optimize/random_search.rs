use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::log::{Clock, IterateLog, IterateRecord, SearchDiagnostics, Snapshot};
use crate::analytic::RiskLagrangian;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::NoiseModel;
use crate::oracle::{OracleSample, RolloutConfig, RolloutOracle};
use crate::policy::Policy;
use crate::rng;

/// Perturbation draws per gradient estimate before giving up.
pub const MAX_ATTEMPTS: usize = 10;
/// Step halvings tried before an update is skipped.
pub const MAX_HALVINGS: usize = 10;
const DIAGNOSTIC_WINDOW: usize = 1000;
const CURVATURE_PROBES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Safeguard {
    None,
    /// Halve the step while the update leaves the stabilizing set.
    #[default]
    RejectUnstable,
    /// Also require `L(X) − L(X₀) ≤ factor · (L(X₀) − D(μ))`.
    Sublevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    OnePoint,
    /// Antithetic pair `X ± rU` sharing one noise stream.
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    Sphere,
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSearchConfig {
    pub iterations: usize,
    pub radius: f64,
    pub step: f64,
    pub oracle_horizon: usize,
    #[serde(default)]
    pub oracle_burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub safeguard: Safeguard,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub perturbation: Perturbation,
    /// Keep a policy snapshot every this many iterations (0 disables).
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub record_wallclock: bool,
    #[serde(default)]
    pub diagnostics: bool,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self {
            iterations: 300_000,
            radius: 0.2,
            step: 1e-5,
            oracle_horizon: 100,
            oracle_burn_in: 0,
            seed: 0,
            safeguard: Safeguard::default(),
            estimator: Estimator::default(),
            perturbation: Perturbation::default(),
            snapshot_every: 0,
            record_wallclock: false,
            diagnostics: false,
        }
    }
}

impl RandomSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.oracle_horizon == 0 {
            return Err(Error::Config("oracle horizon must be at least 1".into()));
        }
        if let Safeguard::Sublevel(f) = self.safeguard {
            if !(f > 0.0) {
                return Err(Error::Config(format!(
                    "sublevel factor must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig::new(self.oracle_horizon, self.seed).with_burn_in(self.oracle_burn_in)
    }
}

/// A gradient estimate with the cost readings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Mat,
    pub l_est: f64,
    pub j_est: f64,
    pub jc_est: f64,
}

/// Anything that can produce a descent direction at a policy.
pub trait GradientSource {
    fn estimate(&mut self, p: &Policy) -> Result<GradientEstimate>;
}

/// Exact gradient from the model; the noiseless limit of the estimator.
pub struct AnalyticGradient<'a> {
    pub rl: &'a RiskLagrangian,
}

impl GradientSource for AnalyticGradient<'_> {
    fn estimate(&mut self, p: &Policy) -> Result<GradientEstimate> {
        let ev = self.rl.evaluate(p)?;
        Ok(GradientEstimate {
            grad: ev.grad,
            l_est: ev.l_value,
            j_est: ev.j_value,
            jc_est: ev.jc_value,
        })
    }
}

/// Unit-norm (sphere) or unit-ball sample in `ℝ^{m×cols}`.
pub fn draw_direction<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    cols: usize,
    shape: Perturbation,
) -> Mat {
    let mut u = Mat::from_fn(m, cols, |_, _| StandardNormal.sample(rng));
    let norm = u.norm();
    let d = (m * cols) as f64;
    let scale = match shape {
        Perturbation::Sphere => 1.0 / norm,
        Perturbation::Ball => rng.random::<f64>().powf(1.0 / d) / norm,
    };
    u *= scale;
    u
}

/// Zeroth-order gradient estimator over a rollout oracle.
#[derive(Debug, Clone)]
pub struct ZerothOrder {
    oracle: RolloutOracle,
    radius: f64,
    rollout: RolloutConfig,
    estimator: Estimator,
    perturbation: Perturbation,
}

impl ZerothOrder {
    pub fn new(
        oracle: RolloutOracle,
        radius: f64,
        rollout: RolloutConfig,
        estimator: Estimator,
        perturbation: Perturbation,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!(
                "radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            oracle,
            radius,
            rollout,
            estimator,
            perturbation,
        })
    }

    pub fn oracle(&self) -> &RolloutOracle {
        &self.oracle
    }

    /// Queries `L̂` at `X + rU` and returns `(d/r)·L̂·U` for unit `U`
    /// (equivalently `(d/r²)·L̂·V` with `V = rU`); the two-point variant uses
    /// `(d/2r)·(L̂(X+rU) − L̂(X−rU))·U`. Divergent perturbations are redrawn.
    pub fn estimate<R: Rng + ?Sized>(&self, p: &Policy, rng: &mut R) -> Result<GradientEstimate> {
        let (m, cols) = (p.m(), p.n() + 1);
        let d = (m * cols) as f64;
        let r = self.radius;
        let mut last_err = None;
        for _ in 0..MAX_ATTEMPTS {
            let u = draw_direction(rng, m, cols, self.perturbation);
            let cfg = self.rollout.with_seed(rng.random());
            let plus = match self.oracle.rollout(&p.offset(&u, r), &cfg) {
                Ok(s) => s,
                Err(e @ Error::Divergence { .. }) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            match self.estimator {
                Estimator::OnePoint => {
                    return Ok(GradientEstimate {
                        grad: u * (d / r * plus.l_hat),
                        l_est: plus.l_hat,
                        j_est: plus.j_hat,
                        jc_est: plus.jc_hat,
                    })
                }
                Estimator::TwoPoint => match self.oracle.rollout(&p.offset(&u, -r), &cfg) {
                    Ok(minus) => return Ok(two_point(u, d, r, &plus, &minus)),
                    Err(e @ Error::Divergence { .. }) => last_err = Some(e),
                    Err(e) => return Err(e),
                },
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Numerical("no perturbation attempted".into())))
    }
}

fn two_point(
    u: Mat,
    d: f64,
    r: f64,
    plus: &OracleSample,
    minus: &OracleSample,
) -> GradientEstimate {
    GradientEstimate {
        grad: u * (d / (2.0 * r) * (plus.l_hat - minus.l_hat)),
        l_est: 0.5 * (plus.l_hat + minus.l_hat),
        j_est: 0.5 * (plus.j_hat + minus.j_hat),
        jc_est: 0.5 * (plus.jc_hat + minus.jc_hat),
    }
}

/// `ZerothOrder` with its own seeded random stream.
pub struct SeededEstimator<R> {
    pub estimator: ZerothOrder,
    pub rng: R,
}

impl<R: Rng> GradientSource for SeededEstimator<R> {
    fn estimate(&mut self, p: &Policy) -> Result<GradientEstimate> {
        self.estimator.estimate(p, &mut self.rng)
    }
}

/// One-shot estimate at `p` for the Lagrangian `rl` with noise `noise`.
pub fn zeroth_order_gradient<R: Rng + ?Sized>(
    rl: &RiskLagrangian,
    noise: &NoiseModel,
    p: &Policy,
    radius: f64,
    rollout: &RolloutConfig,
    rng: &mut R,
) -> Result<Mat> {
    let oracle = RolloutOracle::new(rl, noise)?;
    let est = ZerothOrder::new(
        oracle,
        radius,
        rollout.clone(),
        Estimator::OnePoint,
        Perturbation::Sphere,
    )?;
    Ok(est.estimate(p, rng)?.grad)
}

/// A finished or interrupted search: the last certified iterate and its log.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRun {
    pub policy: Policy,
    pub log: IterateLog,
    /// Set when the estimator gave up before `cfg.iterations` steps.
    pub failure: Option<Error>,
}

impl SearchRun {
    /// `Ok((policy, log))`, or the failure wrapped with the last iterate.
    pub fn into_result(self, mu: f64) -> Result<(Policy, IterateLog)> {
        match self.failure {
            None => Ok((self.policy, self.log)),
            Some(cause) => Err(Error::Stopped {
                iteration: self.log.len() + 1,
                mu,
                last: Box::new(self.policy),
                cause: Box::new(cause),
            }),
        }
    }
}

/// Random search with the rollout oracle: `X ← X − η ∇̂L` for `cfg.iterations` steps.
pub fn random_search(
    rl: &RiskLagrangian,
    noise: &NoiseModel,
    p0: &Policy,
    cfg: &RandomSearchConfig,
) -> Result<(Policy, IterateLog)> {
    run_search(rl, noise, p0, cfg)?.into_result(rl.mu())
}

/// Like [`random_search`], but an estimator failure still returns the partial run.
pub fn run_search(
    rl: &RiskLagrangian,
    noise: &NoiseModel,
    p0: &Policy,
    cfg: &RandomSearchConfig,
) -> Result<SearchRun> {
    cfg.validate()?;
    let oracle = RolloutOracle::new(rl, noise)?;
    let estimator = ZerothOrder::new(
        oracle,
        cfg.radius,
        cfg.rollout(),
        cfg.estimator,
        cfg.perturbation,
    )?;
    let diagnostics = if cfg.diagnostics {
        Some(curvature_probe(&estimator, p0, cfg)?)
    } else {
        None
    };
    let mut source = SeededEstimator {
        estimator,
        rng: rng::stream(cfg.seed, &[0]),
    };
    let mut run = descend(rl, p0, cfg, &mut source)?;
    if let Some(beta_hat) = diagnostics {
        run.log.diagnostics = Some(summarize_diagnostics(&run.log, beta_hat, cfg.step));
    }
    Ok(run)
}

/// The descent loop shared by all gradient sources, with the configured
/// safeguard. Errors only on bad input; estimator failures end the run early.
pub fn descend<S: GradientSource>(
    rl: &RiskLagrangian,
    p0: &Policy,
    cfg: &RandomSearchConfig,
    source: &mut S,
) -> Result<SearchRun> {
    cfg.validate()?;
    let sys = rl.sys();
    p0.check_dims(sys)?;
    let radius0 = p0.closed_loop_radius(sys)?;
    if radius0 >= 1.0 {
        return Err(Error::Precondition(format!(
            "initial policy is not stabilizing (spectral radius {radius0:.6})"
        )));
    }
    let sublevel = match cfg.safeguard {
        Safeguard::Sublevel(factor) => {
            let l0 = rl.lagrangian(p0)?;
            let (d, _) = rl.dual_value()?;
            Some((l0, factor * (l0 - d).max(0.0)))
        }
        _ => None,
    };
    let admissible = |p: &Policy| -> bool {
        if !p.k.iter().chain(p.l.iter()).all(|v| v.is_finite()) {
            return false;
        }
        match cfg.safeguard {
            Safeguard::None => true,
            Safeguard::RejectUnstable => p.is_stabilizing(sys).unwrap_or(false),
            Safeguard::Sublevel(_) => {
                let (l0, slack) = sublevel.expect("sublevel bound computed above");
                match rl.lagrangian(p) {
                    Ok(l) => l - l0 <= slack,
                    Err(_) => false,
                }
            }
        }
    };

    let clock = Clock::new(cfg.record_wallclock);
    let mut log = IterateLog::with_capacity(cfg.iterations);
    let mut x = p0.clone();
    for i in 1..=cfg.iterations {
        let est = match source.estimate(&x) {
            Ok(est) => est,
            Err(e) => {
                return Ok(SearchRun {
                    policy: x,
                    log,
                    failure: Some(e),
                })
            }
        };
        let mut eta = cfg.step;
        let mut candidate = x.offset(&est.grad, -eta);
        let mut accepted = matches!(cfg.safeguard, Safeguard::None) || admissible(&candidate);
        let mut halvings = 0;
        while !accepted && halvings < MAX_HALVINGS {
            eta *= 0.5;
            halvings += 1;
            candidate = x.offset(&est.grad, -eta);
            accepted = admissible(&candidate);
        }
        if accepted {
            x = candidate;
        } else {
            eta = 0.0;
        }
        log.push(IterateRecord {
            iter: i,
            mu: rl.mu(),
            l_est: est.l_est,
            j_est: est.j_est,
            jc_est: est.jc_est,
            grad_norm: est.grad.norm(),
            eta_effective: eta,
            wallclock_ms: clock.ms(),
        });
        if cfg.snapshot_every > 0 && i % cfg.snapshot_every == 0 {
            log.snapshots.push(Snapshot {
                iter: i,
                policy: x.clone(),
            });
        }
    }
    Ok(SearchRun {
        policy: x,
        log,
        failure: None,
    })
}

/// Largest symmetric second difference of `L̂` along random unit directions
/// at `p`, with common random numbers and a 10× longer horizon.
fn curvature_probe(est: &ZerothOrder, p: &Policy, cfg: &RandomSearchConfig) -> Result<f64> {
    let mut rng = rng::stream(cfg.seed, &[1]);
    let rollout = RolloutConfig::new(cfg.oracle_horizon * 10, 0).with_burn_in(cfg.oracle_burn_in);
    let h = cfg.radius;
    let (m, cols) = (p.m(), p.n() + 1);
    let mut beta: f64 = 0.0;
    for _ in 0..CURVATURE_PROBES {
        let dir = draw_direction(&mut rng, m, cols, Perturbation::Sphere);
        let run = rollout.with_seed(rng.random());
        let centre = est.oracle().rollout(p, &run)?.l_hat;
        let (Ok(plus), Ok(minus)) = (
            est.oracle().rollout(&p.offset(&dir, h), &run),
            est.oracle().rollout(&p.offset(&dir, -h), &run),
        ) else {
            continue;
        };
        beta = beta.max(((plus.l_hat + minus.l_hat - 2.0 * centre) / (h * h)).abs());
    }
    Ok(beta)
}

fn summarize_diagnostics(log: &IterateLog, beta_hat: f64, step: f64) -> SearchDiagnostics {
    let window = &log.records[..log.records.len().min(DIAGNOSTIC_WINDOW)];
    let g_inf = window.iter().map(|r| r.grad_norm).fold(0.0, f64::max);
    // Norms only: the spread around the mean estimate is bounded by E‖g‖².
    let n = window.len().max(1) as f64;
    let g2 = window
        .iter()
        .map(|r| r.grad_norm * r.grad_norm)
        .sum::<f64>()
        / n;
    let eta_bound = if beta_hat > 0.0 {
        0.5 / beta_hat
    } else {
        f64::INFINITY
    };
    SearchDiagnostics {
        samples: window.len(),
        g_inf,
        g2,
        beta_hat,
        eta_bound,
        eta_exceeds_bound: step > eta_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::uav_benchmark;

    fn setup(mu: f64) -> (RiskLagrangian, NoiseModel, Policy) {
        let (sys, noise, spec, p0) = uav_benchmark();
        (
            RiskLagrangian::new(&sys, &noise, spec, mu).unwrap(),
            noise,
            p0,
        )
    }

    #[test]
    fn directions_have_requested_shape() {
        let mut rng = rng::rng(3);
        for _ in 0..100 {
            let s = draw_direction(&mut rng, 2, 5, Perturbation::Sphere);
            assert!((s.norm() - 1.0).abs() < 1e-12);
            let b = draw_direction(&mut rng, 2, 5, Perturbation::Ball);
            assert!(b.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn estimate_scales_inversely_with_radius() {
        let (rl, noise, p0) = setup(2.0);
        let cfg = RolloutConfig::new(100, 0);
        let oracle = RolloutOracle::new(&rl, &noise).unwrap();
        // Large-horizon readings change little with r, so the magnitude ratio tracks 1/r.
        let small = ZerothOrder::new(
            oracle.clone(),
            0.01,
            cfg.clone(),
            Estimator::OnePoint,
            Perturbation::Sphere,
        )
        .unwrap();
        let large =
            ZerothOrder::new(oracle, 0.02, cfg, Estimator::OnePoint, Perturbation::Sphere).unwrap();
        let a = small.estimate(&p0, &mut rng::rng(9)).unwrap();
        let b = large.estimate(&p0, &mut rng::rng(9)).unwrap();
        let ratio = (a.grad.norm() / a.l_est.abs()) / (b.grad.norm() / b.l_est.abs());
        assert!((ratio - 2.0).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn unstable_start_is_rejected() {
        let (rl, noise, _) = setup(2.0);
        let cfg = RandomSearchConfig {
            iterations: 5,
            ..RandomSearchConfig::default()
        };
        let err = random_search(&rl, &noise, &Policy::zeros(2, 4), &cfg).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn invalid_hyperparameters_are_config_errors() {
        let bad = RandomSearchConfig {
            radius: 0.0,
            ..RandomSearchConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = RandomSearchConfig {
            step: -1.0,
            ..RandomSearchConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn short_run_is_deterministic_and_logged() {
        let (rl, noise, p0) = setup(2.0);
        let cfg = RandomSearchConfig {
            iterations: 200,
            snapshot_every: 50,
            seed: 11,
            ..RandomSearchConfig::default()
        };
        let (a, log_a) = random_search(&rl, &noise, &p0, &cfg).unwrap();
        let (b, log_b) = random_search(&rl, &noise, &p0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.len(), 200);
        assert_eq!(log_a.snapshots.len(), 4);
        assert!(log_a.records.iter().all(|r| r.mu == 2.0));
    }

    #[test]
    fn safeguard_skips_destabilizing_steps() {
        let (rl, noise, p0) = setup(2.0);
        // A step this large destabilizes almost every update.
        let cfg = RandomSearchConfig {
            iterations: 50,
            step: 10.0,
            ..RandomSearchConfig::default()
        };
        let (p, log) = random_search(&rl, &noise, &p0, &cfg).unwrap();
        assert!(p.is_stabilizing(rl.sys()).unwrap());
        assert!(log.records.iter().any(|r| r.eta_effective < cfg.step));
        for snap in &log.snapshots {
            assert!(snap.policy.is_stabilizing(rl.sys()).unwrap());
        }
    }

    #[test]
    fn diagnostics_are_reported() {
        let (rl, noise, p0) = setup(2.0);
        let cfg = RandomSearchConfig {
            iterations: 20,
            diagnostics: true,
            ..RandomSearchConfig::default()
        };
        let (_, log) = random_search(&rl, &noise, &p0, &cfg).unwrap();
        let diag = log.diagnostics.unwrap();
        assert_eq!(diag.samples, 20);
        assert!(diag.g_inf > 0.0 && diag.beta_hat > 0.0);
    }
}
