//! TOML run configuration. Every table rejects unknown keys.

use std::path::Path;

use rclqr::linalg::{Mat, Vector};
use rclqr::model::{uav, GaussianComponent, NoiseDistribution, NoiseOptions};
use rclqr::optimize::{InnerSolver, PrimalDualConfig, RandomSearchConfig, StepSchedule};
use rclqr::{LinearSystem, NoiseModel, Policy, RiskSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub noise: NoiseSection,
    pub risk: RiskSection,
    pub initial_policy: PolicySection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub solve_exact: SolveExactSection,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default = "default_primal_dual")]
    pub primal_dual: PrimalDualConfig,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    GaussianMixture,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentSection>>,
    /// Noise is an input disturbance: `x⁺ = Ax + B(u + w)`.
    #[serde(default, rename = "enters_via_B")]
    pub enters_via_b: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default)]
    pub regularization: f64,
    #[serde(default = "default_estimation_samples")]
    pub estimation_samples: usize,
    #[serde(default)]
    pub estimation_seed: u64,
}

fn default_estimation_samples() -> usize {
    NoiseOptions::default().estimation_samples
}

/// Exactly one of `rho` (raw fourth-moment budget) or `rho_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(rename = "K")]
    pub k: Rows,
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Multiplier for the Bellman, advantage and dominance checks.
    pub mu: f64,
    pub seed: u64,
    pub policies: usize,
    pub states: usize,
    pub pairs: usize,
    pub dominance_samples: usize,
    pub gradient_policies: usize,
    pub mu_grid_max: f64,
    pub mu_grid_step: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            mu: 2.0,
            seed: 0,
            policies: 20,
            states: 100,
            pairs: 50,
            dominance_samples: 50,
            gradient_policies: 20,
            mu_grid_max: 10.0,
            mu_grid_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveExactSection {
    pub max_iters: usize,
    pub tolerance: f64,
    /// Constant dual step; calibrated from a secant slope at `mu_init` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub mu_init: f64,
}

impl Default for SolveExactSection {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tolerance: 1e-11,
            step: None,
            mu_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub mu: f64,
    /// Iterations between exact evaluations for the error curves.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub search: RandomSearchConfig,
}

fn default_eval_every() -> usize {
    1000
}

impl Default for LearnSection {
    fn default() -> Self {
        Self {
            mu: 2.0,
            eval_every: default_eval_every(),
            search: RandomSearchConfig::default(),
        }
    }
}

fn default_primal_dual() -> PrimalDualConfig {
    PrimalDualConfig {
        outer_iters: 200,
        step_schedule: StepSchedule::default(),
        inner: InnerSolver::RandomSearch(RandomSearchConfig {
            iterations: 1000,
            ..RandomSearchConfig::default()
        }),
        ..PrimalDualConfig::exact(200)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatedPolicy {
    Initial,
    /// The stationary point `X*(μ)`.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub mu: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub policy: SimulatedPolicy,
    pub trajectory: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mu: 2.0,
            horizon: 10_000,
            burn_in: 0,
            policy: SimulatedPolicy::Initial,
            trajectory: true,
        }
    }
}

/// A config with its model objects built and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub sys: LinearSystem,
    pub noise: NoiseModel,
    pub spec: RiskSpec,
    pub p0: Policy,
}

pub fn matrix(name: &str, rows: &Rows) -> Result<Mat, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(CliError::Config(format!(
            "{name} must be a non-empty list of rows"
        )));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "{name} row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn rows(m: &Mat) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl NoiseSection {
    fn distribution(&self) -> Result<NoiseDistribution, CliError> {
        let extra = |field: &str, present: bool| -> Result<(), CliError> {
            if present {
                Err(CliError::Config(format!(
                    "noise.{field} is not used by kind {:?}",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let missing = |field: &str| {
            CliError::Config(format!(
                "noise.{field} is required for kind {:?}",
                self.kind
            ))
        };
        match self.kind {
            NoiseKind::Gaussian => {
                extra("value", self.value.is_some())?;
                extra("components", self.components.is_some())?;
                let mean = self.mean.as_ref().ok_or_else(|| missing("mean"))?;
                let cov = self.cov.as_ref().ok_or_else(|| missing("cov"))?;
                Ok(NoiseDistribution::Gaussian {
                    mean: Vector::from_column_slice(mean),
                    cov: matrix("noise.cov", cov)?,
                })
            }
            NoiseKind::GaussianMixture => {
                extra("mean", self.mean.is_some())?;
                extra("cov", self.cov.is_some())?;
                extra("value", self.value.is_some())?;
                let comps = self
                    .components
                    .as_ref()
                    .ok_or_else(|| missing("components"))?;
                let components = comps
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        Ok(GaussianComponent {
                            weight: c.weight,
                            mean: Vector::from_column_slice(&c.mean),
                            cov: matrix(&format!("noise.components[{i}].cov"), &c.cov)?,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                Ok(NoiseDistribution::GaussianMixture { components })
            }
            NoiseKind::Deterministic => {
                extra("mean", self.mean.is_some())?;
                extra("cov", self.cov.is_some())?;
                extra("components", self.components.is_some())?;
                let value = self.value.as_ref().ok_or_else(|| missing("value"))?;
                Ok(NoiseDistribution::Deterministic {
                    value: Vector::from_column_slice(value),
                })
            }
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The UAV benchmark with the default experiment settings.
    pub fn uav() -> Self {
        let gust = match uav::gust() {
            NoiseDistribution::GaussianMixture { components } => components,
            _ => unreachable!("the gust model is a mixture"),
        };
        let p0 = uav::initial_policy();
        Config {
            system: SystemSection {
                a: rows(&uav::a()),
                b: rows(&uav::b()),
                q: rows(&uav::q()),
                r: rows(&uav::r()),
            },
            noise: NoiseSection {
                kind: NoiseKind::GaussianMixture,
                mean: None,
                cov: None,
                value: None,
                components: Some(
                    gust.iter()
                        .map(|c| ComponentSection {
                            weight: c.weight,
                            mean: c.mean.iter().copied().collect(),
                            cov: rows(&c.cov),
                        })
                        .collect(),
                ),
                enters_via_b: true,
                bound: None,
                regularization: 0.0,
                estimation_samples: default_estimation_samples(),
                estimation_seed: 0,
            },
            risk: RiskSection {
                rho: None,
                rho_bar: Some(uav::RHO_BAR),
            },
            initial_policy: PolicySection {
                k: rows(&p0.k),
                l: p0.l.iter().copied().collect(),
            },
            check: CheckSection::default(),
            solve_exact: SolveExactSection::default(),
            learn: LearnSection::default(),
            primal_dual: default_primal_dual(),
            simulate: SimulateSection::default(),
        }
    }

    pub fn resolve(self) -> Result<Resolved, CliError> {
        let sys = LinearSystem::new(
            matrix("system.A", &self.system.a)?,
            matrix("system.B", &self.system.b)?,
            matrix("system.Q", &self.system.q)?,
            matrix("system.R", &self.system.r)?,
        )
        .map_err(CliError::config)?;
        let ns = &self.noise;
        let entry = ns.enters_via_b.then(|| sys.b().clone());
        let options = NoiseOptions {
            bound: ns.bound,
            regularization: ns.regularization,
            estimation_samples: ns.estimation_samples,
            estimation_seed: ns.estimation_seed,
        };
        let noise = NoiseModel::new(ns.distribution()?, entry, sys.q(), options)
            .map_err(CliError::config)?;
        let spec = match (self.risk.rho, self.risk.rho_bar) {
            (Some(rho), None) => RiskSpec::from_rho(rho, noise.stats(), sys.q()),
            (None, Some(rho_bar)) => RiskSpec::from_rho_bar(rho_bar, noise.stats(), sys.q()),
            _ => {
                return Err(CliError::Config(
                    "risk needs exactly one of rho or rho_bar".into(),
                ))
            }
        }
        .map_err(CliError::config)?;
        let k = matrix("initial_policy.K", &self.initial_policy.k)?;
        if k.nrows() != self.initial_policy.l.len() {
            return Err(CliError::Config(format!(
                "initial_policy.K has {} rows but l has {} entries",
                k.nrows(),
                self.initial_policy.l.len()
            )));
        }
        let p0 = Policy::new(k, Vector::from_column_slice(&self.initial_policy.l));
        p0.check_dims(&sys).map_err(CliError::config)?;
        self.primal_dual.validate().map_err(CliError::config)?;
        self.learn.search.validate().map_err(CliError::config)?;
        if !(self.learn.mu >= 0.0) || !(self.simulate.mu >= 0.0) || !(self.check.mu >= 0.0) {
            return Err(CliError::Config("multipliers must be nonnegative".into()));
        }
        if self.simulate.horizon == 0 {
            return Err(CliError::Config(
                "simulate.horizon must be at least 1".into(),
            ));
        }
        if !(self.check.mu_grid_step > 0.0) {
            return Err(CliError::Config(
                "check.mu_grid_step must be positive".into(),
            ));
        }
        Ok(Resolved {
            config: self,
            sys,
            noise,
            spec,
            p0,
        })
    }
}
