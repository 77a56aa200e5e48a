//! Risk-constrained linear quadratic regulation: exact policy evaluation,
//! rollout oracles and model-free primal-dual policy optimization.

pub mod analytic;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod rng;

pub use analytic::{DominanceCertificate, PolicyEvaluation, RiskLagrangian};
pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use model::{
    uav_benchmark, LinearSystem, NoiseDistribution, NoiseModel, NoiseOptions, NoiseStats, RiskSpec,
};
pub use oracle::{rollout_cost, OracleSample, RolloutConfig, RolloutOracle};
pub use policy::Policy;
