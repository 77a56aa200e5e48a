//! Zeroth-order random search for the inner problem and the primal-dual
//! outer loop on the multiplier.

mod log;
mod primal_dual;
mod random_search;

pub use log::{IterateLog, IterateRecord, SearchDiagnostics, Snapshot, CSV_HEADER, CSV_SCHEMA};
pub use primal_dual::{
    dual_gap_trace, dual_subgradient, dual_subgradient_exact, primal_dual, secant_step,
    DualGapPoint, DualRecord, InnerSolver, PrimalDualConfig, PrimalDualOutcome, StepSchedule,
    MU_OVERFLOW,
};
pub use random_search::{
    descend, draw_direction, random_search, run_search, zeroth_order_gradient, AnalyticGradient,
    Estimator, GradientEstimate, GradientSource, Perturbation, RandomSearchConfig, Safeguard,
    SearchRun, SeededEstimator, ZerothOrder, MAX_ATTEMPTS, MAX_HALVINGS,
};
