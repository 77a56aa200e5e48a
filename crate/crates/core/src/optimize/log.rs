use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::policy::Policy;

pub const CSV_SCHEMA: &str = "# rclqr iterate log v1";
pub const CSV_HEADER: &str = "iter,mu,L_est,J_est,Jc_est,grad_norm,eta_effective,wallclock_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub mu: f64,
    pub l_est: f64,
    pub j_est: f64,
    pub jc_est: f64,
    pub grad_norm: f64,
    /// Step actually taken; zero when the safeguard rejected the update.
    pub eta_effective: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub iter: usize,
    pub policy: Policy,
}

/// Empirical step-size diagnostics collected over the first iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchDiagnostics {
    pub samples: usize,
    /// Largest gradient-estimate norm seen.
    pub g_inf: f64,
    /// Mean squared deviation of the estimates from their mean.
    pub g2: f64,
    /// Largest curvature from finite-difference probes.
    pub beta_hat: f64,
    pub eta_bound: f64,
    pub eta_exceeds_bound: bool,
}

/// Append-only per-iteration record.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Option<SearchDiagnostics>,
}

impl IterateLog {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            records: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    pub fn push(&mut self, record: IterateRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }

    /// Schema comment, header and one row per record.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 2));
        out.push_str(CSV_SCHEMA);
        out.push('\n');
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                r.mu,
                r.l_est,
                r.j_est,
                r.jc_est,
                r.grad_norm,
                r.eta_effective,
                r.wallclock_ms
            );
        }
        out
    }

    /// Moving average of `L_est` over a trailing window.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.records.len());
        let mut acc = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            acc += r.l_est;
            if i >= window {
                acc -= self.records[i - window].l_est;
            }
            if i + 1 >= window {
                out.push(acc / window as f64);
            }
        }
        out
    }
}

/// Milliseconds since start, or zero when timing is off (keeps logs reproducible).
#[derive(Debug)]
pub(crate) struct Clock(Option<Instant>);

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Self(enabled.then(Instant::now))
    }

    pub(crate) fn ms(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
    }
}
