//! Model-free cost oracle: seeded closed-loop rollouts that return the
//! time-averaged Lagrangian `L̂(X, μ)` and risk cost `Ĵ_c(X)`.

use serde::{Deserialize, Serialize};

use crate::analytic::RiskLagrangian;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{NoiseModel, NoiseSampler};
use crate::policy::Policy;
use crate::rng;

pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Number of averaged steps `T`.
    pub horizon: usize,
    /// Steps simulated and discarded before averaging.
    #[serde(default)]
    pub burn_in: usize,
    /// Initial state; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_guard")]
    pub divergence_guard: f64,
}

fn default_guard() -> f64 {
    DEFAULT_DIVERGENCE_GUARD
}

impl RolloutConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: 0,
            x0: None,
            seed,
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("rollout horizon must be at least 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(Error::dim("rollout x0", n, x0.len()));
            }
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::Config("divergence guard must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSample {
    /// Time-averaged `c_μ(x_t, u_t)`.
    pub l_hat: f64,
    /// Time-averaged `4xᵀQWQx + 4xᵀQM₃`.
    pub jc_hat: f64,
    /// Time-averaged `xᵀQx + uᵀRu`.
    pub j_hat: f64,
    pub trajectory_len: usize,
}

/// One simulated step, for trajectory dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
}

/// Flat, allocation-free simulator for one Lagrangian.
#[derive(Debug, Clone)]
pub struct RolloutOracle {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    qwq: Vec<f64>,
    qm3: Vec<f64>,
    mu: f64,
    rho_bar: f64,
    sampler: NoiseSampler,
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[inline]
fn quad(mat: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row = &mat[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += row[j] * x[j];
        }
        acc += x[i] * s;
    }
    acc
}

impl RolloutOracle {
    pub fn new(rl: &RiskLagrangian, noise: &NoiseModel) -> Result<Self> {
        let sys = rl.sys();
        if noise.sampler().dim() != sys.n() {
            return Err(Error::dim("rollout noise", sys.n(), noise.sampler().dim()));
        }
        Ok(Self {
            n: sys.n(),
            m: sys.m(),
            a: row_major(sys.a()),
            b: row_major(sys.b()),
            q: row_major(sys.q()),
            r: row_major(sys.r()),
            qwq: row_major(rl.qwq()),
            qm3: rl.qm3().iter().copied().collect(),
            mu: rl.mu(),
            rho_bar: rl.rho_bar(),
            sampler: noise.sampler().clone(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Same plant and noise at another multiplier.
    pub fn with_mu(&self, mu: f64) -> Self {
        Self { mu, ..self.clone() }
    }

    pub fn rollout(&self, p: &Policy, cfg: &RolloutConfig) -> Result<OracleSample> {
        self.simulate(p, cfg, None)
    }

    pub fn rollout_trace(
        &self,
        p: &Policy,
        cfg: &RolloutConfig,
    ) -> Result<(OracleSample, Vec<TraceRow>)> {
        let mut rows = Vec::with_capacity(cfg.burn_in + cfg.horizon);
        let sample = self.simulate(p, cfg, Some(&mut rows))?;
        Ok((sample, rows))
    }

    fn simulate(
        &self,
        p: &Policy,
        cfg: &RolloutConfig,
        mut trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<OracleSample> {
        let (n, m) = (self.n, self.m);
        cfg.validate(n)?;
        if p.k.shape() != (m, n) || p.l.len() != m {
            return Err(Error::dim(
                "rollout policy",
                format!("K {m}x{n}"),
                format!("K {:?}", p.k.shape()),
            ));
        }
        let k = row_major(&p.k);
        let l: Vec<f64> = p.l.iter().copied().collect();
        let mut rng = rng::rng(cfg.seed);
        let mut x = cfg.x0.clone().unwrap_or_else(|| vec![0.0; n]);
        let mut next = vec![0.0; n];
        let mut u = vec![0.0; m];
        let mut w = vec![0.0; n];
        let guard_sq = cfg.divergence_guard * cfg.divergence_guard;

        let (mut sum_j, mut sum_jc) = (0.0, 0.0);
        let total = cfg.burn_in + cfg.horizon;
        for t in 0..total {
            for i in 0..m {
                let row = &k[i * n..(i + 1) * n];
                u[i] = l[i] - row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            if t >= cfg.burn_in || trace.is_some() {
                let j_step = quad(&self.q, &x) + quad(&self.r, &u);
                let jc_step = 4.0 * quad(&self.qwq, &x)
                    + 4.0 * self.qm3.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                if t >= cfg.burn_in {
                    sum_j += j_step;
                    sum_jc += jc_step;
                }
                if let Some(rows) = trace.as_deref_mut() {
                    rows.push(TraceRow {
                        t,
                        x: x.clone(),
                        u: u.clone(),
                        cost: j_step + self.mu * (jc_step - self.rho_bar),
                    });
                }
            }
            self.sampler.sample_into(&mut rng, &mut w);
            let mut norm_sq = 0.0;
            for i in 0..n {
                let arow = &self.a[i * n..(i + 1) * n];
                let brow = &self.b[i * m..(i + 1) * m];
                let mut v = w[i];
                for j in 0..n {
                    v += arow[j] * x[j];
                }
                for j in 0..m {
                    v += brow[j] * u[j];
                }
                next[i] = v;
                norm_sq += v * v;
            }
            if !(norm_sq <= guard_sq) {
                return Err(Error::Divergence {
                    step: t + 1,
                    norm: norm_sq.sqrt(),
                });
            }
            std::mem::swap(&mut x, &mut next);
        }
        let horizon = cfg.horizon as f64;
        let j_hat = sum_j / horizon;
        let jc_hat = sum_jc / horizon;
        Ok(OracleSample {
            l_hat: j_hat + self.mu * (jc_hat - self.rho_bar),
            jc_hat,
            j_hat,
            trajectory_len: cfg.horizon,
        })
    }
}

/// One-shot rollout: builds the oracle for `rl` and `noise` and simulates `p`.
pub fn rollout_cost(
    rl: &RiskLagrangian,
    noise: &NoiseModel,
    p: &Policy,
    cfg: &RolloutConfig,
) -> Result<OracleSample> {
    RolloutOracle::new(rl, noise)?.rollout(p, cfg)
}

/// `x0` as a vector, or the origin.
pub fn initial_state(cfg: &RolloutConfig, n: usize) -> Vector {
    cfg.x0
        .as_ref()
        .map_or_else(|| Vector::zeros(n), |v| Vector::from_column_slice(v))
}
