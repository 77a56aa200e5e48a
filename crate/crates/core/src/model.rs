//! Plant, process noise and risk budget.
//!
//! Noise statistics are always stored in state coordinates. Distributions
//! that act on the input channel (`x⁺ = Ax + B(u + w)`) are mapped through the
//! entry matrix at construction, so every closed-form formula downstream sees
//! a single convention.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::par;
use crate::policy::Policy;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
}

impl LinearSystem {
    /// Validates dimensions, `Q ⪰ 0`, `R ≻ 0` and stabilizability of `(A, B)`.
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !linalg::is_square(&a) {
            return Err(Error::dim(
                "LinearSystem A",
                "non-empty square",
                format!("{:?}", a.shape()),
            ));
        }
        let m = b.ncols();
        if m == 0 || b.nrows() != n {
            return Err(Error::dim(
                "LinearSystem B",
                format!("{n}xm, m >= 1"),
                format!("{:?}", b.shape()),
            ));
        }
        if q.shape() != (n, n) {
            return Err(Error::dim(
                "LinearSystem Q",
                format!("{n}x{n}"),
                format!("{:?}", q.shape()),
            ));
        }
        if r.shape() != (m, m) {
            return Err(Error::dim(
                "LinearSystem R",
                format!("{m}x{m}"),
                format!("{:?}", r.shape()),
            ));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if !linalg::all_finite(mat) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
        }
        if !linalg::is_psd(&q, 1e-12) {
            return Err(Error::Definiteness {
                what: "Q",
                required: "symmetric positive semi-definite",
            });
        }
        if !linalg::is_pd(&r) {
            return Err(Error::Definiteness {
                what: "R",
                required: "symmetric positive definite",
            });
        }
        let q_reg = &q + Mat::identity(n, n) * 1e-9;
        linalg::solve_dare(&a, &b, &q_reg, &r)
            .map_err(|e| Error::Precondition(format!("(A, B) is not stabilizable: {e}")))?;
        Ok(Self {
            a,
            b,
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A − B K`.
    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a - &self.b * k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vector,
    pub cov: Mat,
}

/// Noise law in its native coordinates (state space, or input space when an
/// entry matrix is supplied to [`NoiseModel::new`]).
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDistribution {
    Gaussian { mean: Vector, cov: Mat },
    GaussianMixture { components: Vec<GaussianComponent> },
    Deterministic { value: Vector },
}

impl NoiseDistribution {
    pub fn dim(&self) -> usize {
        match self {
            NoiseDistribution::Gaussian { mean, .. } => mean.len(),
            NoiseDistribution::GaussianMixture { components } => {
                components.first().map_or(0, |c| c.mean.len())
            }
            NoiseDistribution::Deterministic { value } => value.len(),
        }
    }

    /// Every supported law is a finite Gaussian mixture (point masses have zero covariance).
    pub fn components(&self) -> Vec<GaussianComponent> {
        match self {
            NoiseDistribution::Gaussian { mean, cov } => vec![GaussianComponent {
                weight: 1.0,
                mean: mean.clone(),
                cov: cov.clone(),
            }],
            NoiseDistribution::GaussianMixture { components } => components.clone(),
            NoiseDistribution::Deterministic { value } => vec![GaussianComponent {
                weight: 1.0,
                mean: value.clone(),
                cov: Mat::zeros(value.len(), value.len()),
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        let comps = self.components();
        if comps.is_empty() {
            return Err(Error::Config("noise mixture has no components".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("noise dimension is zero".into()));
        }
        let mut total = 0.0;
        for (i, c) in comps.iter().enumerate() {
            if c.mean.len() != d || c.cov.shape() != (d, d) {
                return Err(Error::dim(
                    "noise component",
                    format!("dimension {d}"),
                    format!("component {i}"),
                ));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "noise component {i} has non-positive weight"
                )));
            }
            if !c.mean.iter().all(|v| v.is_finite()) || !linalg::all_finite(&c.cov) {
                return Err(Error::Config(format!(
                    "noise component {i} has non-finite parameters"
                )));
            }
            if !linalg::is_psd(&c.cov, 1e-12) {
                return Err(Error::Definiteness {
                    what: "noise covariance",
                    required: "symmetric positive semi-definite",
                });
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "noise mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Mean `w̄`, covariance `W`, and the `Q`-weighted third- and fourth-order
/// statistics `M₃ = E[e eᵀ Q e]`, `m₄ = E[(eᵀ Q e − tr(WQ))²]` with `e = w − w̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub mean: Vector,
    pub cov: Mat,
    pub m3: Vector,
    pub m4: f64,
}

impl NoiseStats {
    /// Exact moments of a Gaussian mixture (state coordinates) under weight `q`.
    pub fn of_mixture(components: &[GaussianComponent], q: &Mat) -> Self {
        let n = q.nrows();
        let mean = components
            .iter()
            .fold(Vector::zeros(n), |acc, c| acc + &c.mean * c.weight);
        let mut cov = Mat::zeros(n, n);
        let mut m3 = Vector::zeros(n);
        let mut quad_means = Vec::with_capacity(components.len());
        let mut quad_vars = Vec::with_capacity(components.len());
        for c in components {
            let d = &c.mean - &mean;
            let qd = q * &d;
            let qc = q * &c.cov;
            let quad_mean = d.dot(&qd) + qc.trace();
            // Gaussian quadratic form: Var(yᵀQy) = 2tr(QCQC) + 4dᵀQCQd
            let quad_var = 2.0 * (&qc * &qc).trace() + 4.0 * qd.dot(&(&c.cov * &qd));
            cov += (&c.cov + &d * d.transpose()) * c.weight;
            m3 += (&d * quad_mean + &c.cov * &qd * 2.0) * c.weight;
            quad_means.push(quad_mean);
            quad_vars.push(quad_var);
        }
        let trace_wq = (&cov * q).trace();
        let m4 = components
            .iter()
            .zip(quad_means.iter().zip(&quad_vars))
            .map(|(c, (qm, qv))| c.weight * (qv + (qm - trace_wq).powi(2)))
            .sum();
        Self {
            mean,
            cov: linalg::symmetrize(&cov),
            m3,
            m4,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Seeded sampler producing state-space noise vectors.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    latent: usize,
    cumulative: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `dim × latent` factors with `F Fᵀ` the component covariance.
    factors: Vec<Vec<f64>>,
    bound: Option<f64>,
}

impl NoiseSampler {
    fn new(
        components: &[GaussianComponent],
        entry: Option<&Mat>,
        regularization: f64,
        bound: Option<f64>,
    ) -> Self {
        let native = components[0].mean.len();
        let dim = entry.map_or(native, |e| e.nrows());
        let mut cumulative = Vec::with_capacity(components.len());
        let mut means = Vec::with_capacity(components.len());
        let mut factors = Vec::with_capacity(components.len());
        let mut acc = 0.0;
        let latent = if regularization > 0.0 { dim } else { native };
        for c in components {
            acc += c.weight;
            cumulative.push(acc);
            let (mean, factor) = match entry {
                Some(e) => (e * &c.mean, e * linalg::psd_factor(&c.cov)),
                None => (c.mean.clone(), linalg::psd_factor(&c.cov)),
            };
            let factor = if regularization > 0.0 {
                let cov = &factor * factor.transpose() + Mat::identity(dim, dim) * regularization;
                linalg::psd_factor(&cov)
            } else {
                factor
            };
            means.push(mean.iter().copied().collect());
            let mut rows = Vec::with_capacity(dim * latent);
            for i in 0..dim {
                for j in 0..latent {
                    rows.push(factor[(i, j)]);
                }
            }
            factors.push(rows);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            dim,
            latent,
            cumulative,
            means,
            factors,
            bound,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// Writes one draw into `out` (length `dim`). With a bound set, draws are
    /// rejected until `‖w‖ ≤ v`.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        const MAX_REJECTIONS: usize = 1_000_000;
        for _ in 0..MAX_REJECTIONS {
            self.draw(rng, out);
            match self.bound {
                Some(v) if out.iter().map(|x| x * x).sum::<f64>() > v * v => continue,
                _ => return,
            }
        }
        // Acceptance region is numerically empty: project the last draw onto the ball.
        if let Some(v) = self.bound {
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.iter_mut().for_each(|x| *x *= v / norm);
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        Vector::from_vec(out)
    }

    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = if self.cumulative.len() == 1 {
            0
        } else {
            let u: f64 = rng.random();
            self.cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.cumulative.len() - 1)
        };
        let mut z = [0.0f64; 16];
        let mut z_heap;
        let z: &mut [f64] = if self.latent <= z.len() {
            &mut z[..self.latent]
        } else {
            z_heap = vec![0.0; self.latent];
            &mut z_heap
        };
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let mean = &self.means[k];
        let factor = &self.factors[k];
        for i in 0..self.dim {
            let row = &factor[i * self.latent..(i + 1) * self.latent];
            out[i] = mean[i] + row.iter().zip(z.iter()).map(|(f, z)| f * z).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseOptions {
    /// Rejection-truncation radius `v`; unbounded when `None`.
    pub bound: Option<f64>,
    /// Adds `ε·I` to the state covariance (independent Gaussian jitter).
    pub regularization: f64,
    /// Sample count used to re-estimate statistics after truncation.
    pub estimation_samples: usize,
    pub estimation_seed: u64,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        Self {
            bound: None,
            regularization: 0.0,
            estimation_samples: 1_000_000,
            estimation_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    distribution: NoiseDistribution,
    entry: Option<Mat>,
    options: NoiseOptions,
    sampler: NoiseSampler,
    stats: NoiseStats,
}

impl NoiseModel {
    /// Builds a noise model. `entry` maps native noise into the state
    /// (`w_state = entry · w`); `q` is the state weight used by `M₃`, `m₄`.
    pub fn new(
        distribution: NoiseDistribution,
        entry: Option<Mat>,
        q: &Mat,
        options: NoiseOptions,
    ) -> Result<Self> {
        distribution.validate()?;
        let n = q.nrows();
        let native = distribution.dim();
        match &entry {
            Some(e) if e.shape() != (n, native) => {
                return Err(Error::dim(
                    "noise entry matrix",
                    format!("{n}x{native}"),
                    format!("{:?}", e.shape()),
                ));
            }
            None if native != n => {
                return Err(Error::dim("state noise", n, native));
            }
            _ => {}
        }
        if !(options.regularization >= 0.0 && options.regularization.is_finite()) {
            return Err(Error::Config(
                "noise regularization must be non-negative".into(),
            ));
        }
        if let Some(v) = options.bound {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("noise bound must be positive".into()));
            }
        }

        let mut state_components: Vec<GaussianComponent> = distribution
            .components()
            .into_iter()
            .map(|c| match &entry {
                Some(e) => GaussianComponent {
                    weight: c.weight,
                    mean: e * &c.mean,
                    cov: e * &c.cov * e.transpose(),
                },
                None => c,
            })
            .collect();
        if options.regularization > 0.0 {
            for c in &mut state_components {
                c.cov += Mat::identity(n, n) * options.regularization;
            }
        }
        let sampler = NoiseSampler::new(
            &distribution.components(),
            entry.as_ref(),
            options.regularization,
            options.bound,
        );
        let stats = match options.bound {
            None => NoiseStats::of_mixture(&state_components, q),
            Some(_) => estimate_noise_stats(
                &sampler,
                q,
                options.estimation_samples,
                options.estimation_seed,
            )?,
        };
        Ok(Self {
            distribution,
            entry,
            options,
            sampler,
            stats,
        })
    }

    /// Zero noise in `n` state dimensions.
    pub fn zero(n: usize) -> Self {
        let q = Mat::identity(n, n);
        Self::new(
            NoiseDistribution::Deterministic {
                value: Vector::zeros(n),
            },
            None,
            &q,
            NoiseOptions::default(),
        )
        .expect("zero noise is always valid")
    }

    pub fn distribution(&self) -> &NoiseDistribution {
        &self.distribution
    }
    pub fn entry(&self) -> Option<&Mat> {
        self.entry.as_ref()
    }
    pub fn options(&self) -> &NoiseOptions {
        &self.options
    }
    pub fn sampler(&self) -> &NoiseSampler {
        &self.sampler
    }
    pub fn stats(&self) -> &NoiseStats {
        &self.stats
    }

    /// Re-derives the `Q`-dependent statistics for a different weight matrix.
    pub fn reweighted(&self, q: &Mat) -> Result<Self> {
        Self::new(
            self.distribution.clone(),
            self.entry.clone(),
            q,
            self.options,
        )
    }
}

pub const MIN_ESTIMATION_SAMPLES: usize = 10_000;
const ESTIMATION_CHUNK: usize = 1 << 16;

#[derive(Clone)]
struct MomentSums {
    count: usize,
    outer: Mat,
    third: Vector,
    quad: f64,
    quad_sq: f64,
}

/// Monte Carlo estimate of `(w̄, W, M₃, m₄)` from `sample_count` draws.
///
/// Draws are generated in fixed-size chunks, each from its own seed stream,
/// and partial sums are combined in chunk order: the result is bit-identical
/// for a given seed whether or not chunks run in parallel.
pub fn estimate_noise_stats(
    sampler: &NoiseSampler,
    q: &Mat,
    sample_count: usize,
    seed: u64,
) -> Result<NoiseStats> {
    if sample_count < MIN_ESTIMATION_SAMPLES {
        return Err(Error::Config(format!(
            "noise statistics need at least {MIN_ESTIMATION_SAMPLES} samples, got {sample_count}"
        )));
    }
    let n = sampler.dim();
    if q.shape() != (n, n) {
        return Err(Error::dim(
            "estimate_noise_stats Q",
            format!("{n}x{n}"),
            format!("{:?}", q.shape()),
        ));
    }
    let chunks = sample_count.div_ceil(ESTIMATION_CHUNK);
    let chunk_len = |c: usize| ESTIMATION_CHUNK.min(sample_count - c * ESTIMATION_CHUNK);

    let partial_means = par::map_range(chunks, |c| {
        let mut rng = rng::stream(seed, &[c as u64]);
        let mut w = vec![0.0; n];
        let mut sum = Vector::zeros(n);
        for _ in 0..chunk_len(c) {
            sampler.sample_into(&mut rng, &mut w);
            for (s, x) in sum.iter_mut().zip(&w) {
                *s += x;
            }
        }
        sum
    });
    let mean = partial_means
        .iter()
        .fold(Vector::zeros(n), |acc, s| acc + s)
        / sample_count as f64;

    let partials = par::map_range(chunks, |c| {
        let mut rng = rng::stream(seed, &[c as u64]);
        let mut w = vec![0.0; n];
        let mut acc = MomentSums {
            count: 0,
            outer: Mat::zeros(n, n),
            third: Vector::zeros(n),
            quad: 0.0,
            quad_sq: 0.0,
        };
        let mut e = Vector::zeros(n);
        for _ in 0..chunk_len(c) {
            sampler.sample_into(&mut rng, &mut w);
            for i in 0..n {
                e[i] = w[i] - mean[i];
            }
            let s = e.dot(&(q * &e));
            acc.count += 1;
            acc.outer.ger(1.0, &e, &e, 1.0);
            acc.third.axpy(s, &e, 1.0);
            acc.quad += s;
            acc.quad_sq += s * s;
        }
        acc
    });
    let total = sample_count as f64;
    let mut outer = Mat::zeros(n, n);
    let mut third = Vector::zeros(n);
    let (mut quad, mut quad_sq) = (0.0, 0.0);
    for p in &partials {
        outer += &p.outer;
        third += &p.third;
        quad += p.quad;
        quad_sq += p.quad_sq;
        debug_assert!(p.count > 0);
    }
    let cov = linalg::symmetrize(&(outer / total));
    let quad_mean = quad / total;
    // tr(WQ) equals the sample mean of eᵀQe, so m₄ is its sample variance.
    let m4 = (quad_sq / total - quad_mean * quad_mean).max(0.0);
    Ok(NoiseStats {
        mean,
        cov,
        m3: third / total,
        m4,
    })
}

/// Risk tolerance `ρ` of the original variance constraint and the
/// transformed budget `ρ̄ = ρ − m₄ + 4 tr((WQ)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub rho: f64,
    pub rho_bar: f64,
}

impl RiskSpec {
    fn offset(stats: &NoiseStats, q: &Mat) -> f64 {
        let wq = &stats.cov * q;
        4.0 * (&wq * &wq).trace() - stats.m4
    }

    pub fn from_rho(rho: f64, stats: &NoiseStats, q: &Mat) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!(
                "risk tolerance rho must be positive, got {rho}"
            )));
        }
        Ok(Self {
            rho,
            rho_bar: rho + Self::offset(stats, q),
        })
    }

    pub fn from_rho_bar(rho_bar: f64, stats: &NoiseStats, q: &Mat) -> Result<Self> {
        if !rho_bar.is_finite() {
            return Err(Error::Config("rho_bar must be finite".into()));
        }
        let rho = rho_bar - Self::offset(stats, q);
        if rho <= 0.0 {
            return Err(Error::Config(format!(
                "rho_bar = {rho_bar} implies a non-positive risk tolerance rho = {rho}"
            )));
        }
        Ok(Self { rho, rho_bar })
    }
}

/// Planar UAV double integrator with wind gusts on the acceleration input.
pub mod uav {
    use super::*;

    pub fn a() -> Mat {
        Mat::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.5, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
    }

    pub fn b() -> Mat {
        Mat::from_row_slice(4, 2, &[0.125, 0.0, 0.5, 0.0, 0.0, 0.125, 0.0, 0.5])
    }

    pub fn q() -> Mat {
        Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.1, 2.0, 0.2]))
    }

    pub fn r() -> Mat {
        Mat::identity(2, 2)
    }

    /// Gust along x: 0.2·N(3, 30) + 0.8·N(8, 60); across: N(0, 0.01).
    /// Second parameters are variances.
    pub fn gust() -> NoiseDistribution {
        let comp = |weight: f64, mean: f64, var: f64| GaussianComponent {
            weight,
            mean: Vector::from_vec(vec![mean, 0.0]),
            cov: Mat::from_diagonal(&Vector::from_vec(vec![var, 0.01])),
        };
        NoiseDistribution::GaussianMixture {
            components: vec![comp(0.2, 3.0, 30.0), comp(0.8, 8.0, 60.0)],
        }
    }

    pub const RHO_BAR: f64 = 15.0;

    pub fn initial_policy() -> Policy {
        Policy::new(
            Mat::from_row_slice(2, 4, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]),
            Vector::from_vec(vec![-6.0, 0.0]),
        )
    }

    pub fn system() -> LinearSystem {
        LinearSystem::new(a(), b(), q(), r()).expect("UAV model is valid")
    }

    pub fn noise() -> NoiseModel {
        NoiseModel::new(gust(), Some(b()), &q(), NoiseOptions::default())
            .expect("UAV noise is valid")
    }
}

/// The UAV benchmark instance: plant, gust noise, budget `ρ̄ = 15`, and the
/// stabilizing initial policy.
pub fn uav_benchmark() -> (LinearSystem, NoiseModel, RiskSpec, Policy) {
    let sys = uav::system();
    let noise = uav::noise();
    let spec =
        RiskSpec::from_rho_bar(uav::RHO_BAR, noise.stats(), sys.q()).expect("UAV budget is valid");
    (sys, noise, spec, uav::initial_policy())
}
