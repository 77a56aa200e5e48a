//! Exact, model-based evaluation of the risk-weighted Lagrangian
//!
//! `L(X, μ) = J(X) + μ (J_c(X) − ρ̄)`
//!
//! through the stationary statistics of the closed loop: `Σ_K`, the relative
//! value function `V(x) = xᵀ P_K x + gᵀ x`, the correlation matrix
//! `Φ = E[[x; −1][x; −1]ᵀ]`, and the gradient blocks `E_K`, `G_{K,l}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{LinearSystem, NoiseModel, NoiseStats, RiskSpec};
use crate::policy::Policy;

/// Lagrangian of the risk-constrained problem at a fixed multiplier.
#[derive(Debug, Clone)]
pub struct RiskLagrangian {
    sys: LinearSystem,
    stats: NoiseStats,
    spec: RiskSpec,
    mu: f64,
    /// `Q_μ = Q + 4μ Q W Q`
    q_mu: Mat,
    /// `S = 2μ Q M₃`
    s: Vector,
    /// `Q W Q`, the quadratic weight of the risk term.
    qwq: Mat,
    /// `Q M₃`
    qm3: Vector,
}

impl RiskLagrangian {
    pub fn new(sys: &LinearSystem, noise: &NoiseModel, spec: RiskSpec, mu: f64) -> Result<Self> {
        Self::from_stats(sys, noise.stats().clone(), spec, mu)
    }

    pub fn from_stats(
        sys: &LinearSystem,
        stats: NoiseStats,
        spec: RiskSpec,
        mu: f64,
    ) -> Result<Self> {
        if stats.dim() != sys.n() {
            return Err(Error::dim("noise statistics", sys.n(), stats.dim()));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!(
                "multiplier must be finite and non-negative, got {mu}"
            )));
        }
        let q = sys.q();
        let qwq = linalg::symmetrize(&(q * &stats.cov * q));
        let qm3 = q * &stats.m3;
        Ok(Self {
            q_mu: q + &qwq * (4.0 * mu),
            s: &qm3 * (2.0 * mu),
            sys: sys.clone(),
            stats,
            spec,
            mu,
            qwq,
            qm3,
        })
    }

    /// Same problem at another multiplier.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::from_stats(&self.sys, self.stats.clone(), self.spec, mu)
    }

    pub fn sys(&self) -> &LinearSystem {
        &self.sys
    }
    pub fn stats(&self) -> &NoiseStats {
        &self.stats
    }
    pub fn spec(&self) -> &RiskSpec {
        &self.spec
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn rho_bar(&self) -> f64 {
        self.spec.rho_bar
    }
    pub fn q_mu(&self) -> &Mat {
        &self.q_mu
    }
    pub fn s(&self) -> &Vector {
        &self.s
    }
    pub fn qwq(&self) -> &Mat {
        &self.qwq
    }
    pub fn qm3(&self) -> &Vector {
        &self.qm3
    }

    /// Per-step reshaped cost `c_μ(x, u) = xᵀQ_μx + 2xᵀS + uᵀRu − μρ̄`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q_mu * x)) + 2.0 * x.dot(&self.s) + u.dot(&(self.sys.r() * u))
            - self.mu * self.spec.rho_bar
    }

    /// Closed-form evaluation of a stabilizing policy.
    pub fn evaluate(&self, p: &Policy) -> Result<PolicyEvaluation> {
        p.check_dims(&self.sys)?;
        let sys = &self.sys;
        let (a, b, r) = (sys.a(), sys.b(), sys.r());
        let n = sys.n();
        let (k, l) = (&p.k, &p.l);
        let acl = sys.closed_loop(k);
        let radius = linalg::spectral_radius(&acl)?;
        if radius >= 1.0 {
            return Err(Error::Unstable { radius });
        }

        let w = &self.stats.cov;
        let wbar = &self.stats.mean;
        let sigma = linalg::solve_discrete_lyapunov(&acl, w)?;
        let q_k = &self.q_mu + k.transpose() * r * k;
        let p_mat = linalg::solve_discrete_lyapunov(&acl.transpose(), &q_k)?;

        let v = linalg::inverse(&(Mat::identity(n, n) - &acl))?;
        let drive = b * l + wbar;
        let xbar = &v * &drive;

        let bt = b.transpose();
        let h = r + &bt * &p_mat * b;
        let e = &h * k - &bt * &p_mat * a;
        let g =
            v.transpose() * (-e.transpose() * l + &self.s + acl.transpose() * &p_mat * wbar) * 2.0;
        let g_blk = &h * l + &bt * &p_mat * wbar + &bt * &g * 0.5;

        let second = &sigma + &xbar * xbar.transpose();
        let mut phi = Mat::zeros(n + 1, n + 1);
        phi.view_mut((0, 0), (n, n)).copy_from(&second);
        for i in 0..n {
            phi[(i, n)] = -xbar[i];
            phi[(n, i)] = -xbar[i];
        }
        phi[(n, n)] = 1.0;

        let l_value =
            (&p_mat * (w + &drive * drive.transpose())).trace() + g.dot(&drive) + l.dot(&(r * l))
                - self.mu * self.spec.rho_bar;
        let rk = r * k;
        let j_value = ((sys.q() + k.transpose() * &rk) * &second).trace()
            - 2.0 * l.dot(&(&rk * &xbar))
            + l.dot(&(r * l));
        let jc_value = 4.0 * (&self.qwq * &second).trace() + 4.0 * xbar.dot(&self.qm3);

        let mut blocks = Mat::zeros(sys.m(), n + 1);
        blocks.view_mut((0, 0), (sys.m(), n)).copy_from(&e);
        blocks.set_column(n, &g_blk);
        let grad = &blocks * &phi * 2.0;

        Ok(PolicyEvaluation {
            p: p_mat,
            sigma,
            xbar,
            g,
            e,
            g_blk,
            h,
            phi,
            v,
            l_value,
            j_value,
            jc_value,
            grad,
            radius,
        })
    }

    /// The stationary-distribution form of the Lagrangian,
    /// `tr(Q_K(Σ + x̄x̄ᵀ)) + (2S − 2KᵀRl)ᵀx̄ + lᵀRl − μρ̄`, computed from the
    /// statistics of an evaluation but independently of `P_K` and `g`.
    pub fn lagrangian_stationary_form(&self, p: &Policy, ev: &PolicyEvaluation) -> f64 {
        let r = self.sys.r();
        let q_k = &self.q_mu + p.k.transpose() * r * &p.k;
        let second = &ev.sigma + &ev.xbar * ev.xbar.transpose();
        (q_k * second).trace()
            + (&self.s * 2.0 - p.k.transpose() * r * &p.l * 2.0).dot(&ev.xbar)
            + p.l.dot(&(r * &p.l))
            - self.mu * self.spec.rho_bar
    }

    /// `∇_X L = 2 [E_K  G_{K,l}] Φ_{K,l}`.
    pub fn gradient(&self, p: &Policy) -> Result<Mat> {
        Ok(self.evaluate(p)?.grad)
    }

    pub fn lagrangian(&self, p: &Policy) -> Result<f64> {
        Ok(self.evaluate(p)?.l_value)
    }

    /// Unique zero of the gradient: `K* = (R + BᵀP*B)⁻¹BᵀP*A` with `P*` the
    /// Riccati solution for `Q_μ`, and `l* = −(R + BᵀP*B)⁻¹BᵀVᵀ(P*w̄ + S)`.
    pub fn stationary_point(&self) -> Result<Policy> {
        let sys = &self.sys;
        let (a, b, r) = (sys.a(), sys.b(), sys.r());
        let p_star = linalg::solve_dare(a, b, &self.q_mu, r)?;
        let k = linalg::riccati_gain(&p_star, a, b, r)?;
        let n = sys.n();
        let v = linalg::inverse(&(Mat::identity(n, n) - sys.closed_loop(&k)))?;
        let h = r + b.transpose() * &p_star * b;
        let rhs = b.transpose() * v.transpose() * (&p_star * &self.stats.mean + &self.s);
        let l = -linalg::solve(&h, &Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()))?
            .column(0)
            .into_owned();
        Ok(Policy::new(k, l))
    }

    /// `D(μ) = min_X L(X, μ)`, attained at the stationary point.
    pub fn dual_value(&self) -> Result<(f64, Policy)> {
        let p = self.stationary_point()?;
        let l = self.evaluate(&p)?.l_value;
        Ok((l, p))
    }

    /// Relative value function `V(x) = xᵀP_Kx + g_{K,l}ᵀx` (additive constant fixed at zero).
    pub fn value_function(&self, p: &Policy, x: &Vector) -> Result<f64> {
        let ev = self.evaluate(p)?;
        Ok(ev.value_at(x))
    }

    /// Advantage of switching from `base` to `probe` for one step at state `x`,
    /// then following `base`.
    pub fn advantage(&self, base: &Policy, probe: &Policy, x: &Vector) -> Result<f64> {
        let ev = self.evaluate(base)?;
        probe.check_dims(&self.sys)?;
        Ok(ev.advantage(base, probe, x))
    }

    /// Local gradient-dominance diagnostic over a list of stabilizing policies.
    ///
    /// `λ̂ = ‖Φ*‖₂ / (4 σ_min(R) φ̂²)` with `φ̂ = min σ_min(Φ_{K,l})` over the
    /// list; each policy is then checked against `L − D ≤ λ̂ ‖∇L‖_F²`.
    pub fn gradient_dominance_certificate(
        &self,
        policies: &[Policy],
    ) -> Result<DominanceCertificate> {
        if policies.is_empty() {
            return Err(Error::Config(
                "gradient dominance needs at least one policy".into(),
            ));
        }
        let (d, star) = self.dual_value()?;
        let phi_star = self.evaluate(&star)?.phi;
        let phi_star_norm = linalg::spectral_norm(&phi_star);
        let sigma_r = linalg::min_eigenvalue(self.sys.r());
        let evals = policies
            .iter()
            .map(|p| self.evaluate(p))
            .collect::<Result<Vec<_>>>()?;
        let phi_min = evals
            .iter()
            .map(|e| linalg::min_eigenvalue(&e.phi))
            .fold(f64::INFINITY, f64::min);
        let lambda = phi_star_norm / (4.0 * sigma_r * phi_min * phi_min);
        let checks = evals
            .iter()
            .map(|e| {
                let gap = e.l_value - d;
                let bound = lambda * e.grad.norm_squared();
                DominanceCheck { gap, bound }
            })
            .collect();
        Ok(DominanceCertificate {
            lambda,
            phi_min,
            phi_star_norm,
            dual_value: d,
            checks,
        })
    }
}

/// Everything the closed forms produce for one policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyEvaluation {
    /// `P_K`, solving `P = Q_μ + KᵀRK + (A−BK)ᵀP(A−BK)`.
    pub p: Mat,
    /// `Σ_K`, solving `Σ = W + (A−BK)Σ(A−BK)ᵀ`.
    pub sigma: Mat,
    /// Stationary mean `x̄ = (A−BK)x̄ + Bl + w̄`.
    pub xbar: Vector,
    /// Linear coefficient of the value function.
    pub g: Vector,
    /// `E_K = (R + BᵀP_KB)K − BᵀP_KA`.
    pub e: Mat,
    /// `G_{K,l} = (R + BᵀP_KB)l + BᵀP_Kw̄ + ½Bᵀg`.
    pub g_blk: Vector,
    /// `R + BᵀP_KB`.
    pub h: Mat,
    pub phi: Mat,
    /// `(I − (A−BK))⁻¹`.
    pub v: Mat,
    pub l_value: f64,
    pub j_value: f64,
    pub jc_value: f64,
    pub grad: Mat,
    /// `ρ(A − BK)`.
    pub radius: f64,
}

impl PolicyEvaluation {
    pub fn value_at(&self, x: &Vector) -> f64 {
        x.dot(&(&self.p * x)) + self.g.dot(x)
    }

    /// Closed-form advantage `A_{K,l}(x, −K′x + l′)` where this evaluation belongs to `base = (K, l)`.
    pub fn advantage(&self, base: &Policy, probe: &Policy, x: &Vector) -> f64 {
        let dk = &probe.k - &base.k;
        let dl = &probe.l - &base.l;
        let dkx = &dk * x;
        let ex = &self.e * x;
        let h = &self.h;
        2.0 * dkx.dot(&ex) + dkx.dot(&(h * &dkx))
            - 2.0 * self.g_blk.dot(&dkx)
            - 2.0 * dl.dot(&(h * &dkx))
            - 2.0 * dl.dot(&ex)
            + 2.0 * dl.dot(&self.g_blk)
            + dl.dot(&(h * &dl))
    }

    /// `[E_K  G_{K,l}]`.
    pub fn blocks(&self) -> Mat {
        let (m, n) = self.e.shape();
        let mut blocks = Mat::zeros(m, n + 1);
        blocks.view_mut((0, 0), (m, n)).copy_from(&self.e);
        blocks.set_column(n, &self.g_blk);
        blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceCheck {
    /// `L(X, μ) − D(μ)`
    pub gap: f64,
    /// `λ̂ ‖∇L‖_F²`
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceCertificate {
    pub lambda: f64,
    pub phi_min: f64,
    pub phi_star_norm: f64,
    pub dual_value: f64,
    pub checks: Vec<DominanceCheck>,
}

impl DominanceCertificate {
    /// Every listed policy satisfies the inequality up to `slack` (absolute).
    pub fn holds(&self, slack: f64) -> bool {
        self.checks.iter().all(|c| c.gap <= c.bound + slack)
    }
}
