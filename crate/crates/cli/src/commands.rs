use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rclqr::optimize::{
    primal_dual, run_search, secant_step, InnerSolver, IterateLog, PrimalDualConfig,
    RandomSearchConfig, StepSchedule,
};
use rclqr::oracle::{RolloutConfig, RolloutOracle};
use rclqr::{par, Policy, RiskLagrangian};
use serde::Serialize;

use crate::config::{rows, Config, Resolved, Rows, SimulatedPolicy};
use crate::stats::{push_long_rows, summarize, Summary};
use crate::verify::{run_checks, CheckLine};
use crate::{parse_seeds, Cli, CliError, Command};

const DEFAULT_SEEDS: &str = "20";
/// Multiplier used to approximate `inf_X J_c(X)` when reporting infeasibility.
const RISK_FLOOR_MU: f64 = 1e6;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyOut {
    #[serde(rename = "K")]
    pub k: Rows,
    pub l: Vec<f64>,
}

impl From<&Policy> for PolicyOut {
    fn from(p: &Policy) -> Self {
        Self {
            k: rows(&p.k),
            l: p.l.iter().copied().collect(),
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::uav(),
    };
    if cli.wallclock {
        config.learn.search.record_wallclock = true;
        config.primal_dual.record_wallclock = true;
        if let InnerSolver::RandomSearch(rs) = &mut config.primal_dual.inner {
            rs.record_wallclock = true;
        }
    }
    if cli.exact {
        config.primal_dual.inner = InnerSolver::Exact;
    } else if cli.model_free && matches!(config.primal_dual.inner, InnerSolver::Exact) {
        config.primal_dual.inner = InnerSolver::RandomSearch(RandomSearchConfig {
            iterations: 1000,
            ..RandomSearchConfig::default()
        });
    }
    let res = config.resolve()?;
    let seeds = parse_seeds(cli.seeds.as_deref().unwrap_or(DEFAULT_SEEDS))?;
    fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    write_file(&cli.out, "config.toml", &res.config.to_toml())?;
    let out = cli.out.as_path();
    par::with_workers(cli.workers, || match cli.command {
        Command::Check => cmd_check(&res, out),
        Command::SolveExact => cmd_solve_exact(&res, out),
        Command::Learn => cmd_learn(&res, &seeds, out),
        Command::PrimalDual => cmd_primal_dual(&res, &seeds, out),
        Command::Simulate => cmd_simulate(&res, &seeds, out),
    })
}

pub fn cmd_check(res: &Resolved, out: &Path) -> Result<(), CliError> {
    let lines = run_checks(res)?;
    for line in &lines {
        println!("{}", line.render());
    }
    write_file(out, "check.json", &to_json(&lines))?;
    let failed: Vec<&CheckLine> = lines.iter().filter(|l| !l.passed).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(format!(
            "{} check(s) failed: {}",
            failed.len(),
            failed
                .iter()
                .map(|l| l.name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactSolution {
    pub policy: PolicyOut,
    pub mu: f64,
    pub mu_bar: f64,
    pub j: f64,
    pub jc: f64,
    pub dual_value: f64,
    /// `|J(X) − D(μ)| / |D(μ)|`
    pub duality_gap: f64,
    /// `|μ (J_c(X) − ρ̄)|`
    pub slackness: f64,
    pub slackness_tol: f64,
    pub converged: bool,
    pub iterations: usize,
    pub step: f64,
    pub rho: f64,
    pub rho_bar: f64,
    /// `J_c(X*(μ))` at a very large multiplier: about the least attainable risk.
    pub risk_floor: f64,
    #[serde(skip)]
    pub optimal: Policy,
    #[serde(skip)]
    pub log: IterateLog,
}

impl ExactSolution {
    pub fn within_tolerance(&self) -> bool {
        self.converged && self.duality_gap <= 1e-6 && self.slackness <= self.slackness_tol
    }
}

fn risk_floor(base: &RiskLagrangian) -> f64 {
    base.with_mu(RISK_FLOOR_MU)
        .and_then(|rl| {
            let x = rl.stationary_point()?;
            Ok(rl.evaluate(&x)?.jc_value)
        })
        .unwrap_or(f64::NAN)
}

/// Exact primal-dual with a constant, secant-calibrated dual step.
pub fn solve_exact(res: &Resolved) -> Result<ExactSolution, CliError> {
    let section = &res.config.solve_exact;
    let base = RiskLagrangian::new(&res.sys, &res.noise, res.spec, section.mu_init)?;
    let step = match section.step {
        Some(xi) => xi,
        None => secant_step(&base, section.mu_init)?,
    };
    let cfg = PrimalDualConfig {
        mu_init: section.mu_init,
        step_schedule: StepSchedule::Constant { xi: step },
        tolerance: Some(section.tolerance),
        ..PrimalDualConfig::exact(section.max_iters)
    };
    let outcome = primal_dual(&res.sys, &res.noise, res.spec, &cfg, &res.p0)?;
    let at = base.with_mu(outcome.mu)?;
    let ev = at.evaluate(&outcome.policy)?;
    let dual_value = ev.l_value;
    let rho_bar = res.spec.rho_bar;
    Ok(ExactSolution {
        policy: PolicyOut::from(&outcome.policy),
        mu: outcome.mu,
        mu_bar: outcome.mu_bar,
        j: ev.j_value,
        jc: ev.jc_value,
        dual_value,
        duality_gap: (ev.j_value - dual_value).abs() / dual_value.abs(),
        slackness: (outcome.mu * (ev.jc_value - rho_bar)).abs(),
        slackness_tol: 1e-6 * rho_bar.abs().max(1.0),
        converged: outcome.converged,
        iterations: outcome.records.len(),
        step,
        rho: res.spec.rho,
        rho_bar,
        risk_floor: risk_floor(&base),
        optimal: outcome.policy,
        log: outcome.log,
    })
}

pub fn cmd_solve_exact(res: &Resolved, out: &Path) -> Result<(), CliError> {
    let sol = solve_exact(res)?;
    write_file(out, "solve_exact.json", &to_json(&sol))?;
    write_file(out, "solve_exact_log.csv", &sol.log.to_csv())?;
    println!(
        "mu* = {:.10} J = {:.10} J_c = {:.10} rho_bar = {:.6} D = {:.10}",
        sol.mu, sol.j, sol.jc, sol.rho_bar, sol.dual_value
    );
    println!(
        "duality gap = {:.3e} slackness = {:.3e} iterations = {} converged = {}",
        sol.duality_gap, sol.slackness, sol.iterations, sol.converged
    );
    if !sol.converged {
        let hint = if sol.risk_floor > sol.rho_bar {
            format!(
                "; the budget rho_bar = {} is below the least attainable risk (about {:.4}), so the constraint is infeasible",
                sol.rho_bar, sol.risk_floor
            )
        } else {
            String::new()
        };
        return Err(CliError::Numerical(format!(
            "dual iteration did not converge in {} iterations (mu = {:.6e}){hint}",
            sol.iterations, sol.mu
        )));
    }
    if !sol.within_tolerance() {
        return Err(CliError::Assertion(format!(
            "duality gap {:.3e} or slackness {:.3e} above tolerance",
            sol.duality_gap, sol.slackness
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnSeed {
    pub seed: u64,
    pub iterations: usize,
    /// `(L(X_N, μ) − D(μ)) / D(μ)` at the last certified iterate.
    pub final_rel_error: f64,
    /// Least-squares slope of the 10³-step moving average of `L̂` (≤ 0: non-increasing trend).
    pub trend_slope: f64,
    pub failure: Option<String>,
    pub policy: PolicyOut,
    /// `(iteration, relative error)` at each evaluation point, iteration 0 first.
    #[serde(skip)]
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnReport {
    pub mu: f64,
    pub dual_value: f64,
    pub search: RandomSearchConfig,
    pub final_error: Option<Summary>,
    pub seeds: Vec<LearnSeed>,
    #[serde(skip)]
    pub aggregate_csv: String,
}

fn slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean_x = (n - 1) as f64 / 2.0;
    let mean_y = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Long-format aggregate over carried-forward curves sampled on a shared grid.
fn aggregate_curves(curves: &[&[(usize, f64)]], prefix: &str, header: bool) -> String {
    let mut grid: Vec<usize> = curves.iter().flat_map(|c| c.iter().map(|p| p.0)).collect();
    grid.sort_unstable();
    grid.dedup();
    let mut out = String::new();
    if header {
        out.push_str("series,iteration,value\n");
    }
    for &it in &grid {
        let values: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.iter().take_while(|p| p.0 <= it).last().map(|p| p.1))
            .collect();
        if let Some(s) = summarize(&values) {
            push_long_rows(&mut out, prefix, it, &s);
        }
    }
    out
}

/// Random search at the configured multiplier for each seed. Per-seed logs
/// go to `out` when given.
pub fn learn(res: &Resolved, seeds: &[u64], out: Option<&Path>) -> Result<LearnReport, CliError> {
    let section = &res.config.learn;
    let rl = RiskLagrangian::new(&res.sys, &res.noise, res.spec, section.mu)?;
    let (d, _) = rl.dual_value()?;
    let rel = |p: &Policy| rl.lagrangian(p).map_or(f64::INFINITY, |l| (l - d) / d);
    let runs = par::map(seeds, |&seed| -> Result<LearnSeed, CliError> {
        let cfg = RandomSearchConfig {
            seed,
            snapshot_every: section.eval_every,
            ..section.search.clone()
        };
        let run = run_search(&rl, &res.noise, &res.p0, &cfg)?;
        if let Some(dir) = out {
            write_file(dir, &format!("learn_seed{seed}.csv"), &run.log.to_csv())?;
        }
        let mut curve = vec![(0, rel(&res.p0))];
        curve.extend(run.log.snapshots.iter().map(|s| (s.iter, rel(&s.policy))));
        let final_rel_error = rel(&run.policy);
        if curve.last().map(|p| p.0) != Some(run.log.len()) {
            curve.push((run.log.len(), final_rel_error));
        }
        Ok(LearnSeed {
            seed,
            iterations: run.log.len(),
            final_rel_error,
            trend_slope: slope(&run.log.moving_average(1000)),
            failure: run.failure.map(|e| e.to_string()),
            policy: PolicyOut::from(&run.policy),
            curve,
        })
    });
    let seeds_out = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let finals: Vec<f64> = seeds_out.iter().map(|s| s.final_rel_error).collect();
    let curves: Vec<&[(usize, f64)]> = seeds_out.iter().map(|s| s.curve.as_slice()).collect();
    Ok(LearnReport {
        mu: section.mu,
        dual_value: d,
        search: section.search.clone(),
        final_error: summarize(&finals),
        aggregate_csv: aggregate_curves(&curves, "rel_lagrangian_error", true),
        seeds: seeds_out,
    })
}

pub fn cmd_learn(res: &Resolved, seeds: &[u64], out: &Path) -> Result<(), CliError> {
    let report = learn(res, seeds, Some(out))?;
    write_file(out, "learn_aggregate.csv", &report.aggregate_csv)?;
    write_file(out, "learn_summary.json", &to_json(&report))?;
    for s in &report.seeds {
        println!(
            "seed {}: iterations {} final relative error {:.5}{}",
            s.seed,
            s.iterations,
            s.final_rel_error,
            s.failure
                .as_deref()
                .map(|f| format!(" (stopped: {f})"))
                .unwrap_or_default()
        );
    }
    if let Some(s) = &report.final_error {
        println!(
            "final relative error: median {:.5} iqr [{:.5}, {:.5}] mean {:.5} std {:.5}",
            s.median, s.q25, s.q75, s.mean, s.std
        );
    }
    let failures = report.seeds.iter().filter(|s| s.failure.is_some()).count();
    if failures > 0 {
        return Err(CliError::Numerical(format!(
            "{failures} of {} runs stopped early",
            report.seeds.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSeed {
    pub seed: u64,
    pub outer_iterations: usize,
    pub mu: f64,
    pub mu_bar: f64,
    /// `|J(X_j) − J(X*)| / J(X*)` at the last iterate.
    pub optimality_gap: f64,
    /// `|J_c(X_j) − ρ̄| / ρ̄` at the last iterate.
    pub violation: f64,
    pub failure: Option<String>,
    pub policy: Option<PolicyOut>,
    #[serde(skip)]
    pub gap_curve: Vec<(usize, f64)>,
    #[serde(skip)]
    pub violation_curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualReport {
    pub reference: ExactSolution,
    pub config: PrimalDualConfig,
    pub optimality_gap: Option<Summary>,
    pub violation: Option<Summary>,
    pub seeds: Vec<DualSeed>,
    #[serde(skip)]
    pub aggregate_csv: String,
}

/// Primal-dual runs per seed, scored against the exact solution.
pub fn primal_dual_sweep(
    res: &Resolved,
    cfg: &PrimalDualConfig,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<DualReport, CliError> {
    let reference = solve_exact(res)?;
    let j_star = if reference.converged {
        reference.j
    } else {
        f64::NAN
    };
    let rho_bar = res.spec.rho_bar;
    let base = RiskLagrangian::new(&res.sys, &res.noise, res.spec, 0.0)?;
    let runs = par::map(seeds, |&seed| -> Result<DualSeed, CliError> {
        let run_cfg = PrimalDualConfig {
            seed,
            ..cfg.clone()
        };
        match primal_dual(&res.sys, &res.noise, res.spec, &run_cfg, &res.p0) {
            Ok(outcome) => {
                if let Some(dir) = out {
                    write_file(
                        dir,
                        &format!("primal_dual_seed{seed}.csv"),
                        &outcome.log.to_csv(),
                    )?;
                }
                let mut gap_curve = Vec::with_capacity(outcome.records.len());
                let mut violation_curve = Vec::with_capacity(outcome.records.len());
                for r in &outcome.records {
                    let ev = base.evaluate(&r.policy)?;
                    gap_curve.push((r.j, (ev.j_value - j_star).abs() / j_star));
                    violation_curve.push((r.j, (ev.jc_value - rho_bar).abs() / rho_bar.abs()));
                }
                Ok(DualSeed {
                    seed,
                    outer_iterations: outcome.records.len(),
                    mu: outcome.mu,
                    mu_bar: outcome.mu_bar,
                    optimality_gap: gap_curve.last().map_or(f64::NAN, |p| p.1),
                    violation: violation_curve.last().map_or(f64::NAN, |p| p.1),
                    failure: None,
                    policy: Some(PolicyOut::from(&outcome.policy)),
                    gap_curve,
                    violation_curve,
                })
            }
            Err(e @ rclqr::Error::Stopped { .. }) => {
                let (iteration, mu) = match &e {
                    rclqr::Error::Stopped { iteration, mu, .. } => (*iteration, *mu),
                    _ => unreachable!(),
                };
                Ok(DualSeed {
                    seed,
                    outer_iterations: iteration.saturating_sub(1),
                    mu,
                    mu_bar: f64::NAN,
                    optimality_gap: f64::NAN,
                    violation: f64::NAN,
                    failure: Some(e.to_string()),
                    policy: None,
                    gap_curve: Vec::new(),
                    violation_curve: Vec::new(),
                })
            }
            Err(e) => Err(e.into()),
        }
    });
    let seeds_out = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    // A stopped run counts as an unbounded error in the medians.
    let score = |v: f64, failed: bool| if failed { f64::INFINITY } else { v };
    let gaps: Vec<f64> = seeds_out
        .iter()
        .map(|s| score(s.optimality_gap, s.failure.is_some()))
        .collect();
    let viols: Vec<f64> = seeds_out
        .iter()
        .map(|s| score(s.violation, s.failure.is_some()))
        .collect();
    let gap_curves: Vec<&[(usize, f64)]> =
        seeds_out.iter().map(|s| s.gap_curve.as_slice()).collect();
    let viol_curves: Vec<&[(usize, f64)]> = seeds_out
        .iter()
        .map(|s| s.violation_curve.as_slice())
        .collect();
    let mut aggregate_csv = aggregate_curves(&gap_curves, "optimality_gap", true);
    aggregate_csv.push_str(&aggregate_curves(
        &viol_curves,
        "constraint_violation",
        false,
    ));
    Ok(DualReport {
        reference,
        config: cfg.clone(),
        optimality_gap: median_with_failures(&gaps),
        violation: median_with_failures(&viols),
        seeds: seeds_out,
        aggregate_csv,
    })
}

/// Like `summarize`, but infinite entries (failed runs) still shift the median.
fn median_with_failures(values: &[f64]) -> Option<Summary> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mut s = summarize(&finite)?;
    if finite.len() < values.len() {
        let mut all = values.to_vec();
        all.sort_by(f64::total_cmp);
        let n = all.len();
        s.median = if n % 2 == 1 {
            all[n / 2]
        } else {
            0.5 * (all[n / 2 - 1] + all[n / 2])
        };
    }
    Some(s)
}

pub fn cmd_primal_dual(res: &Resolved, seeds: &[u64], out: &Path) -> Result<(), CliError> {
    let report = primal_dual_sweep(res, &res.config.primal_dual, seeds, Some(out))?;
    write_file(out, "primal_dual_aggregate.csv", &report.aggregate_csv)?;
    write_file(out, "primal_dual_summary.json", &to_json(&report))?;
    if !report.reference.converged {
        println!(
            "reference solve did not converge (rho_bar = {}, least attainable risk about {:.4}); gaps are undefined",
            report.reference.rho_bar, report.reference.risk_floor
        );
    }
    for s in &report.seeds {
        match &s.failure {
            None => println!(
                "seed {}: mu = {:.5} mu_bar = {:.5} optimality gap {:.5} violation {:.5}",
                s.seed, s.mu, s.mu_bar, s.optimality_gap, s.violation
            ),
            Some(f) => println!("seed {}: stopped: {f}", s.seed),
        }
    }
    if let (Some(g), Some(v)) = (&report.optimality_gap, &report.violation) {
        println!(
            "median optimality gap {:.5}, median violation {:.5}",
            g.median, v.median
        );
    }
    let failures = report.seeds.iter().filter(|s| s.failure.is_some()).count();
    if failures > 0 {
        return Err(CliError::Numerical(format!(
            "{failures} of {} runs stopped early",
            report.seeds.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSeed {
    pub seed: u64,
    pub l_hat: f64,
    pub j_hat: f64,
    pub jc_hat: f64,
    pub l_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub mu: f64,
    pub horizon: usize,
    pub policy: PolicyOut,
    pub l: f64,
    pub j: f64,
    pub jc: f64,
    pub seeds: Vec<SimulationSeed>,
}

pub fn simulate(
    res: &Resolved,
    seeds: &[u64],
    trajectory_dir: Option<&Path>,
) -> Result<SimulationReport, CliError> {
    let section = &res.config.simulate;
    let rl = RiskLagrangian::new(&res.sys, &res.noise, res.spec, section.mu)?;
    let policy = match section.policy {
        SimulatedPolicy::Initial => res.p0.clone(),
        SimulatedPolicy::Optimal => rl.stationary_point()?,
    };
    let ev = rl.evaluate(&policy)?;
    let oracle = RolloutOracle::new(&rl, &res.noise)?;
    let base_cfg = RolloutConfig::new(section.horizon, 0).with_burn_in(section.burn_in);
    if let (Some(dir), Some(&first)) = (trajectory_dir, seeds.first()) {
        if section.trajectory {
            let (_, rows) = oracle.rollout_trace(&policy, &base_cfg.with_seed(first))?;
            let (n, m) = (res.sys.n(), res.sys.m());
            let mut csv = String::from("t");
            (1..=n).for_each(|i| {
                let _ = write!(csv, ",x{i}");
            });
            (1..=m).for_each(|i| {
                let _ = write!(csv, ",u{i}");
            });
            csv.push_str(",cost\n");
            for r in rows {
                let _ = write!(csv, "{}", r.t);
                for v in r.x.iter().chain(&r.u) {
                    let _ = write!(csv, ",{v}");
                }
                let _ = writeln!(csv, ",{}", r.cost);
            }
            write_file(dir, "trajectory.csv", &csv)?;
        }
    }
    let samples = par::map(seeds, |&seed| {
        oracle
            .rollout(&policy, &base_cfg.with_seed(seed))
            .map(|s| (seed, s))
    });
    let seeds_out = samples
        .into_iter()
        .map(|r| {
            let (seed, s) = r?;
            Ok(SimulationSeed {
                seed,
                l_hat: s.l_hat,
                j_hat: s.j_hat,
                jc_hat: s.jc_hat,
                l_rel_error: (s.l_hat - ev.l_value).abs() / ev.l_value.abs(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(SimulationReport {
        mu: section.mu,
        horizon: section.horizon,
        policy: PolicyOut::from(&policy),
        l: ev.l_value,
        j: ev.j_value,
        jc: ev.jc_value,
        seeds: seeds_out,
    })
}

pub fn cmd_simulate(res: &Resolved, seeds: &[u64], out: &Path) -> Result<(), CliError> {
    let report = simulate(res, seeds, Some(out))?;
    write_file(out, "simulate.json", &to_json(&report))?;
    println!(
        "closed form: L = {:.6} J = {:.6} J_c = {:.6}",
        report.l, report.j, report.jc
    );
    for s in &report.seeds {
        println!(
            "seed {}: L_hat = {:.6} J_hat = {:.6} Jc_hat = {:.6} (relative error {:.3e})",
            s.seed, s.l_hat, s.j_hat, s.jc_hat, s.l_rel_error
        );
    }
    Ok(())
}
