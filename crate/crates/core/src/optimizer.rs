//! Key-length maximization over the deviation grid.
//!
//! For each grid value of `nu` (and of `mu` for the Serfling bound) the
//! remaining budget `B = eps_QKD - eps_ec - 2 eps_pe - eps_auth` is inverted
//! into the largest `l` with `eps_pa(l) <= B`, then the full budget is
//! re-checked. The scan runs in parallel; ties resolve to the smallest `nu`,
//! then the smallest `mu`, matching a sequential first-wins scan.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{
    self, eps_auth, eps_ec_and_t, eps_pe_cp_with, h2, serfling_unchecked, BoundsError, EpsilonBudget, ErrorCountRule,
    HypergeomMethod, SecurityParams, XObsRule,
};

pub const FULL_NU_POINTS: usize = 100_000;
pub const FULL_MU_POINTS: usize = 1000;
pub const COARSE_NU_POINTS: usize = 2000;
pub const COARSE_MU_POINTS: usize = 100;
pub const DEFAULT_NU_LO: f64 = 1e-6;
pub const DEFAULT_MU_LO: f64 = 1e-7;
pub const DEFAULT_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("optimizer requires n = floor(N/2), got n={sample_bits} N={raw_bits}")]
    UnbalancedSplit { raw_bits: u64, sample_bits: u64 },
    #[error("grid needs at least two points, got {0}")]
    Grid(usize),
}

/// Which parameter-estimation bound supplies `eps_pe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeType {
    Serfling,
    Chernoff,
    CpExact,
}

impl PeType {
    pub const ALL: [PeType; 3] = [PeType::Serfling, PeType::Chernoff, PeType::CpExact];

    pub fn as_str(self) -> &'static str {
        match self {
            PeType::Serfling => "serfling",
            PeType::Chernoff => "chernoff",
            PeType::CpExact => "cp_exact",
        }
    }
}

impl fmt::Display for PeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "serfling" | "serf" => Ok(PeType::Serfling),
            "chernoff" | "chern" => Ok(PeType::Chernoff),
            "cp_exact" | "cp" => Ok(PeType::CpExact),
            other => Err(format!("unknown pe type `{other}` (serfling, chernoff, cp_exact)")),
        }
    }
}

/// Grid presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// 100000 `nu` points, 1000 `mu` points.
    Full,
    /// 2000 `nu` points, 100 `mu` points.
    Coarse,
}

impl FromStr for GridPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(GridPreset::Full),
            "coarse" | "ci" => Ok(GridPreset::Coarse),
            other => Err(format!("unknown grid preset `{other}` (full, coarse)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub params: SecurityParams,
    pub pe_type: PeType,
    pub nu_grid_points: usize,
    /// Serfling only.
    pub mu_grid_points: usize,
    pub nu_lo: f64,
    /// Accept `eps_total <= eps_QKD (1 + slack)`.
    pub slack: f64,
    pub chernoff_tol: f64,
    pub x_obs_rule: XObsRule,
    #[serde(default)]
    pub error_count_rule: ErrorCountRule,
}

impl OptimizerConfig {
    pub fn new(params: SecurityParams, pe_type: PeType, preset: GridPreset) -> Self {
        let (nu_grid_points, mu_grid_points) = match preset {
            GridPreset::Full => (FULL_NU_POINTS, FULL_MU_POINTS),
            GridPreset::Coarse => (COARSE_NU_POINTS, COARSE_MU_POINTS),
        };
        OptimizerConfig {
            params,
            pe_type,
            nu_grid_points,
            mu_grid_points,
            nu_lo: DEFAULT_NU_LO,
            slack: DEFAULT_SLACK,
            chernoff_tol: bounds::CHERNOFF_DEFAULT_TOL,
            x_obs_rule: XObsRule::Floor,
            error_count_rule: ErrorCountRule::Derived,
        }
    }

    pub fn full(params: SecurityParams, pe_type: PeType) -> Self {
        Self::new(params, pe_type, GridPreset::Full)
    }

    pub fn coarse(params: SecurityParams, pe_type: PeType) -> Self {
        Self::new(params, pe_type, GridPreset::Coarse)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.params.delta = delta;
        self
    }

    pub fn nu_hi(&self) -> f64 {
        0.5 - self.params.delta - self.nu_lo
    }

    /// Spacing of the `nu` grid.
    pub fn grid_step(&self) -> f64 {
        (self.nu_hi() - self.nu_lo) / (self.nu_grid_points - 1) as f64
    }

    pub fn nu_at(&self, index: usize) -> f64 {
        linspace_at(self.nu_lo, self.nu_hi(), self.nu_grid_points, index)
    }

    fn mu_at(&self, nu: f64, index: usize) -> f64 {
        linspace_at(DEFAULT_MU_LO, nu - DEFAULT_MU_LO, self.mu_grid_points, index)
    }
}

/// Same point placement as numpy's `linspace`.
fn linspace_at(lo: f64, hi: f64, points: usize, index: usize) -> f64 {
    if index + 1 == points {
        return hi;
    }
    let step = (hi - lo) / (points - 1) as f64;
    lo + step * index as f64
}

/// Why grid points were rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStats {
    pub evaluated: u64,
    /// `B <= 0`: parameter estimation alone exhausts the budget.
    pub budget_exhausted: u64,
    pub nonpositive_length: u64,
    pub over_budget: u64,
    pub no_convergence: u64,
    pub feasible: u64,
}

impl GridStats {
    fn merge(mut self, o: GridStats) -> GridStats {
        self.evaluated += o.evaluated;
        self.budget_exhausted += o.budget_exhausted;
        self.nonpositive_length += o.nonpositive_length;
        self.over_budget += o.over_budget;
        self.no_convergence += o.no_convergence;
        self.feasible += o.feasible;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub pe_type: PeType,
    pub params: SecurityParams,
    pub l_max: Option<u64>,
    pub nu_star: Option<f64>,
    pub mu_star: Option<f64>,
    /// Budget at the optimum; absent when nothing was feasible.
    pub budget: Option<EpsilonBudget>,
    pub grid_resolution: f64,
    pub slack: f64,
    pub elapsed: Duration,
    pub stats: GridStats,
}

impl OptimizationResult {
    pub fn key_rate(&self) -> Option<f64> {
        self.l_max.map(|l| l as f64 / self.params.raw_bits as f64)
    }

    pub fn is_feasible(&self) -> bool {
        self.l_max.is_some()
    }
}

/// `floor(log2(4B^2) + n(1 - h2(delta+nu)) - r - t)`, or `None` when not positive.
///
/// This is the largest `l` with `eps_pa(l) <= B`.
pub fn candidate_key_length(budget: f64, delta: f64, nu: f64, remaining_bits: u64, r: u64, t: u32) -> Option<u64> {
    if !(budget > 0.0) {
        return None;
    }
    let estimate = (4.0 * budget * budget).log2() + remaining_bits as f64 * (1.0 - h2(delta + nu))
        - r as f64
        - f64::from(t);
    let l = estimate.floor();
    if l >= 1.0 && l.is_finite() {
        Some(l as u64)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    length: u64,
    nu_index: usize,
    mu_index: usize,
    eps_pe: f64,
}

fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            let kx = (x.length, std::cmp::Reverse(x.nu_index), std::cmp::Reverse(x.mu_index));
            let ky = (y.length, std::cmp::Reverse(y.nu_index), std::cmp::Reverse(y.mu_index));
            if ky > kx {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

/// Fixed terms of the budget for one parameter set.
#[derive(Debug, Clone, Copy)]
struct FixedTerms {
    eps_qkd: f64,
    eps_auth: f64,
    eps_ec: f64,
    t: u32,
}

impl FixedTerms {
    fn of(params: &SecurityParams) -> Self {
        let (t, eps_ec) = eps_ec_and_t(params.s);
        FixedTerms {
            eps_qkd: params.eps_qkd(),
            eps_auth: eps_auth(params.tag_count, params.tag_bits),
            eps_ec,
            t,
        }
    }
}

enum PointOutcome {
    BudgetExhausted,
    NonPositive,
    OverBudget,
    Feasible(u64),
}

fn evaluate_point(cfg: &OptimizerConfig, fixed: &FixedTerms, entropy_nu: f64, nu: f64, eps_pe: f64) -> PointOutcome {
    let p = &cfg.params;
    let budget = fixed.eps_qkd - fixed.eps_ec - 2.0 * eps_pe - fixed.eps_auth;
    if budget <= 0.0 {
        return PointOutcome::BudgetExhausted;
    }
    let remaining = p.remaining_bits();
    let estimate = (4.0 * budget * budget).log2() + remaining as f64 * (1.0 - entropy_nu)
        - p.syndrome_bits as f64
        - f64::from(fixed.t);
    let l = estimate.floor();
    if !(l >= 1.0) {
        return PointOutcome::NonPositive;
    }
    let l = l as u64;
    let eps_pa = bounds::log2_eps_pa(l, fixed.t, nu, p.delta, p.syndrome_bits, remaining)
        .exp2()
        .min(1.0);
    let total = 2.0 * eps_pe + fixed.eps_ec + eps_pa + fixed.eps_auth;
    if total > fixed.eps_qkd * (1.0 + cfg.slack) {
        return PointOutcome::OverBudget;
    }
    PointOutcome::Feasible(l)
}

/// Evaluates the selected `eps_pe` at a grid point. `Ok(None)` marks a
/// Chernoff inversion that did not converge.
fn eps_pe_at(cfg: &OptimizerConfig, nu: f64, mu: Option<f64>) -> Result<Option<f64>, BoundsError> {
    let p = &cfg.params;
    match cfg.pe_type {
        PeType::Serfling => {
            let mu = mu.expect("serfling needs mu");
            Ok(Some(serfling_unchecked(nu, mu, p.delta, p.raw_bits as f64, p.sample_bits as f64)))
        }
        PeType::Chernoff => {
            match bounds::eps_pe_chernoff(p.delta, nu, p.raw_bits, p.sample_bits, cfg.chernoff_tol) {
                Ok(e) => Ok(Some(e)),
                Err(BoundsError::NoConvergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        }
        PeType::CpExact => eps_pe_cp_with(
            p.delta,
            nu,
            p.raw_bits,
            p.sample_bits,
            cfg.x_obs_rule,
            cfg.error_count_rule,
            HypergeomMethod::default(),
        )
        .map(Some),
    }
}

fn scan_nu(cfg: &OptimizerConfig, fixed: &FixedTerms, nu_index: usize) -> Result<(Option<Candidate>, GridStats), BoundsError> {
    let nu = cfg.nu_at(nu_index);
    let entropy = h2(cfg.params.delta + nu);
    let mut stats = GridStats::default();
    let mut best = None;
    let mu_points = if cfg.pe_type == PeType::Serfling { cfg.mu_grid_points } else { 1 };
    for mu_index in 0..mu_points {
        let mu = (cfg.pe_type == PeType::Serfling).then(|| cfg.mu_at(nu, mu_index));
        stats.evaluated += 1;
        if let Some(mu) = mu {
            if !(mu > 0.0 && mu < nu) {
                stats.nonpositive_length += 1;
                continue;
            }
        }
        let Some(eps_pe) = eps_pe_at(cfg, nu, mu)? else {
            stats.no_convergence += 1;
            continue;
        };
        match evaluate_point(cfg, fixed, entropy, nu, eps_pe) {
            PointOutcome::BudgetExhausted => stats.budget_exhausted += 1,
            PointOutcome::NonPositive => stats.nonpositive_length += 1,
            PointOutcome::OverBudget => stats.over_budget += 1,
            PointOutcome::Feasible(length) => {
                stats.feasible += 1;
                best = better(best, Some(Candidate { length, nu_index, mu_index, eps_pe }));
            }
        }
    }
    Ok((best, stats))
}

/// Maximizes the extractable key length for `cfg`.
pub fn optimize(cfg: &OptimizerConfig) -> Result<OptimizationResult, OptimizerError> {
    let start = Instant::now();
    let p = cfg.params;
    p.validate()?;
    if p.sample_bits != p.raw_bits / 2 {
        return Err(OptimizerError::UnbalancedSplit { raw_bits: p.raw_bits, sample_bits: p.sample_bits });
    }
    if cfg.nu_grid_points < 2 {
        return Err(OptimizerError::Grid(cfg.nu_grid_points));
    }
    if cfg.pe_type == PeType::Serfling && cfg.mu_grid_points < 2 {
        return Err(OptimizerError::Grid(cfg.mu_grid_points));
    }
    let fixed = FixedTerms::of(&p);

    let (best, stats) = (0..cfg.nu_grid_points)
        .into_par_iter()
        .map(|i| scan_nu(cfg, &fixed, i))
        .try_reduce(
            || (None, GridStats::default()),
            |(a, sa), (b, sb)| Ok((better(a, b), sa.merge(sb))),
        )?;

    let mut result = OptimizationResult {
        pe_type: cfg.pe_type,
        params: p,
        l_max: None,
        nu_star: None,
        mu_star: None,
        budget: None,
        grid_resolution: cfg.grid_step(),
        slack: cfg.slack,
        elapsed: Duration::ZERO,
        stats,
    };
    if let Some(c) = best {
        let nu = cfg.nu_at(c.nu_index);
        let mu = (cfg.pe_type == PeType::Serfling).then(|| cfg.mu_at(nu, c.mu_index));
        let eps_pa = bounds::eps_pa(c.length, fixed.t, nu, p.delta, p.syndrome_bits, p.remaining_bits())?;
        result.l_max = Some(c.length);
        result.nu_star = Some(nu);
        result.mu_star = mu;
        result.budget = Some(EpsilonBudget::compose(fixed.eps_auth, fixed.eps_ec, eps_pa, c.eps_pe, fixed.eps_qkd));
    }
    result.elapsed = start.elapsed();
    Ok(result)
}

/// Recomputes the budget of a result from its witnesses through the public bound functions.
pub fn recompute_budget(cfg: &OptimizerConfig, result: &OptimizationResult) -> Result<Option<EpsilonBudget>, OptimizerError> {
    let (Some(l), Some(nu)) = (result.l_max, result.nu_star) else {
        return Ok(None);
    };
    let p = &result.params;
    let (t, eps_ec) = eps_ec_and_t(p.s);
    let eps_pe = match result.pe_type {
        PeType::Serfling => bounds::eps_pe_serfling(
            nu,
            result.mu_star.expect("serfling result carries mu"),
            p.delta,
            p.raw_bits,
            p.sample_bits,
        )?,
        PeType::Chernoff => bounds::eps_pe_chernoff(p.delta, nu, p.raw_bits, p.sample_bits, cfg.chernoff_tol)?,
        PeType::CpExact => eps_pe_cp_with(
            p.delta,
            nu,
            p.raw_bits,
            p.sample_bits,
            cfg.x_obs_rule,
            cfg.error_count_rule,
            HypergeomMethod::default(),
        )?,
    };
    let eps_pa = bounds::eps_pa(l, t, nu, p.delta, p.syndrome_bits, p.remaining_bits())?;
    Ok(Some(EpsilonBudget::compose(
        eps_auth(p.tag_count, p.tag_bits),
        eps_ec,
        eps_pa,
        eps_pe,
        p.eps_qkd(),
    )))
}

/// Itemized budget of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub budget: Option<EpsilonBudget>,
    pub eps_qkd: f64,
    /// `eps_total / eps_QKD`.
    pub utilization: Option<f64>,
    pub within_slack: bool,
    pub stats: GridStats,
}

pub fn feasibility_report(result: &OptimizationResult) -> FeasibilityReport {
    let eps_qkd = result.params.eps_qkd();
    FeasibilityReport {
        feasible: result.is_feasible(),
        budget: result.budget,
        eps_qkd,
        utilization: result.budget.map(|b| b.eps_total / eps_qkd),
        within_slack: result.budget.map_or(false, |b| b.within(result.slack)),
        stats: result.stats,
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.budget {
            Some(b) => {
                writeln!(f, "  eps_auth  = {:.6e}", b.eps_auth)?;
                writeln!(f, "  eps_ec    = {:.6e}", b.eps_ec)?;
                writeln!(f, "  eps_pa    = {:.6e}", b.eps_pa)?;
                writeln!(f, "  2*eps_pe  = {:.6e}", 2.0 * b.eps_pe)?;
                writeln!(f, "  eps_total = {:.6e} (eps_QKD {:.1e}, {:.4}% used)", b.eps_total, self.eps_qkd, 100.0 * b.eps_total / self.eps_qkd)
            }
            None => writeln!(
                f,
                "  infeasible: {} of {} grid points exhausted the budget on eps_pe, {} gave no positive length, {} exceeded the budget",
                self.stats.budget_exhausted, self.stats.evaluated, self.stats.nonpositive_length, self.stats.over_budget
            ),
        }
    }
}

/// One CSV row per optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationCsvRow {
    pub pe_type: PeType,
    pub s: u32,
    #[serde(rename = "N")]
    pub raw_bits: u64,
    pub n: u64,
    pub delta: f64,
    pub nu_star: Option<f64>,
    pub mu_star: Option<f64>,
    pub l: Option<u64>,
    pub l_over_n: Option<f64>,
    pub eps_auth: Option<f64>,
    pub eps_ec: Option<f64>,
    pub eps_pa: Option<f64>,
    pub eps_pe: Option<f64>,
    pub eps_total: Option<f64>,
    pub eps_qkd: f64,
    pub elapsed_s: f64,
}

impl From<&OptimizationResult> for OptimizationCsvRow {
    fn from(r: &OptimizationResult) -> Self {
        OptimizationCsvRow {
            pe_type: r.pe_type,
            s: r.params.s,
            raw_bits: r.params.raw_bits,
            n: r.params.sample_bits,
            delta: r.params.delta,
            nu_star: r.nu_star,
            mu_star: r.mu_star,
            l: r.l_max,
            l_over_n: r.key_rate(),
            eps_auth: r.budget.map(|b| b.eps_auth),
            eps_ec: r.budget.map(|b| b.eps_ec),
            eps_pa: r.budget.map(|b| b.eps_pa),
            eps_pe: r.budget.map(|b| b.eps_pe),
            eps_total: r.budget.map(|b| b.eps_total),
            eps_qkd: r.params.eps_qkd(),
            elapsed_s: r.elapsed.as_secs_f64(),
        }
    }
}

/// One row of a `nu` scan, for plotting `l` against the deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuScanRow {
    pub nu: f64,
    pub mu: Option<f64>,
    pub eps_pe: Option<f64>,
    pub remaining_budget: Option<f64>,
    pub l: Option<u64>,
}

/// Evaluates every `nu` grid point (best `mu` per point for Serfling).
pub fn nu_scan(cfg: &OptimizerConfig) -> Result<Vec<NuScanRow>, OptimizerError> {
    cfg.params.validate()?;
    let fixed = FixedTerms::of(&cfg.params);
    (0..cfg.nu_grid_points)
        .into_par_iter()
        .map(|i| {
            let nu = cfg.nu_at(i);
            let (best, _) = scan_nu(cfg, &fixed, i)?;
            let (mu, eps_pe) = match best {
                Some(c) => (
                    (cfg.pe_type == PeType::Serfling).then(|| cfg.mu_at(nu, c.mu_index)),
                    Some(c.eps_pe),
                ),
                None if cfg.pe_type != PeType::Serfling => (None, eps_pe_at(cfg, nu, None)?),
                None => (None, None),
            };
            Ok(NuScanRow {
                nu,
                mu,
                eps_pe,
                remaining_budget: eps_pe.map(|e| fixed.eps_qkd - fixed.eps_ec - 2.0 * e - fixed.eps_auth),
                l: best.map(|c| c.length),
            })
        })
        .collect::<Result<Vec<_>, BoundsError>>()
        .map_err(Into::into)
}
