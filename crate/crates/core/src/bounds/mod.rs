//! Failure-probability formulas of the BBM92 finite-key analysis.
//!
//! Every function here is pure. Probabilities that exceed one are clamped to
//! one: they mark a vacuous bound, not an error. Tail terms are evaluated in
//! log space because `2^(-n(1-H))` underflows a double for realistic `n`.

mod hypergeom;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hypergeom::{
    binomial, hypergeom_cdf, hypergeom_cdf_rational, hypergeom_cdf_with, HypergeomMethod,
    DEFAULT_EXACT_MAX_POPULATION,
};

/// Highest QBER threshold for which BBM92 can still yield key.
pub const QBER_THRESHOLD: f64 = 0.11;

/// Efficiency factor of the rate-adaptive syndrome length estimate `r' = f (N-n) h2(delta)`.
pub const SYNDROME_EFFICIENCY: f64 = 1.19;

/// Binary search bracket and iteration cap for the Chernoff inversion.
pub const CHERNOFF_Y_MAX: f64 = 1000.0;
pub const CHERNOFF_MAX_ITERS: usize = 2000;
pub const CHERNOFF_DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("chernoff inversion did not converge: target nu {target}, closest {achieved}")]
    NoConvergence { target: f64, achieved: f64 },
}

fn domain(what: &'static str, value: f64) -> BoundsError {
    BoundsError::Domain { what, value }
}

/// The fixed parameters feeding every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams {
    /// `eps_QKD = 10^-s`.
    pub s: u32,
    /// Raw sifted bits `N`.
    pub raw_bits: u64,
    /// Bits sacrificed for QBER estimation `n`.
    pub sample_bits: u64,
    /// MAC tag length `p`.
    pub tag_bits: u32,
    /// Number of MAC tags `q` charged against the budget.
    pub tag_count: u32,
    /// Syndrome length `r`.
    pub syndrome_bits: u64,
    /// Verification hash length `t`, tied to `s`.
    pub verify_bits: u32,
    /// QBER threshold; set equal to the measured sample QBER.
    pub delta: f64,
    /// Enforce `r >= 1.19 (N-n) h2(delta)`.
    pub check_syndrome_floor: bool,
}

impl SecurityParams {
    /// Defaults used throughout: `n = N/2`, `p = 61`, `q = 1`, `r = 5000`.
    pub fn new(s: u32, raw_bits: u64, delta: f64) -> Self {
        SecurityParams {
            s,
            raw_bits,
            sample_bits: raw_bits / 2,
            tag_bits: 61,
            tag_count: 1,
            syndrome_bits: 5000,
            verify_bits: verify_bits_for(s),
            delta,
            check_syndrome_floor: false,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// Bits left for the key after sampling, `N - n`.
    pub fn remaining_bits(&self) -> u64 {
        self.raw_bits - self.sample_bits
    }

    pub fn eps_qkd(&self) -> f64 {
        10f64.powi(-(self.s as i32))
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.s == 0 {
            return Err(BoundsError::InvalidParams("s must be positive".into()));
        }
        if self.sample_bits == 0 || self.sample_bits >= self.raw_bits {
            return Err(BoundsError::InvalidParams(format!(
                "need 0 < n < N, got n={} N={}",
                self.sample_bits, self.raw_bits
            )));
        }
        if self.tag_bits == 0 || self.tag_count == 0 || self.syndrome_bits == 0 {
            return Err(BoundsError::InvalidParams("p, q and r must be positive".into()));
        }
        if !(0.0..=QBER_THRESHOLD).contains(&self.delta) || self.delta.is_nan() {
            return Err(domain("delta", self.delta));
        }
        if self.verify_bits != verify_bits_for(self.s) {
            return Err(BoundsError::InvalidParams(format!(
                "t={} does not match ceil((s+2) log2 10)={}",
                self.verify_bits,
                verify_bits_for(self.s)
            )));
        }
        if self.check_syndrome_floor {
            let floor = syndrome_floor(self.remaining_bits(), self.delta);
            if (self.syndrome_bits as f64) < floor {
                return Err(BoundsError::InvalidParams(format!(
                    "r={} below the leakage floor {floor:.1}",
                    self.syndrome_bits
                )));
            }
        }
        Ok(())
    }
}

/// `1.19 (N-n) h2(delta)`.
pub fn syndrome_floor(remaining_bits: u64, delta: f64) -> f64 {
    SYNDROME_EFFICIENCY * remaining_bits as f64 * h2(delta)
}

/// The composable failure budget `eps_auth + eps_ec + eps_pa + 2 eps_pe`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub eps_auth: f64,
    pub eps_ec: f64,
    pub eps_pa: f64,
    pub eps_pe: f64,
    pub eps_total: f64,
    pub eps_qkd: f64,
}

impl EpsilonBudget {
    pub fn compose(eps_auth: f64, eps_ec: f64, eps_pa: f64, eps_pe: f64, eps_qkd: f64) -> Self {
        EpsilonBudget {
            eps_auth,
            eps_ec,
            eps_pa,
            eps_pe,
            eps_total: eps_auth + eps_ec + eps_pa + 2.0 * eps_pe,
            eps_qkd,
        }
    }

    pub fn within(&self, slack: f64) -> bool {
        self.eps_total <= self.eps_qkd * (1.0 + slack)
    }
}

/// QBER bookkeeping for one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberSymbols {
    /// Measured QBER on the `n` sampled bits.
    pub alpha: f64,
    /// QBER on the `N - n` key bits.
    pub beta: f64,
    /// QBER over all `N` bits.
    pub gamma_tot: f64,
    /// Total error count `N * gamma_tot`.
    pub total_errors: u64,
    pub nu: f64,
    pub mu: f64,
}

impl QberSymbols {
    /// Builds the symbols from error counts, so `N gamma = (N-n) beta + n alpha` holds exactly.
    pub fn from_counts(sample_errors: u64, sample_bits: u64, key_errors: u64, key_bits: u64) -> Self {
        let total = sample_bits + key_bits;
        QberSymbols {
            alpha: sample_errors as f64 / sample_bits as f64,
            beta: if key_bits == 0 { 0.0 } else { key_errors as f64 / key_bits as f64 },
            gamma_tot: (sample_errors + key_errors) as f64 / total as f64,
            total_errors: sample_errors + key_errors,
            nu: 0.0,
            mu: 0.0,
        }
    }
}

/// Minimum error count `N(delta+nu) - n nu` compatible with the bad event.
pub fn bad_event_error_count(delta: f64, nu: f64, raw_bits: u64, sample_bits: u64) -> f64 {
    raw_bits as f64 * (delta + nu) - sample_bits as f64 * nu
}

/// Unchecked binary entropy for hot loops; callers guarantee `0 <= x <= 1`.
#[inline]
pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let ln2 = std::f64::consts::LN_2;
    -(x * x.ln() + (1.0 - x) * (-x).ln_1p()) / ln2
}

pub fn binary_entropy(x: f64) -> Result<f64, BoundsError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("binary entropy argument", x));
    }
    Ok(h2(x))
}

/// `q 2^-p`, saturating at 1.
pub fn eps_auth(tag_count: u32, tag_bits: u32) -> f64 {
    (f64::from(tag_count) * 2f64.powi(-(tag_bits as i32))).min(1.0)
}

/// `t = ceil((s+2) log2 10)`.
pub fn verify_bits_for(s: u32) -> u32 {
    (f64::from(s + 2) * std::f64::consts::LOG2_10).ceil() as u32
}

/// Returns `(t, 2^-t)`.
pub fn eps_ec_and_t(s: u32) -> (u32, f64) {
    let t = verify_bits_for(s);
    (t, 2f64.powi(-(t as i32)))
}

/// `log2` of the privacy-amplification failure probability (before clamping).
pub fn log2_eps_pa(length: u64, t: u32, nu: f64, delta: f64, r: u64, remaining_bits: u64) -> f64 {
    let entropy = h2(delta + nu);
    // integer part is exact; only n*h2 carries rounding
    let exponent = (r + u64::from(t) + length) as f64 - remaining_bits as f64
        + remaining_bits as f64 * entropy;
    0.5 * exponent - 1.0
}

/// `1/2 sqrt(2^(-(N-n)(1-h2(delta+nu)) + r + t + l))`.
///
/// `remaining_bits` is `N - n`; with the fixed `n = N/2` split this is also `n`.
pub fn eps_pa(length: u64, t: u32, nu: f64, delta: f64, r: u64, remaining_bits: u64) -> Result<f64, BoundsError> {
    if length == 0 {
        return Err(BoundsError::InvalidParams("key length must be positive".into()));
    }
    if nu < 0.0 || delta < 0.0 || delta + nu >= 0.5 {
        return Err(domain("delta + nu", delta + nu));
    }
    Ok(log2_eps_pa(length, t, nu, delta, r, remaining_bits).exp2().min(1.0))
}

/// Serfling plus Hush-Scovel bound `sqrt(theta1 + theta2)`.
pub fn eps_pe_serfling(nu: f64, mu: f64, delta: f64, raw_bits: u64, sample_bits: u64) -> Result<f64, BoundsError> {
    if !(mu > 0.0 && mu < nu) {
        return Err(domain("mu", mu));
    }
    if delta < 0.0 || delta + mu >= 1.0 {
        return Err(domain("delta + mu", delta + mu));
    }
    if sample_bits >= raw_bits {
        return Err(BoundsError::InvalidParams("need n < N".into()));
    }
    Ok(serfling_unchecked(nu, mu, delta, raw_bits as f64, sample_bits as f64))
}

#[inline]
pub(crate) fn serfling_unchecked(nu: f64, mu: f64, delta: f64, big_n: f64, n: f64) -> f64 {
    // the Gamma term is taken over the full population N
    let errors = (big_n * (delta + mu)).floor();
    let gamma = 1.0 / (errors + 1.0) + 1.0 / (big_n - errors + 1.0);
    let theta1 = (-2.0 * big_n * n * mu * mu / (big_n - n + 1.0)).exp();
    let spread = (big_n - n) * (nu - mu);
    let theta2 = (-2.0 * gamma * (spread * spread - 1.0)).exp();
    (theta1 + theta2).sqrt().min(1.0)
}

/// Relaxed-Chernoff upper confidence bound on the total QBER.
pub fn gamma_plus_chernoff(delta: f64, eps: f64, sample_bits: u64) -> Result<f64, BoundsError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(domain("eps", eps));
    }
    if sample_bits == 0 {
        return Err(BoundsError::InvalidParams("n must be positive".into()));
    }
    Ok(gamma_plus_from_log(delta, -eps.ln(), sample_bits as f64))
}

/// Same bound parameterized by `y = ln(1/eps)`.
#[inline]
pub(crate) fn gamma_plus_from_log(delta: f64, y: f64, n: f64) -> f64 {
    let kappa = 2.0 * y / (9.0 * n);
    let root = (kappa * (kappa + delta - delta * delta)).max(0.0).sqrt();
    (3.0 * kappa + (1.0 - 2.0 * kappa) * delta + 3.0 * root) / (1.0 + 4.0 * kappa)
}

/// `nu = N (Gamma+ - delta) / (N - n)`.
pub fn nu_from_gamma(gamma_plus: f64, delta: f64, raw_bits: u64, sample_bits: u64) -> Result<f64, BoundsError> {
    if gamma_plus < delta {
        return Err(domain("gamma_plus - delta", gamma_plus - delta));
    }
    if sample_bits >= raw_bits {
        return Err(BoundsError::InvalidParams("need n < N".into()));
    }
    let big_n = raw_bits as f64;
    Ok(big_n * (gamma_plus - delta) / (big_n - sample_bits as f64))
}

/// Inverts the Chernoff bound: finds `eps` whose predicted deviation matches `nu`.
///
/// Bisection on `y = ln(1/eps)` over `[0, 1000]`; larger `y` predicts larger `nu`.
pub fn eps_pe_chernoff(delta: f64, nu: f64, raw_bits: u64, sample_bits: u64, tol: f64) -> Result<f64, BoundsError> {
    if !(nu > 0.0) {
        return Err(domain("nu", nu));
    }
    if !(tol > 0.0) {
        return Err(domain("tol", tol));
    }
    if sample_bits >= raw_bits {
        return Err(BoundsError::InvalidParams("need n < N".into()));
    }
    let big_n = raw_bits as f64;
    let n = sample_bits as f64;
    let scale = big_n / (big_n - n);
    let (mut lo, mut hi) = (0.0f64, CHERNOFF_Y_MAX);
    let mut mid = 0.5 * (lo + hi);
    let mut predicted = f64::NAN;
    for _ in 0..CHERNOFF_MAX_ITERS {
        mid = 0.5 * (lo + hi);
        predicted = scale * (gamma_plus_from_log(delta, mid, n) - delta);
        if (predicted - nu).abs() < tol {
            return Ok((-mid).exp());
        }
        if predicted < nu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let _ = mid;
    Err(BoundsError::NoConvergence { target: nu, achieved: predicted })
}

/// How `delta n` becomes the integer observation in the CP tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XObsRule {
    /// `floor(delta n)`.
    #[default]
    Floor,
    /// `round(delta n)`, kept for compatibility with rounding implementations.
    Round,
}

impl XObsRule {
    pub fn apply(self, delta: f64, sample_bits: u64) -> i64 {
        let raw = delta * sample_bits as f64;
        match self {
            // delta is usually count/n; absorb the representation error of that ratio
            XObsRule::Floor => (raw + 1e-9).floor() as i64,
            XObsRule::Round => raw.round() as i64,
        }
    }
}

/// How the deviation becomes the total error count `K` in the CP tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCountRule {
    /// `K = N(delta+nu) - n nu`: remainder QBER `delta+nu`, sample QBER `delta`.
    #[default]
    Derived,
    /// `K = N(delta+nu) + n nu`. Overstates `K`, so the tail is optimistic;
    /// kept because it reproduces published CP key lengths.
    SampleAdded,
}

impl ErrorCountRule {
    pub fn count(self, delta: f64, nu: f64, raw_bits: u64, sample_bits: u64) -> f64 {
        match self {
            ErrorCountRule::Derived => bad_event_error_count(delta, nu, raw_bits, sample_bits),
            ErrorCountRule::SampleAdded => raw_bits as f64 * (delta + nu) + sample_bits as f64 * nu,
        }
    }
}

impl std::str::FromStr for ErrorCountRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "derived" => Ok(ErrorCountRule::Derived),
            "sample_added" => Ok(ErrorCountRule::SampleAdded),
            other => Err(format!("unknown error-count rule `{other}` (derived, sample_added)")),
        }
    }
}

/// Error count `K = round(N(delta+nu) - n nu)`, clamped to `[0, N]`.
pub fn cp_error_count(delta: f64, nu: f64, raw_bits: u64, sample_bits: u64) -> u64 {
    cp_error_count_with(delta, nu, raw_bits, sample_bits, ErrorCountRule::Derived)
}

pub fn cp_error_count_with(delta: f64, nu: f64, raw_bits: u64, sample_bits: u64, rule: ErrorCountRule) -> u64 {
    let k = rule.count(delta, nu, raw_bits, sample_bits).round();
    k.clamp(0.0, raw_bits as f64) as u64
}

/// Exact Clopper-Pearson failure probability `Pr[alpha <= delta | N, K, n]`.
pub fn eps_pe_cp(delta: f64, nu: f64, raw_bits: u64, sample_bits: u64) -> Result<f64, BoundsError> {
    eps_pe_cp_with(delta, nu, raw_bits, sample_bits, XObsRule::Floor, ErrorCountRule::Derived, HypergeomMethod::default())
}

pub fn eps_pe_cp_with(
    delta: f64,
    nu: f64,
    raw_bits: u64,
    sample_bits: u64,
    rule: XObsRule,
    count: ErrorCountRule,
    method: HypergeomMethod,
) -> Result<f64, BoundsError> {
    if nu < 0.0 || nu.is_nan() {
        return Err(domain("nu", nu));
    }
    if sample_bits > raw_bits {
        return Err(BoundsError::InvalidParams("need n <= N".into()));
    }
    let k = cp_error_count_with(delta, nu, raw_bits, sample_bits, count);
    let x_obs = rule.apply(delta, sample_bits);
    hypergeom_cdf_with(x_obs, raw_bits, k, sample_bits, method)
}
