//! Hypergeometric lower-tail probabilities.
//!
//! Small populations are summed exactly over big-integer binomials. Larger
//! ones use Loader's saddle-point expansion for the point mass and a
//! backward ratio series for the tail, which keeps full double precision
//! far out in the tail where naive summation underflows.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use super::BoundsError;

/// Population size up to which [`hypergeom_cdf`] sums exact rationals.
pub const DEFAULT_EXACT_MAX_POPULATION: u64 = 1024;

/// Evaluation strategy for the hypergeometric CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypergeomMethod {
    /// Exact rational arithmetic up to the given population size, saddle-point above.
    Auto { exact_max_population: u64 },
    /// Always exact. Slow for populations in the tens of thousands.
    Exact,
    /// Always saddle-point.
    SaddlePoint,
}

impl Default for HypergeomMethod {
    fn default() -> Self {
        HypergeomMethod::Auto {
            exact_max_population: DEFAULT_EXACT_MAX_POPULATION,
        }
    }
}

/// `Pr[X <= x_obs]` for `X ~ Hypergeometric(population, successes, draws)`.
///
/// `x_obs < 0` is the empty sum.
pub fn hypergeom_cdf(x_obs: i64, population: u64, successes: u64, draws: u64) -> Result<f64, BoundsError> {
    hypergeom_cdf_with(x_obs, population, successes, draws, HypergeomMethod::default())
}

pub fn hypergeom_cdf_with(
    x_obs: i64,
    population: u64,
    successes: u64,
    draws: u64,
    method: HypergeomMethod,
) -> Result<f64, BoundsError> {
    if successes > population || draws > population {
        return Err(BoundsError::InvalidParams(format!(
            "hypergeometric parameters out of range: N={population}, K={successes}, n={draws}"
        )));
    }
    if x_obs < 0 {
        return Ok(0.0);
    }
    let x = x_obs as u64;
    let failures = population - successes;
    let support_lo = draws.saturating_sub(failures);
    let support_hi = successes.min(draws);
    if x < support_lo {
        return Ok(0.0);
    }
    if x >= support_hi {
        return Ok(1.0);
    }
    let exact = match method {
        HypergeomMethod::Exact => true,
        HypergeomMethod::SaddlePoint => false,
        HypergeomMethod::Auto { exact_max_population } => population <= exact_max_population,
    };
    if exact {
        Ok(exact_cdf(x, population, successes, draws))
    } else {
        Ok(saddle_point_cdf(x as f64, successes as f64, failures as f64, draws as f64))
    }
}

/// Exact `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Exact CDF as a rational, for callers that need more than a double.
pub fn hypergeom_cdf_rational(x_obs: u64, population: u64, successes: u64, draws: u64) -> BigRational {
    let failures = population - successes;
    let lo = draws.saturating_sub(failures);
    let hi = x_obs.min(successes).min(draws);
    let mut num = BigUint::zero();
    if hi >= lo {
        for k in lo..=hi {
            num += binomial(successes, k) * binomial(failures, draws - k);
        }
    }
    BigRational::new(num.into(), binomial(population, draws).into())
}

fn exact_cdf(x: u64, population: u64, successes: u64, draws: u64) -> f64 {
    hypergeom_cdf_rational(x, population, successes, draws)
        .to_f64()
        .unwrap_or(f64::NAN)
}

// Stirling-series remainder ln(n!) - ln(sqrt(2 pi n) (n/e)^n) for n = 0..=15.
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081061466795327258,
    0.041340695955409294,
    0.027677925684998339,
    0.020790672103765093,
    0.016644691189821192,
    0.013876128823070748,
    0.01189670994589177,
    0.010411265261972096,
    0.0092554621827127329,
    0.0083305634333628713,
    0.0075736754879518408,
    0.0069428401072095299,
    0.0064089941880042071,
    0.0059513701127588477,
    0.0055547335519628014,
];

fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return STIRLERR_SMALL[n as usize];
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation near `x = np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// ln of the binomial point mass, Loader's form.
fn ln_dbinom_raw(x: f64, n: f64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if x == 0.0 {
        if n == 0.0 {
            return 0.0;
        }
        return if p < 0.1 { -bd0(n, n * q) - n * p } else { n * q.ln() };
    }
    if x == n {
        return if q < 0.1 { -bd0(n, n * p) - n * q } else { n * p.ln() };
    }
    if x < 0.0 || x > n {
        return f64::NEG_INFINITY;
    }
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(x, n * p) - bd0(n - x, n * q);
    let lf = std::f64::consts::TAU.ln() + x.ln() + (-x / n).ln_1p();
    lc - 0.5 * lf
}

fn ln_dhyper(x: f64, red: f64, black: f64, draws: f64) -> f64 {
    if x < 0.0 || x > red || draws - x > black {
        return f64::NEG_INFINITY;
    }
    if draws == 0.0 {
        return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let total = red + black;
    let p = draws / total;
    let q = (total - draws) / total;
    ln_dbinom_raw(x, red, p, q) + ln_dbinom_raw(draws - x, black, p, q)
        - ln_dbinom_raw(draws, total, p, q)
}

/// ln of `sum_{i<=x} P(i) / P(x)` via the backward term ratio.
fn ln_tail_ratio(mut x: f64, red: f64, black: f64, draws: f64) -> f64 {
    let mut sum = 0.0f64;
    let mut term = 1.0f64;
    while x > 0.0 && term >= f64::EPSILON * sum {
        term *= x * (black - draws + x) / (draws + 1.0 - x) / (red + 1.0 - x);
        sum += term;
        x -= 1.0;
    }
    sum.ln_1p()
}

fn saddle_point_cdf(x: f64, red: f64, black: f64, draws: f64) -> f64 {
    let (mut x, mut red, mut black, mut lower) = (x, red, black, true);
    // Sum whichever tail lies away from the mode.
    if x * (red + black) > draws * red {
        std::mem::swap(&mut red, &mut black);
        x = draws - x - 1.0;
        lower = false;
    }
    if x < 0.0 || x < draws - black {
        return if lower { 0.0 } else { 1.0 };
    }
    if x >= red || x >= draws {
        return if lower { 1.0 } else { 0.0 };
    }
    let ln_tail = ln_dhyper(x, red, black, draws) + ln_tail_ratio(x, red, black, draws);
    if lower {
        ln_tail.exp()
    } else {
        -ln_tail.exp_m1()
    }
}
