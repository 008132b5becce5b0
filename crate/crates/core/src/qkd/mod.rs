//! Simulated sifted keys and their classical post-processing.

pub mod ldpc;
pub mod toeplitz;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, random_bits, BitSlice, Bits};
use crate::bounds::{SecurityParams, QBER_THRESHOLD};
use crate::optimizer::{optimize, OptimizationResult, OptimizerConfig, OptimizerError};

pub use ldpc::ParityCheckMatrix;
pub use toeplitz::{privacy_amplify, toeplitz_hash, verify_correction};

pub const DEFAULT_BP_ITERS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QkdError {
    #[error("{what} out of range: {value}")]
    Range { what: &'static str, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("requested {requested} bits from a {available}-bit input")]
    LengthExceedsInput { requested: usize, available: usize },
    #[error("parity-check code: {0}")]
    Code(String),
    #[error("decoder found no codeword consistent with the syndrome")]
    DetectableFailure,
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawKeyPair {
    pub alice_bits: Bits,
    pub bob_bits: Bits,
    pub true_qber: f64,
    pub rng_seed: u64,
}

impl RawKeyPair {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    /// Mismatch fraction over the whole string.
    pub fn empirical_qber(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        bits::hamming(&self.alice_bits, &self.bob_bits) as f64 / self.len() as f64
    }
}

/// Alice's bits are uniform; Bob's flip each bit independently with probability `qber`.
pub fn simulate_raw_keys(n_total: usize, qber: f64, seed: u64) -> Result<RawKeyPair, QkdError> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(QkdError::Range { what: "qber", value: qber });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let alice_bits = random_bits(&mut rng, n_total);
    let bob_bits = alice_bits.iter().map(|b| *b ^ rng.gen_bool(qber)).collect();
    Ok(RawKeyPair { alice_bits, bob_bits, true_qber: qber, rng_seed: seed })
}

/// Sampled and kept positions, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub sample: Vec<usize>,
    pub remainder: Vec<usize>,
}

/// Draws `n` of `n_total` positions uniformly without replacement.
pub fn draw_sample<R: RngCore + ?Sized>(n_total: usize, n: usize, rng: &mut R) -> Result<SampleSplit, QkdError> {
    if n > n_total {
        return Err(QkdError::LengthExceedsInput { requested: n, available: n_total });
    }
    let mut sample = index::sample(rng, n_total, n).into_vec();
    sample.sort_unstable();
    let mut taken = vec![false; n_total];
    for &i in &sample {
        taken[i] = true;
    }
    let remainder = (0..n_total).filter(|&i| !taken[i]).collect();
    Ok(SampleSplit { sample, remainder })
}

/// Mismatch fraction between two disclosed samples.
pub fn estimate_qber(alice_sample: &BitSlice, bob_sample: &BitSlice) -> f64 {
    if alice_sample.is_empty() {
        return 0.0;
    }
    bits::hamming(alice_sample, bob_sample) as f64 / alice_sample.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub alpha: f64,
    pub split: SampleSplit,
}

impl SampleEstimate {
    pub fn exceeds_threshold(&self) -> bool {
        self.alpha > QBER_THRESHOLD
    }
}

pub fn sample_and_estimate(pair: &RawKeyPair, n: usize, seed: u64) -> Result<SampleEstimate, QkdError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let split = draw_sample(pair.len(), n, &mut rng)?;
    let alpha = estimate_qber(
        &bits::select(&pair.alice_bits, &split.sample),
        &bits::select(&pair.bob_bits, &split.sample),
    );
    Ok(SampleEstimate { alpha, split })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Completed,
    AbortQber,
    AbortEcDetectable,
    AbortVerify,
    AbortInfeasible,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Completed => "completed",
            SessionStatus::AbortQber => "abort_qber",
            SessionStatus::AbortEcDetectable => "abort_ec_detectable",
            SessionStatus::AbortVerify => "abort_verify",
            SessionStatus::AbortInfeasible => "abort_infeasible",
        }
    }
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub status: SessionStatus,
    pub alpha: f64,
    /// Alice's key; empty unless completed.
    pub final_key: Bits,
    /// Bob's key; empty unless completed.
    pub peer_key: Bits,
    pub report: Option<OptimizationResult>,
    /// Reconciliation bits disclosed: syndrome plus verification hash.
    pub leaked_bits: u64,
}

impl SessionOutcome {
    fn abort(status: SessionStatus, alpha: f64, report: Option<OptimizationResult>, leaked_bits: u64) -> Self {
        SessionOutcome { status, alpha, final_key: Bits::new(), peer_key: Bits::new(), report, leaked_bits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Grid, bound and slack; its parameters are replaced per session.
    pub optimizer: OptimizerConfig,
    pub max_bp_iters: usize,
    pub seed: u64,
}

/// One post-processing session with both parties' views held locally.
///
/// Sampling, estimation, `delta := alpha`, key-length optimization,
/// syndrome decoding, hash verification and Toeplitz compression, in that
/// order. Aborts come back as statuses with no key material.
pub fn run_qkd_session(
    params: &SecurityParams,
    pair: &RawKeyPair,
    code: &ParityCheckMatrix,
    cfg: &SessionConfig,
) -> Result<SessionOutcome, QkdError> {
    if pair.len() as u64 != params.raw_bits {
        return Err(QkdError::Dimension { expected: params.raw_bits as usize, got: pair.len() });
    }
    if code.num_cols() as u64 != params.remaining_bits() || code.num_rows() as u64 != params.syndrome_bits {
        return Err(QkdError::Dimension { expected: params.remaining_bits() as usize, got: code.num_cols() });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let split = draw_sample(pair.len(), params.sample_bits as usize, &mut rng)?;
    let alpha = estimate_qber(
        &bits::select(&pair.alice_bits, &split.sample),
        &bits::select(&pair.bob_bits, &split.sample),
    );
    if alpha > QBER_THRESHOLD {
        return Ok(SessionOutcome::abort(SessionStatus::AbortQber, alpha, None, 0));
    }

    let mut opt = cfg.optimizer;
    opt.params = params.with_delta(alpha);
    let report = optimize(&opt)?;
    let Some(l) = report.l_max else {
        return Ok(SessionOutcome::abort(SessionStatus::AbortInfeasible, alpha, Some(report), 0));
    };

    let x = bits::select(&pair.alice_bits, &split.remainder);
    let y = bits::select(&pair.bob_bits, &split.remainder);
    let syndrome = code.syndrome(&x)?;
    let mut leaked = syndrome.len() as u64;
    let corrected = match code.decode(&y, &syndrome, cfg.max_bp_iters, alpha) {
        Ok(c) => c,
        Err(QkdError::DetectableFailure) => {
            return Ok(SessionOutcome::abort(SessionStatus::AbortEcDetectable, alpha, Some(report), leaked))
        }
        Err(e) => return Err(e),
    };

    let t = params.verify_bits as usize;
    let verify_seed = random_bits(&mut rng, toeplitz::seed_len(x.len(), t));
    leaked += t as u64;
    if !verify_correction(&x, &corrected, t, &verify_seed)? {
        return Ok(SessionOutcome::abort(SessionStatus::AbortVerify, alpha, Some(report), leaked));
    }

    let pa_seed = random_bits(&mut rng, toeplitz::seed_len(x.len(), l as usize));
    let final_key = privacy_amplify(&x, l as usize, &pa_seed)?;
    let peer_key = privacy_amplify(&corrected, l as usize, &pa_seed)?;
    Ok(SessionOutcome {
        status: SessionStatus::Completed,
        alpha,
        final_key,
        peer_key,
        report: Some(report),
        leaked_bits: leaked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::PeType;

    #[test]
    fn clean_channel_gives_identical_strings() {
        let pair = simulate_raw_keys(1000, 0.0, 1).unwrap();
        assert_eq!(pair.alice_bits, pair.bob_bits);
        assert!(simulate_raw_keys(10, 0.6, 1).is_err());
        assert!(simulate_raw_keys(10, -0.1, 1).is_err());
    }

    #[test]
    fn simulation_is_seeded() {
        assert_eq!(simulate_raw_keys(500, 0.1, 7).unwrap(), simulate_raw_keys(500, 0.1, 7).unwrap());
        assert_ne!(simulate_raw_keys(500, 0.1, 7).unwrap(), simulate_raw_keys(500, 0.1, 8).unwrap());
    }

    #[test]
    fn full_sample_sees_total_qber() {
        let pair = simulate_raw_keys(400, 0.2, 3).unwrap();
        let est = sample_and_estimate(&pair, 400, 5).unwrap();
        assert_eq!(est.alpha, pair.empirical_qber());
        assert!(est.split.remainder.is_empty());
    }

    #[test]
    fn split_partitions_positions() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let s = draw_sample(101, 50, &mut rng).unwrap();
        let mut all: Vec<usize> = s.sample.iter().chain(&s.remainder).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert!(draw_sample(10, 11, &mut rng).is_err());
    }

    #[test]
    fn session_rejects_mismatched_code() {
        let params = SecurityParams::new(6, 2000, 0.0);
        let pair = simulate_raw_keys(2000, 0.0, 1).unwrap();
        let cfg = SessionConfig {
            optimizer: OptimizerConfig::coarse(params, PeType::CpExact),
            max_bp_iters: 10,
            seed: 1,
        };
        assert!(run_qkd_session(&params, &pair, ParityCheckMatrix::default_code(), &cfg).is_err());
    }
}
