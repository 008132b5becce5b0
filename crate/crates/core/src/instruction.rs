//! Instruction sequences: balanced cipher orderings with no step repeated back to back.
//!
//! For security parameter `n_obs` a sequence holds `gamma = ceil(n_obs/2)`
//! steps of each cipher. The first `2^n_obs` sequences in lexicographic order
//! (OTP < AES < ASCON) are addressed by an `n_obs`-bit index.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, BitSlice, Bits};

/// Largest `n_obs` whose counts fit the `u128` arithmetic used here.
pub const MAX_SUPPORTED_NOBS: u32 = 40;
pub const DEFAULT_MAX_NOBS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsError {
    #[error("n_obs = {0} is not in {{0, 2, 3, ...}}")]
    InvalidNobs(u32),
    #[error("n_obs = {n_obs} exceeds the supported maximum {max}")]
    TooLarge { n_obs: u32, max: u32 },
    #[error("only {count} valid sequences for n_obs = {n_obs}, need 2^n_obs")]
    Capacity { n_obs: u32, count: u128 },
    #[error("index {index} out of range for n_obs = {n_obs}")]
    IndexRange { index: u128, n_obs: u32 },
    #[error("pad has {got} bits, need {expected}")]
    PadLength { expected: usize, got: usize },
    #[error("sequence is not balanced or repeats a step")]
    Malformed,
    #[error("unknown step `{0}`")]
    UnknownStep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cipher {
    Otp = 0,
    Aes = 1,
    Ascon = 2,
}

impl Cipher {
    pub const ALL: [Cipher; 3] = [Cipher::Otp, Cipher::Aes, Cipher::Ascon];

    pub fn tag(self) -> &'static str {
        match self {
            Cipher::Otp => "OTP",
            Cipher::Aes => "AES",
            Cipher::Ascon => "ASCON",
        }
    }
}

impl fmt::Display for Cipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Cipher {
    type Err = IsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OTP" => Ok(Cipher::Otp),
            "AES" => Ok(Cipher::Aes),
            "ASCON" => Ok(Cipher::Ascon),
            other => Err(IsError::UnknownStep(other.to_string())),
        }
    }
}

pub fn gamma(n_obs: u32) -> u32 {
    n_obs.div_ceil(2)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionSequence {
    pub steps: Vec<Cipher>,
    pub n_obs: u32,
}

impl InstructionSequence {
    pub fn gamma(&self) -> u32 {
        gamma(self.n_obs)
    }

    pub fn count_of(&self, c: Cipher) -> usize {
        self.steps.iter().filter(|&&s| s == c).count()
    }

    /// Balanced with `gamma` of each cipher and no repeated neighbours.
    pub fn is_valid(&self) -> bool {
        let g = self.gamma() as usize;
        self.steps.len() == 3 * g
            && Cipher::ALL.iter().all(|&c| self.count_of(c) == g)
            && self.steps.windows(2).all(|w| w[0] != w[1])
    }

    /// Parses `OTP>AES>ASCON`.
    pub fn parse(text: &str, n_obs: u32) -> Result<Self, IsError> {
        let steps = if text.trim().is_empty() {
            Vec::new()
        } else {
            text.split('>').map(str::parse).collect::<Result<Vec<_>, _>>()?
        };
        let is = InstructionSequence { steps, n_obs };
        if is.is_valid() {
            Ok(is)
        } else {
            Err(IsError::Malformed)
        }
    }
}

impl fmt::Display for InstructionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<&str> = self.steps.iter().map(|c| c.tag()).collect();
        f.write_str(&tags.join(">"))
    }
}

fn check_nobs(n_obs: u32) -> Result<(), IsError> {
    if n_obs == 1 {
        return Err(IsError::InvalidNobs(n_obs));
    }
    if n_obs > MAX_SUPPORTED_NOBS {
        return Err(IsError::TooLarge { n_obs, max: MAX_SUPPORTED_NOBS });
    }
    Ok(())
}

/// Completion counts keyed by remaining per-cipher counts and the previous step.
struct Completions {
    memo: HashMap<([u32; 3], Option<Cipher>), u128>,
}

impl Completions {
    fn new() -> Self {
        Completions { memo: HashMap::new() }
    }

    fn count(&mut self, left: [u32; 3], last: Option<Cipher>) -> u128 {
        if left == [0, 0, 0] {
            return 1;
        }
        if let Some(&v) = self.memo.get(&(left, last)) {
            return v;
        }
        let mut total = 0u128;
        for c in Cipher::ALL {
            let i = c as usize;
            if Some(c) != last && left[i] > 0 {
                let mut next = left;
                next[i] -= 1;
                total += self.count(next, Some(c));
            }
        }
        self.memo.insert((left, last), total);
        total
    }
}

/// Number of balanced, repeat-free sequences for `n_obs`.
pub fn count_valid(n_obs: u32) -> Result<u128, IsError> {
    check_nobs(n_obs)?;
    let g = gamma(n_obs);
    Ok(Completions::new().count([g; 3], None))
}

/// Fails unless the family can address every `n_obs`-bit index.
pub fn check_capacity(n_obs: u32) -> Result<(), IsError> {
    let count = count_valid(n_obs)?;
    if count < 1u128 << n_obs {
        return Err(IsError::Capacity { n_obs, count });
    }
    Ok(())
}

pub fn unrank(mut index: u128, n_obs: u32) -> Result<InstructionSequence, IsError> {
    check_capacity(n_obs)?;
    if index >= 1u128 << n_obs {
        return Err(IsError::IndexRange { index, n_obs });
    }
    let g = gamma(n_obs);
    let mut table = Completions::new();
    let mut left = [g; 3];
    let mut last = None;
    let mut steps = Vec::with_capacity(3 * g as usize);
    for _ in 0..3 * g {
        let mut chosen = None;
        for c in Cipher::ALL {
            let i = c as usize;
            if Some(c) == last || left[i] == 0 {
                continue;
            }
            let mut next = left;
            next[i] -= 1;
            let n = table.count(next, Some(c));
            if index < n {
                chosen = Some((c, next));
                break;
            }
            index -= n;
        }
        let (c, next) = chosen.expect("index below the family size always resolves");
        steps.push(c);
        left = next;
        last = Some(c);
    }
    Ok(InstructionSequence { steps, n_obs })
}

pub fn rank(is: &InstructionSequence) -> Result<u128, IsError> {
    check_nobs(is.n_obs)?;
    if !is.is_valid() {
        return Err(IsError::Malformed);
    }
    let mut table = Completions::new();
    let mut left = [is.gamma(); 3];
    let mut last = None;
    let mut index = 0u128;
    for &step in &is.steps {
        for c in Cipher::ALL {
            if c == step {
                break;
            }
            let i = c as usize;
            if Some(c) != last && left[i] > 0 {
                let mut next = left;
                next[i] -= 1;
                index += table.count(next, Some(c));
            }
        }
        left[step as usize] -= 1;
        last = Some(step);
    }
    Ok(index)
}

/// `index` as an `n_obs`-bit string XOR `pad`; the same call decrypts.
pub fn encrypt_is(index: u128, n_obs: u32, pad: &BitSlice) -> Result<Bits, IsError> {
    if pad.len() != n_obs as usize {
        return Err(IsError::PadLength { expected: n_obs as usize, got: pad.len() });
    }
    if n_obs < 128 && index >= 1u128 << n_obs {
        return Err(IsError::IndexRange { index, n_obs });
    }
    Ok(bits::xor(&bits::from_u128(index, n_obs as usize), pad))
}

pub fn decrypt_is(cipher: &BitSlice, pad: &BitSlice) -> Result<u128, IsError> {
    if pad.len() != cipher.len() {
        return Err(IsError::PadLength { expected: cipher.len(), got: pad.len() });
    }
    Ok(bits::to_u128(&bits::xor(cipher, pad)))
}
