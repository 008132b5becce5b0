//! Toeplitz hashing over GF(2).
//!
//! A seed of `n + l - 1` bits defines the `l x n` matrix
//! `T[i][j] = seed[i - j + n - 1]`. The seed with only bit `n - 1` set gives
//! the identity when `l = n`.

use super::QkdError;
use crate::bits::{to_words_lsb, window64, BitSlice, Bits};

pub fn seed_len(input_len: usize, output_len: usize) -> usize {
    (input_len + output_len).saturating_sub(1)
}

/// `T x` for the Toeplitz matrix defined by `seed`.
pub fn toeplitz_hash(input: &BitSlice, output_len: usize, seed: &BitSlice) -> Result<Bits, QkdError> {
    let n = input.len();
    if output_len == 0 || n == 0 {
        return Ok(Bits::new());
    }
    if seed.len() != seed_len(n, output_len) {
        return Err(QkdError::Dimension { expected: seed_len(n, output_len), got: seed.len() });
    }
    // out_i = XOR_k seed[i + k] & x[n - 1 - k]
    let reversed: Bits = input.iter().rev().map(|b| *b).collect();
    let x_words = to_words_lsb(&reversed);
    let seed_words = to_words_lsb(seed);
    let full = n / 64;
    let tail_mask = match n % 64 {
        0 => 0,
        r => (1u64 << r) - 1,
    };
    Ok((0..output_len)
        .map(|i| {
            let mut acc = 0u64;
            for w in 0..full {
                acc ^= window64(&seed_words, i + 64 * w) & x_words[w];
            }
            if tail_mask != 0 {
                acc ^= window64(&seed_words, i + 64 * full) & x_words[full] & tail_mask;
            }
            acc.count_ones() & 1 == 1
        })
        .collect())
}

/// Compresses the reconciled key to `l` bits.
pub fn privacy_amplify(key: &BitSlice, l: usize, seed: &BitSlice) -> Result<Bits, QkdError> {
    if l > key.len() {
        return Err(QkdError::LengthExceedsInput { requested: l, available: key.len() });
    }
    toeplitz_hash(key, l, seed)
}

/// Compares `t`-bit hashes of both strings under a shared seed.
pub fn verify_correction(alice: &BitSlice, bob: &BitSlice, t: usize, seed: &BitSlice) -> Result<bool, QkdError> {
    if alice.len() != bob.len() {
        return Err(QkdError::Dimension { expected: alice.len(), got: bob.len() });
    }
    Ok(toeplitz_hash(alice, t, seed)? == toeplitz_hash(bob, t, seed)?)
}
