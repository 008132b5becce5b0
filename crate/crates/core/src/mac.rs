//! Wegman-Carter authentication: a polynomial hash over GF(2^61) masked by a one-time pad.

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::bits::{self, BitSlice};

pub const TAG_BITS: usize = 61;
/// Hash key plus pad.
pub const MAC_KEY_BITS: usize = 2 * TAG_BITS;
/// Low terms of the field modulus `x^61 + x^5 + x^2 + x + 1`.
pub const MODULUS_LOW: u64 = (1 << 5) | (1 << 2) | (1 << 1) | 1;
const FIELD_MASK: u64 = (1 << TAG_BITS) - 1;
/// Message bytes per field element; 56 bits always fit below the modulus degree.
const BLOCK_BYTES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacError {
    #[error("MAC key must be {MAC_KEY_BITS} bits, got {0}")]
    KeyLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacTag {
    pub tag: u64,
    /// Ledger offset of the key that produced the tag, when known.
    pub key_offset: Option<u64>,
}

impl MacTag {
    pub fn to_bytes(self) -> [u8; 8] {
        self.tag.to_be_bytes()
    }

    /// Keeps all 64 bits, so a tag with any of the top three set never verifies.
    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        MacTag { tag: u64::from_be_bytes(bytes), key_offset: None }
    }
}

/// Product in GF(2^61).
pub fn gf_mul(a: u64, b: u64) -> u64 {
    let (a, b) = (a & FIELD_MASK, b & FIELD_MASK);
    let mut wide = 0u128;
    for i in 0..TAG_BITS {
        if (b >> i) & 1 == 1 {
            wide ^= u128::from(a) << i;
        }
    }
    reduce(wide)
}

fn reduce(mut wide: u128) -> u64 {
    // x^61 = x^5 + x^2 + x + 1; two folds clear everything above bit 60
    for _ in 0..2 {
        let high = wide >> TAG_BITS;
        wide &= u128::from(FIELD_MASK);
        let low = u128::from(MODULUS_LOW);
        let mut folded = 0u128;
        for i in 0..=5 {
            if (low >> i) & 1 == 1 {
                folded ^= high << i;
            }
        }
        wide ^= folded;
    }
    wide as u64
}

/// `a^e` in GF(2^61).
pub fn gf_pow(mut a: u64, mut e: u128) -> u64 {
    let mut acc = 1u64;
    while e > 0 {
        if e & 1 == 1 {
            acc = gf_mul(acc, a);
        }
        a = gf_mul(a, a);
        e >>= 1;
    }
    acc
}

/// Polynomial evaluation of the 7-byte blocks and a trailing length block at `key`.
pub fn poly_hash(key: u64, message: &[u8]) -> u64 {
    let mut acc = 0u64;
    for chunk in message.chunks(BLOCK_BYTES) {
        let mut block = [0u8; 8];
        block[8 - chunk.len()..].copy_from_slice(chunk);
        // a short final chunk is left-aligned so trailing zeros still change the value
        let value = u64::from_be_bytes(block) << (8 * (BLOCK_BYTES - chunk.len()));
        acc = gf_mul(acc ^ value, key);
    }
    gf_mul(acc ^ (message.len() as u64 & FIELD_MASK), key)
}

fn split_key(key: &BitSlice) -> Result<(u64, u64), MacError> {
    if key.len() != MAC_KEY_BITS {
        return Err(MacError::KeyLength(key.len()));
    }
    let hash_key = bits::to_u128(&key[..TAG_BITS]) as u64;
    let pad = bits::to_u128(&key[TAG_BITS..]) as u64;
    Ok((hash_key, pad))
}

pub fn wc_mac(key: &BitSlice, message: &[u8]) -> Result<MacTag, MacError> {
    let (hash_key, pad) = split_key(key)?;
    Ok(MacTag { tag: poly_hash(hash_key, message) ^ pad, key_offset: None })
}

/// Recomputes the tag and compares in constant time.
pub fn wc_verify(key: &BitSlice, message: &[u8], tag: &MacTag) -> bool {
    match wc_mac(key, message) {
        Ok(expected) => bool::from(expected.tag.ct_eq(&tag.tag)),
        Err(_) => false,
    }
}
