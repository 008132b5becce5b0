//! The three cascade layers.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes256;
use ascon_aead::aead::AeadInPlace;
use ascon_aead::{Ascon128, Key, Nonce, Tag};

use super::HeError;
use crate::bits::{self, BitSlice};

pub const BLOCK_BYTES: usize = 16;
pub const TAG_BYTES: usize = 16;
pub const SID_BYTES: usize = 15;
/// Largest session id keeping `(sid || i)` clear of the chunk-counter half.
pub const SID_LIMIT: u128 = 1 << 56;

/// `v XOR (sid || i)` with `sid` in the high 120 bits and `i` in the low 8.
pub fn build_counter_block(v: &[u8; 16], sid: u128, i: u8) -> [u8; 16] {
    let word = u128::from_be_bytes(*v) ^ ((sid << 8) | u128::from(i));
    word.to_be_bytes()
}

/// Block for chunk `j`: the chunk counter occupies the upper 64 bits of the XOR pre-image.
pub fn chunk_block(v: &[u8; 16], sid: u128, i: u8, j: u64) -> [u8; 16] {
    let word = u128::from_be_bytes(*v) ^ ((sid << 8) | u128::from(i)) ^ (u128::from(j) << 64);
    word.to_be_bytes()
}

fn check_sid(sid: u128) -> Result<(), HeError> {
    if sid >= SID_LIMIT {
        return Err(HeError::SidRange(sid));
    }
    Ok(())
}

/// Counter-mode keystream XOR; its own inverse.
pub fn aes_ctr_step(data: &[u8], key: &[u8; 32], v: &[u8; 16], sid: u128, i: u8) -> Result<Vec<u8>, HeError> {
    check_sid(sid)?;
    let cipher = Aes256::new(GenericArray::from_slice(key));
    let mut out = data.to_vec();
    for (j, chunk) in out.chunks_mut(BLOCK_BYTES).enumerate() {
        let mut block = GenericArray::from(chunk_block(v, sid, i, j as u64));
        cipher.encrypt_block(&mut block);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
    Ok(out)
}

/// Nonce `v' || counter`.
pub fn ascon_nonce(v_prime: &[u8; 15], counter: u8) -> [u8; 16] {
    let mut n = [0u8; 16];
    n[..15].copy_from_slice(v_prime);
    n[15] = counter;
    n
}

/// Encrypts in place and returns the detached tag.
pub fn ascon_step(data: &[u8], key: &[u8; 16], nonce: &[u8; 16], ad: &[u8]) -> Result<(Vec<u8>, [u8; TAG_BYTES]), HeError> {
    let cipher = Ascon128::new(Key::<Ascon128>::from_slice(key));
    let mut buf = data.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::<Ascon128>::from_slice(nonce), ad, &mut buf)
        .map_err(|_| HeError::Authentication)?;
    Ok((buf, tag.into()))
}

pub fn ascon_open(data: &[u8], key: &[u8; 16], nonce: &[u8; 16], ad: &[u8], tag: &[u8; TAG_BYTES]) -> Result<Vec<u8>, HeError> {
    let cipher = Ascon128::new(Key::<Ascon128>::from_slice(key));
    let mut buf = data.to_vec();
    cipher
        .decrypt_in_place_detached(Nonce::<Ascon128>::from_slice(nonce), ad, &mut buf, Tag::<Ascon128>::from_slice(tag))
        .map_err(|_| HeError::Authentication)?;
    Ok(buf)
}

/// XOR with the leading `8 |data|` key bits.
pub fn otp_step(data: &[u8], key: &BitSlice) -> Result<Vec<u8>, HeError> {
    let needed = data.len() * 8;
    if key.len() < needed {
        return Err(HeError::InsufficientKey { needed, available: key.len() });
    }
    let pad = bits::to_bytes(&key[..needed]);
    Ok(data.iter().zip(pad).map(|(d, k)| d ^ k).collect())
}
