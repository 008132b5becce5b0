//! Cascade encryption driven by an instruction sequence.
//!
//! The message is padded to a 16-byte multiple and then passed through each
//! step in order. Step `p` (0-based position in the sequence) uses counter
//! `p`: AES builds its counter blocks from it and Ascon uses nonce
//! `v' || (counter_seed + p mod 256)`. Ascon tags are detached and appended
//! after the body in step order, so later layers only ever see the body.
//! The `k`-th OTP step consumes the `k`-th QKD key.
//!
//! Envelope wire layout: `[u32 BE ct len][ct][15-byte sid][16-byte v]
//! [u16 BE ad len][ad][1-byte pad_size]`.

pub mod legacy;
pub mod primitives;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::instruction::{Cipher, InstructionSequence};
use crate::pqc::SplitSecret;

pub use legacy::{legacy_layer_sizes, legacy_size_model, LegacyLayer, LegacySizeModel};
pub use primitives::{
    aes_ctr_step, ascon_nonce, ascon_open, ascon_step, build_counter_block, chunk_block, otp_step, SID_BYTES,
    SID_LIMIT, TAG_BYTES,
};

pub const PAD_BLOCK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeError {
    #[error("OTP key too short: need {needed} bits, have {available}")]
    InsufficientKey { needed: usize, available: usize },
    #[error("sequence has {otp_steps} OTP steps but {keys} QKD keys were supplied")]
    KeyCount { otp_steps: usize, keys: usize },
    #[error("authentication failed")]
    Authentication,
    #[error("padding is inconsistent")]
    Pad,
    #[error("session id {0} does not fit the counter layout")]
    SidRange(u128),
    #[error("cascade of {0} steps exhausts the 8-bit step counter")]
    TooManySteps(usize),
    #[error("malformed envelope: {0}")]
    Parse(&'static str),
    #[error("instruction sequence is not valid")]
    InvalidSequence,
}

/// Key material for one cascade.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyBundle {
    pub qkd_keys: Vec<Bits>,
    pub aes_key: [u8; 32],
    pub split: SplitSecret,
}

impl std::fmt::Debug for KeyBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let lens: Vec<usize> = self.qkd_keys.iter().map(Bits::len).collect();
        f.debug_struct("KeyBundle").field("qkd_key_bits", &lens).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trailer {
    pub sid: u128,
    pub base_nonce_v: [u8; 16],
    pub associated_data: Vec<u8>,
    pub pad_size: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherEnvelope {
    /// Cascade body followed by one tag per Ascon step.
    pub final_ct: Vec<u8>,
    pub trailer: Trailer,
}

impl CipherEnvelope {
    pub fn encode(&self) -> Vec<u8> {
        let t = &self.trailer;
        let mut out = Vec::with_capacity(4 + self.final_ct.len() + 34 + t.associated_data.len());
        out.extend_from_slice(&(self.final_ct.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.final_ct);
        out.extend_from_slice(&t.sid.to_be_bytes()[16 - SID_BYTES..]);
        out.extend_from_slice(&t.base_nonce_v);
        out.extend_from_slice(&(t.associated_data.len() as u16).to_be_bytes());
        out.extend_from_slice(&t.associated_data);
        out.push(t.pad_size);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, HeError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], HeError> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(HeError::Parse("truncated"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let ct_len = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
        let final_ct = take(ct_len)?.to_vec();
        let mut sid = [0u8; 16];
        sid[16 - SID_BYTES..].copy_from_slice(take(SID_BYTES)?);
        let base_nonce_v: [u8; 16] = take(16)?.try_into().unwrap();
        let ad_len = u16::from_be_bytes(take(2)?.try_into().unwrap()) as usize;
        let associated_data = take(ad_len)?.to_vec();
        let pad_size = take(1)?[0];
        if pos != bytes.len() {
            return Err(HeError::Parse("trailing bytes"));
        }
        Ok(CipherEnvelope {
            final_ct,
            trailer: Trailer { sid: u128::from_be_bytes(sid), base_nonce_v, associated_data, pad_size },
        })
    }
}

/// PKCS#7-style padding to a 16-byte multiple; always adds 1 to 16 bytes.
pub fn pad_message(m: &[u8]) -> (Vec<u8>, u8) {
    let pad = PAD_BLOCK - m.len() % PAD_BLOCK;
    let mut out = m.to_vec();
    out.resize(m.len() + pad, pad as u8);
    (out, pad as u8)
}

pub fn unpad_message(mut padded: Vec<u8>, pad_size: u8) -> Result<Vec<u8>, HeError> {
    let p = pad_size as usize;
    if p == 0 || p > PAD_BLOCK || p > padded.len() || padded.len() % PAD_BLOCK != 0 {
        return Err(HeError::Pad);
    }
    if padded[padded.len() - p..].iter().any(|&b| b != pad_size) {
        return Err(HeError::Pad);
    }
    padded.truncate(padded.len() - p);
    Ok(padded)
}

/// Padded length in bytes for a message of `len` bytes.
pub fn padded_len(len: usize) -> usize {
    len + PAD_BLOCK - len % PAD_BLOCK
}

/// What each step used, for accounting checks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CascadeTrace {
    pub steps: Vec<Cipher>,
    /// Every AES counter block fed to the block cipher.
    pub aes_blocks: Vec<[u8; 16]>,
    pub ascon_nonces: Vec<[u8; 16]>,
    /// Bits drawn from each QKD key.
    pub otp_bits_used: Vec<usize>,
}

fn check_keys(is: &InstructionSequence, keys: &KeyBundle) -> Result<(), HeError> {
    if !is.is_valid() {
        return Err(HeError::InvalidSequence);
    }
    if is.steps.len() > 256 {
        return Err(HeError::TooManySteps(is.steps.len()));
    }
    let otp_steps = is.count_of(Cipher::Otp);
    if otp_steps != keys.qkd_keys.len() {
        return Err(HeError::KeyCount { otp_steps, keys: keys.qkd_keys.len() });
    }
    Ok(())
}

fn ascon_counter(split: &SplitSecret, position: usize) -> u8 {
    split.counter_seed.wrapping_add(position as u8)
}

pub fn he_encrypt(
    is: &InstructionSequence,
    m: &[u8],
    keys: &KeyBundle,
    sid: u128,
    v: [u8; 16],
    ad: &[u8],
) -> Result<CipherEnvelope, HeError> {
    he_encrypt_traced(is, m, keys, sid, v, ad).map(|(env, _)| env)
}

pub fn he_encrypt_traced(
    is: &InstructionSequence,
    m: &[u8],
    keys: &KeyBundle,
    sid: u128,
    v: [u8; 16],
    ad: &[u8],
) -> Result<(CipherEnvelope, CascadeTrace), HeError> {
    check_keys(is, keys)?;
    if sid >= SID_LIMIT {
        return Err(HeError::SidRange(sid));
    }
    if ad.len() > u16::MAX as usize {
        return Err(HeError::Parse("associated data longer than 65535 bytes"));
    }
    let (mut body, pad_size) = pad_message(m);
    let padded_bits = body.len() * 8;
    for key in &keys.qkd_keys {
        if key.len() < padded_bits {
            return Err(HeError::InsufficientKey { needed: padded_bits, available: key.len() });
        }
    }
    let mut trace = CascadeTrace::default();
    let mut tags = Vec::new();
    let mut otp_index = 0;
    for (p, &step) in is.steps.iter().enumerate() {
        trace.steps.push(step);
        body = match step {
            Cipher::Otp => {
                let key = &keys.qkd_keys[otp_index];
                otp_index += 1;
                trace.otp_bits_used.push(padded_bits);
                otp_step(&body, key)?
            }
            Cipher::Aes => {
                let chunks = body.len().div_ceil(primitives::BLOCK_BYTES);
                trace.aes_blocks.extend((0..chunks).map(|j| chunk_block(&v, sid, p as u8, j as u64)));
                aes_ctr_step(&body, &keys.aes_key, &v, sid, p as u8)?
            }
            Cipher::Ascon => {
                let nonce = ascon_nonce(&keys.split.base_nonce_v_prime, ascon_counter(&keys.split, p));
                trace.ascon_nonces.push(nonce);
                let (ct, tag) = ascon_step(&body, &keys.split.pqc_key, &nonce, ad)?;
                tags.extend_from_slice(&tag);
                ct
            }
        };
    }
    body.extend_from_slice(&tags);
    let env = CipherEnvelope {
        final_ct: body,
        trailer: Trailer { sid, base_nonce_v: v, associated_data: ad.to_vec(), pad_size },
    };
    Ok((env, trace))
}

pub fn he_decrypt(env: &CipherEnvelope, is: &InstructionSequence, keys: &KeyBundle) -> Result<Vec<u8>, HeError> {
    check_keys(is, keys)?;
    let t = &env.trailer;
    if t.sid >= SID_LIMIT {
        return Err(HeError::SidRange(t.sid));
    }
    let ascon_steps = is.count_of(Cipher::Ascon);
    let tag_bytes = ascon_steps * TAG_BYTES;
    if env.final_ct.len() < tag_bytes {
        return Err(HeError::Parse("ciphertext shorter than its tags"));
    }
    let (body, tags) = env.final_ct.split_at(env.final_ct.len() - tag_bytes);
    if body.len() % PAD_BLOCK != 0 || body.is_empty() {
        return Err(HeError::Pad);
    }
    let mut body = body.to_vec();
    let mut tag_index = ascon_steps;
    let mut otp_index = keys.qkd_keys.len();
    for (p, &step) in is.steps.iter().enumerate().rev() {
        body = match step {
            Cipher::Otp => {
                otp_index -= 1;
                otp_step(&body, &keys.qkd_keys[otp_index])?
            }
            Cipher::Aes => aes_ctr_step(&body, &keys.aes_key, &t.base_nonce_v, t.sid, p as u8)?,
            Cipher::Ascon => {
                tag_index -= 1;
                let tag: [u8; TAG_BYTES] = tags[tag_index * TAG_BYTES..(tag_index + 1) * TAG_BYTES].try_into().unwrap();
                let nonce = ascon_nonce(&keys.split.base_nonce_v_prime, ascon_counter(&keys.split, p));
                ascon_open(&body, &keys.split.pqc_key, &nonce, &t.associated_data, &tag)?
            }
        };
    }
    unpad_message(body, t.pad_size)
}
