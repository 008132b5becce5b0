//! Ciphertext growth of the earlier cascade that used a public-key layer.
//!
//! A public-key layer turns every 256-bit block into 6144 bits, an AES layer
//! prepends a 128-bit nonce, and an OTP layer keeps the size.

use serde::Serialize;

use crate::instruction::{unrank, Cipher, IsError};

pub const PKE_BLOCK_BITS: u64 = 256;
pub const PKE_OUTPUT_BITS: u64 = 6144;
pub const AES_NONCE_BITS: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LegacyLayer {
    Otp,
    Aes,
    Pke,
}

impl From<Cipher> for LegacyLayer {
    fn from(c: Cipher) -> Self {
        match c {
            Cipher::Otp => LegacyLayer::Otp,
            Cipher::Aes => LegacyLayer::Aes,
            Cipher::Ascon => LegacyLayer::Pke,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LegacySizeModel {
    pub layers: Vec<LegacyLayer>,
    /// Input size followed by the size after each layer, in bits.
    pub sizes: Vec<u64>,
    pub final_bits: u64,
}

pub fn legacy_layer_sizes(layers: &[LegacyLayer], msg_bits: u64) -> LegacySizeModel {
    let mut sizes = vec![msg_bits];
    let mut size = msg_bits;
    for layer in layers {
        size = match layer {
            LegacyLayer::Otp => size,
            LegacyLayer::Aes => size + AES_NONCE_BITS,
            LegacyLayer::Pke => size.div_ceil(PKE_BLOCK_BITS) * PKE_OUTPUT_BITS,
        };
        sizes.push(size);
    }
    LegacySizeModel { layers: layers.to_vec(), sizes, final_bits: size }
}

/// Sizes along the first sequence for `n_obs`, with the AEAD slot played by the public-key layer.
pub fn legacy_size_model(n_obs: u32, msg_bits: u64) -> Result<LegacySizeModel, IsError> {
    let is = unrank(0, n_obs)?;
    let layers: Vec<LegacyLayer> = is.steps.into_iter().map(LegacyLayer::from).collect();
    Ok(legacy_layer_sizes(&layers, msg_bits))
}
