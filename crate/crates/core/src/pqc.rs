//! ML-KEM key establishment and the split of the 256-bit shared secret.

use ml_kem::kem::{Decapsulate, Encapsulate};
use ml_kem::{Ciphertext, EncodedSizeUser, KemCore, MlKem1024, MlKem512, MlKem768, B32};
use rand::CryptoRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const SHARED_SECRET_BYTES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PqcError {
    #[error("{what}: expected {expected} bytes, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("encapsulation failed")]
    Encapsulation,
    #[error("decapsulation failed")]
    Decapsulation,
    #[error("shared secrets disagree")]
    ConfirmationMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KemParamSet {
    #[default]
    MlKem512,
    MlKem768,
    MlKem1024,
}

impl std::str::FromStr for KemParamSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlkem512" | "512" => Ok(KemParamSet::MlKem512),
            "mlkem768" | "768" => Ok(KemParamSet::MlKem768),
            "mlkem1024" | "1024" => Ok(KemParamSet::MlKem1024),
            other => Err(format!("unknown KEM parameter set `{other}`")),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KemKeypair {
    pub param_set: KemParamSet,
    pub decapsulation_key: Vec<u8>,
    pub encapsulation_key: Vec<u8>,
}

impl std::fmt::Debug for KemKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KemKeypair")
            .field("param_set", &self.param_set)
            .field("encapsulation_key_len", &self.encapsulation_key.len())
            .finish_non_exhaustive()
    }
}

fn decode<T: EncodedSizeUser>(what: &'static str, bytes: &[u8]) -> Result<T, PqcError> {
    let expected = ml_kem::Encoded::<T>::default().len();
    let enc = ml_kem::Encoded::<T>::try_from(bytes).map_err(|_| PqcError::Length { what, expected, got: bytes.len() })?;
    Ok(T::from_bytes(&enc))
}

fn secret_bytes(ss: &[u8]) -> Result<[u8; 32], PqcError> {
    ss.try_into().map_err(|_| PqcError::Length { what: "shared secret", expected: SHARED_SECRET_BYTES, got: ss.len() })
}

fn keygen_with<K: KemCore>(set: KemParamSet, d: &[u8; 32], z: &[u8; 32]) -> KemKeypair {
    let (dk, ek) = K::generate_deterministic(&B32::from(*d), &B32::from(*z));
    KemKeypair {
        param_set: set,
        decapsulation_key: dk.as_bytes().to_vec(),
        encapsulation_key: ek.as_bytes().to_vec(),
    }
}

fn encapsulate_with<K: KemCore, R: RngCore + CryptoRng>(ek: &[u8], rng: &mut R) -> Result<(Vec<u8>, [u8; 32]), PqcError> {
    let ek: K::EncapsulationKey = decode("encapsulation key", ek)?;
    let (ct, ss) = ek.encapsulate(rng).map_err(|_| PqcError::Encapsulation)?;
    Ok((ct.to_vec(), secret_bytes(&ss)?))
}

fn decapsulate_with<K: KemCore>(dk: &[u8], ct: &[u8]) -> Result<[u8; 32], PqcError> {
    let dk: K::DecapsulationKey = decode("decapsulation key", dk)?;
    let expected = Ciphertext::<K>::default().len();
    let ct = Ciphertext::<K>::try_from(ct).map_err(|_| PqcError::Length { what: "ciphertext", expected, got: ct.len() })?;
    let ss = dk.decapsulate(&ct).map_err(|_| PqcError::Decapsulation)?;
    secret_bytes(&ss)
}

/// Key pair from the 64-byte seed `d || z`.
pub fn kem_keygen_from_seed(set: KemParamSet, d: &[u8; 32], z: &[u8; 32]) -> KemKeypair {
    match set {
        KemParamSet::MlKem512 => keygen_with::<MlKem512>(set, d, z),
        KemParamSet::MlKem768 => keygen_with::<MlKem768>(set, d, z),
        KemParamSet::MlKem1024 => keygen_with::<MlKem1024>(set, d, z),
    }
}

pub fn kem_keygen<R: RngCore + CryptoRng>(set: KemParamSet, rng: &mut R) -> KemKeypair {
    let mut d = [0u8; 32];
    let mut z = [0u8; 32];
    rng.fill_bytes(&mut d);
    rng.fill_bytes(&mut z);
    kem_keygen_from_seed(set, &d, &z)
}

/// Ciphertext and shared secret for a peer's encapsulation key.
pub fn kem_encapsulate<R: RngCore + CryptoRng>(set: KemParamSet, ek: &[u8], rng: &mut R) -> Result<(Vec<u8>, [u8; 32]), PqcError> {
    match set {
        KemParamSet::MlKem512 => encapsulate_with::<MlKem512, R>(ek, rng),
        KemParamSet::MlKem768 => encapsulate_with::<MlKem768, R>(ek, rng),
        KemParamSet::MlKem1024 => encapsulate_with::<MlKem1024, R>(ek, rng),
    }
}

/// Recovers the shared secret. A corrupted ciphertext yields an unrelated secret, not an error.
pub fn kem_decapsulate(keypair: &KemKeypair, ct: &[u8]) -> Result<[u8; 32], PqcError> {
    let dk = &keypair.decapsulation_key;
    match keypair.param_set {
        KemParamSet::MlKem512 => decapsulate_with::<MlKem512>(dk, ct),
        KemParamSet::MlKem768 => decapsulate_with::<MlKem768>(dk, ct),
        KemParamSet::MlKem1024 => decapsulate_with::<MlKem1024>(dk, ct),
    }
}

/// Key-confirmation value binding the secret to the exchanged transcript.
pub fn confirmation(secret: &[u8; 32], encapsulation_key: &[u8], ciphertext: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hoqs kem confirm v1");
    h.update((encapsulation_key.len() as u64).to_be_bytes());
    h.update(encapsulation_key);
    h.update((ciphertext.len() as u64).to_be_bytes());
    h.update(ciphertext);
    h.update(secret);
    h.finalize().into()
}

pub fn check_confirmation(secret: &[u8; 32], encapsulation_key: &[u8], ciphertext: &[u8], received: &[u8]) -> Result<(), PqcError> {
    let expected = confirmation(secret, encapsulation_key, ciphertext);
    if received.len() == expected.len() && bool::from(expected.ct_eq(received)) {
        Ok(())
    } else {
        Err(PqcError::ConfirmationMismatch)
    }
}

/// Both ends of an exchange run locally, for tests and benchmarks.
pub fn kem_establish_local<R: RngCore + CryptoRng>(set: KemParamSet, rng: &mut R) -> Result<([u8; 32], [u8; 32]), PqcError> {
    let kp = kem_keygen(set, rng);
    let (ct, responder) = kem_encapsulate(set, &kp.encapsulation_key, rng)?;
    let initiator = kem_decapsulate(&kp, &ct)?;
    check_confirmation(&initiator, &kp.encapsulation_key, &ct, &confirmation(&responder, &kp.encapsulation_key, &ct))?;
    Ok((initiator, responder))
}

/// Bits `[0,128)` key the AEAD, `[128,248)` are the base nonce, `[248,256)` seed the counter.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSecret {
    pub pqc_key: [u8; 16],
    pub base_nonce_v_prime: [u8; 15],
    pub counter_seed: u8,
}

impl std::fmt::Debug for SplitSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitSecret").finish_non_exhaustive()
    }
}

impl SplitSecret {
    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[..16].copy_from_slice(&self.pqc_key);
        out[16..31].copy_from_slice(&self.base_nonce_v_prime);
        out[31] = self.counter_seed;
        out
    }
}

pub fn split_shared_secret(secret: &[u8]) -> Result<SplitSecret, PqcError> {
    if secret.len() != SHARED_SECRET_BYTES {
        return Err(PqcError::Length { what: "shared secret", expected: SHARED_SECRET_BYTES, got: secret.len() });
    }
    Ok(SplitSecret {
        pqc_key: secret[..16].try_into().unwrap(),
        base_nonce_v_prime: secret[16..31].try_into().unwrap(),
        counter_seed: secret[31],
    })
}
