use std::collections::HashSet;

use aes::cipher::{BlockEncrypt, KeyInit};
use ascon_aead::aead::AeadInPlace;
use hoqs_core::bits::{random_bits, Bits};
use hoqs_core::hybrid::{
    he_decrypt, he_encrypt, he_encrypt_traced, legacy_layer_sizes, legacy_size_model, padded_len, CipherEnvelope, HeError,
    KeyBundle, LegacyLayer, SID_LIMIT,
};
use hoqs_core::instruction::{gamma, unrank, Cipher, InstructionSequence};
use hoqs_core::pqc::split_shared_secret;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn bundle(rng: &mut ChaCha20Rng, is: &InstructionSequence, msg_len: usize, slack: usize) -> KeyBundle {
    let bits = padded_len(msg_len) * 8 + slack;
    KeyBundle {
        qkd_keys: (0..is.count_of(Cipher::Otp)).map(|_| random_bits(rng, bits)).collect(),
        aes_key: rng.gen(),
        split: split_shared_secret(&rng.gen::<[u8; 32]>()).unwrap(),
    }
}

/// Leading bits packed most significant first.
fn key_bytes(key: &Bits, n: usize) -> Vec<u8> {
    (0..n).map(|k| (0..8).fold(0u8, |b, i| b | (u8::from(key[8 * k + i]) << (7 - i)))).collect()
}

/// Counter block laid out byte by byte: chunk index in bytes 0..8, session id in 8..15, step in 15.
fn counter_block(v: &[u8; 16], sid: u64, step: u8, chunk: u64) -> [u8; 16] {
    let mut pre = [0u8; 16];
    pre[..8].copy_from_slice(&chunk.to_be_bytes());
    pre[8..15].copy_from_slice(&sid.to_be_bytes()[1..]);
    pre[15] = step;
    std::array::from_fn(|k| v[k] ^ pre[k])
}

/// The cascade rebuilt directly on the block cipher and AEAD crates.
fn oracle_encrypt(is: &InstructionSequence, m: &[u8], keys: &KeyBundle, sid: u64, v: [u8; 16], ad: &[u8]) -> Vec<u8> {
    let pad = 16 - m.len() % 16;
    let mut body = m.to_vec();
    body.extend(std::iter::repeat(pad as u8).take(pad));
    let aes = aes::Aes256::new((&keys.aes_key).into());
    let ascon = ascon_aead::Ascon128::new((&keys.split.pqc_key).into());
    let mut tags = Vec::new();
    let mut otp = keys.qkd_keys.iter();
    for (p, step) in is.steps.iter().enumerate() {
        match step {
            Cipher::Otp => {
                let k = key_bytes(otp.next().unwrap(), body.len());
                body.iter_mut().zip(k).for_each(|(b, k)| *b ^= k);
            }
            Cipher::Aes => {
                for (j, chunk) in body.chunks_mut(16).enumerate() {
                    let mut block = counter_block(&v, sid, p as u8, j as u64).into();
                    aes.encrypt_block(&mut block);
                    chunk.iter_mut().zip(block).for_each(|(b, k)| *b ^= k);
                }
            }
            Cipher::Ascon => {
                let mut nonce = [0u8; 16];
                nonce[..15].copy_from_slice(&keys.split.base_nonce_v_prime);
                nonce[15] = keys.split.counter_seed.wrapping_add(p as u8);
                let tag = ascon.encrypt_in_place_detached((&nonce).into(), ad, &mut body).unwrap();
                tags.extend_from_slice(&tag);
            }
        }
    }
    body.extend(tags);
    body
}

#[test]
fn cascade_matches_oracle_and_round_trips() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    for trial in 0..500 {
        let n_obs = rng.gen_range(2..=8);
        let is = unrank(rng.gen_range(0..1u128 << n_obs), n_obs).unwrap();
        let msg: Vec<u8> = (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect();
        let slack = rng.gen_range(0..64);
        let keys = bundle(&mut rng, &is, msg.len(), slack);
        let sid = rng.gen_range(0..SID_LIMIT as u64);
        let v: [u8; 16] = rng.gen();
        let ad: Vec<u8> = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect();

        let env = he_encrypt(&is, &msg, &keys, u128::from(sid), v, &ad).unwrap();
        assert_eq!(env.final_ct, oracle_encrypt(&is, &msg, &keys, sid, v, &ad), "trial {trial} {is}");
        let wire = CipherEnvelope::decode(&env.encode()).unwrap();
        assert_eq!(wire, env);
        assert_eq!(he_decrypt(&wire, &is, &keys).unwrap(), msg, "trial {trial}");
    }
}

#[test]
fn envelope_size_accounting() {
    let mut rng = ChaCha20Rng::seed_from_u64(32);
    for n_obs in 2..=6 {
        for msg_len in [0usize, 1, 15, 16, 63, 102, 500] {
            for index in [0u128, (1 << n_obs) - 1] {
                let is = unrank(index, n_obs).unwrap();
                let keys = bundle(&mut rng, &is, msg_len, 0);
                let ad = b"ad".to_vec();
                let env = he_encrypt(&is, &vec![7; msg_len], &keys, 9, [0; 16], &ad).unwrap();
                let padded = msg_len - msg_len % 16 + 16;
                let g = gamma(n_obs) as usize;
                assert_eq!(env.final_ct.len(), padded + 16 * g);
                assert_eq!(env.encode().len(), 4 + padded + 16 * g + 15 + 16 + 2 + ad.len() + 1);
                assert_eq!(usize::from(env.trailer.pad_size), padded - msg_len);
            }
        }
    }
}

#[test]
fn counter_blocks_and_nonces_never_repeat() {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let v: [u8; 16] = rng.gen();
    let is = unrank(5, 10).unwrap();
    let keys = bundle(&mut rng, &is, 300, 0);
    let mut across_cycles = HashSet::new();
    for sid in 0..200u128 {
        // 300 bytes pad to 19 blocks
        let (_, trace) = he_encrypt_traced(&is, &[1; 300], &keys, sid, v, b"").unwrap();
        assert_eq!(trace.aes_blocks.len(), gamma(10) as usize * 19);
        let within: HashSet<_> = trace.ascon_nonces.iter().collect();
        assert_eq!(within.len(), trace.ascon_nonces.len());
        let expected: Vec<[u8; 16]> = is
            .steps
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == Cipher::Aes)
            .flat_map(|(p, _)| (0..19).map(move |j| counter_block(&v, sid as u64, p as u8, j)))
            .collect();
        assert_eq!(trace.aes_blocks, expected);
        for block in expected {
            assert!(across_cycles.insert(block), "block reused at sid {sid}");
        }
    }
}

#[test]
fn tampering_fails_authentication() {
    let mut rng = ChaCha20Rng::seed_from_u64(34);
    for _ in 0..300 {
        let n_obs = rng.gen_range(2..=6);
        let is = unrank(rng.gen_range(0..1u128 << n_obs), n_obs).unwrap();
        let keys = bundle(&mut rng, &is, 40, 0);
        let env = he_encrypt(&is, &[3; 40], &keys, 1, rng.gen(), b"header").unwrap();

        let mut bad = env.clone();
        let at = rng.gen_range(0..bad.final_ct.len());
        bad.final_ct[at] ^= 1 << rng.gen_range(0..8);
        assert_eq!(he_decrypt(&bad, &is, &keys), Err(HeError::Authentication));

        let mut bad = env.clone();
        bad.trailer.associated_data[0] ^= 1;
        assert_eq!(he_decrypt(&bad, &is, &keys), Err(HeError::Authentication));
    }
}

#[test]
fn key_shortfalls_are_reported() {
    let mut rng = ChaCha20Rng::seed_from_u64(35);
    let is = unrank(0, 4).unwrap();
    let mut keys = bundle(&mut rng, &is, 102, 0);
    keys.qkd_keys[1].truncate(895);
    assert_eq!(
        he_encrypt(&is, &[0; 102], &keys, 0, [0; 16], b""),
        Err(HeError::InsufficientKey { needed: 896, available: 895 })
    );
    keys.qkd_keys.pop();
    assert!(matches!(he_encrypt(&is, &[0; 102], &keys, 0, [0; 16], b""), Err(HeError::KeyCount { .. })));
    let keys = bundle(&mut rng, &is, 16, 0);
    assert_eq!(he_encrypt(&is, &[0; 16], &keys, SID_LIMIT, [0; 16], b""), Err(HeError::SidRange(SID_LIMIT)));
}

#[test]
fn each_public_key_layer_multiplies_by_24() {
    for blocks in 1..=4u64 {
        let bits = 256 * blocks;
        let one = legacy_layer_sizes(&[LegacyLayer::Pke], bits).final_bits;
        assert_eq!(one, 24 * bits);
        let two = legacy_layer_sizes(&[LegacyLayer::Pke, LegacyLayer::Pke], bits).final_bits;
        assert_eq!(two, 24 * 24 * bits);
    }
    // OTP keeps the size, AES adds one nonce
    assert_eq!(legacy_layer_sizes(&[LegacyLayer::Otp, LegacyLayer::Aes], 1000).sizes, vec![1000, 1000, 1128]);
}

#[test]
fn cascade_grows_slower_than_the_public_key_variant() {
    let msg = 102usize;
    let mut last_ratio = f64::INFINITY;
    for n_obs in [2u32, 4, 6, 8, 10] {
        let plus_bits = (8 * (padded_len(msg) + 16 * gamma(n_obs) as usize)) as f64;
        let legacy = legacy_size_model(n_obs, 8 * padded_len(msg) as u64).unwrap();
        assert_eq!(legacy.sizes.len(), 3 * gamma(n_obs) as usize + 1);
        let ratio = plus_bits / legacy.final_bits as f64;
        assert!(ratio <= last_ratio, "n_obs {n_obs}: {ratio} after {last_ratio}");
        last_ratio = ratio;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decrypt_inverts_encrypt(
        n_obs in 2u32..=12,
        raw in any::<u128>(),
        msg in proptest::collection::vec(any::<u8>(), 0..256),
        seed in any::<u64>(),
        sid in 0u128..SID_LIMIT,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let is = unrank(raw % (1u128 << n_obs), n_obs).unwrap();
        let keys = bundle(&mut rng, &is, msg.len(), 3);
        let env = he_encrypt(&is, &msg, &keys, sid, rng.gen(), b"x").unwrap();
        prop_assert_eq!(env.final_ct.len(), padded_len(msg.len()) + 16 * gamma(n_obs) as usize);
        prop_assert_eq!(he_decrypt(&env, &is, &keys).unwrap(), msg);
    }
}
