use base64::Engine;
use hoqs_core::hybrid::{aes_ctr_step, ascon_open, ascon_step};
use hoqs_core::pqc::{kem_decapsulate, kem_encapsulate, kem_keygen_from_seed, KemParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn arr<const N: usize>(s: &str) -> [u8; N] {
    hex::decode(s).unwrap().try_into().unwrap()
}

#[test]
fn aes256_block_fips197() {
    // zero data with counter block = plaintext exposes the raw block encryption
    let key: [u8; 32] = arr("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f");
    let pt: [u8; 16] = arr("00112233445566778899aabbccddeeff");
    let out = aes_ctr_step(&[0; 16], &key, &pt, 0, 0).unwrap();
    assert_eq!(hex::encode(out), "8ea2b7ca516745bfeafc49904b496089");
}

#[test]
fn aes256_ctr_sp800_38a() {
    let key: [u8; 32] = arr("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4");
    let blocks = [
        ("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff", "6bc1bee22e409f96e93d7e117393172a", "601ec313775789a5b7a7f504bbf3d228"),
        ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff00", "ae2d8a571e03ac9c9eb76fac45af8e51", "f443e3ca4d62b59aca84e990cacaf5c5"),
        ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff01", "30c81c46a35ce411e5fbc1191a0a52ef", "2b0930daa23de94ce87017ba2d84988d"),
        ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff02", "f69f2445df4f9b17ad2b417be66c3710", "dfc9c58db67aada613c2dd08457941a6"),
    ];
    for (ctr, pt, ct) in blocks {
        let out = aes_ctr_step(&hex::decode(pt).unwrap(), &key, &arr(ctr), 0, 0).unwrap();
        assert_eq!(hex::encode(&out), ct);
        let back = aes_ctr_step(&out, &key, &arr(ctr), 0, 0).unwrap();
        assert_eq!(hex::encode(back), pt);
    }
}

struct AsconVector {
    count: u32,
    key: [u8; 16],
    nonce: [u8; 16],
    pt: Vec<u8>,
    ad: Vec<u8>,
    ct: Vec<u8>,
}

fn ascon_vectors() -> Vec<AsconVector> {
    let text = include_str!("data/ascon128_kat.txt");
    let mut out = Vec::new();
    for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let field = |name: &str| {
            block
                .lines()
                .find_map(|l| l.strip_prefix(name).and_then(|r| r.trim_start().strip_prefix('=')))
                .map(|v| v.trim().to_string())
                .unwrap_or_else(|| panic!("missing {name} in {block}"))
        };
        out.push(AsconVector {
            count: field("Count").parse().unwrap(),
            key: arr(&field("Key")),
            nonce: arr(&field("Nonce")),
            pt: hex::decode(field("PT")).unwrap(),
            ad: hex::decode(field("AD")).unwrap(),
            ct: hex::decode(field("CT")).unwrap(),
        });
    }
    out
}

#[test]
fn ascon128_reference_vectors() {
    let vectors = ascon_vectors();
    assert_eq!(vectors.len(), 1089);
    for v in &vectors {
        let (body, tag) = ascon_step(&v.pt, &v.key, &v.nonce, &v.ad).unwrap();
        let mut joined = body.clone();
        joined.extend_from_slice(&tag);
        assert_eq!(joined, v.ct, "count {}", v.count);
        assert_eq!(ascon_open(&body, &v.key, &v.nonce, &v.ad, &tag).unwrap(), v.pt);
    }
    let v = &vectors[600];
    let (mut body, tag) = ascon_step(&v.pt, &v.key, &v.nonce, &v.ad).unwrap();
    body[0] ^= 1;
    assert!(ascon_open(&body, &v.key, &v.nonce, &v.ad, &tag).is_err());
}

fn pem_public_key(pem: &str) -> Vec<u8> {
    let b64: String = pem.lines().filter(|l| !l.starts_with("-----")).collect();
    base64::engine::general_purpose::STANDARD.decode(b64).unwrap()
}

#[test]
fn ml_kem_seeded_keys_match_published_examples() {
    let d: [u8; 32] = std::array::from_fn(|i| i as u8);
    let z: [u8; 32] = std::array::from_fn(|i| 32 + i as u8);
    for (set, pem, len) in [
        (KemParamSet::MlKem512, include_str!("data/ml-kem-512-example.pub"), 800),
        (KemParamSet::MlKem768, include_str!("data/ml-kem-768-example.pub"), 1184),
    ] {
        let der = pem_public_key(pem);
        let kp = kem_keygen_from_seed(set, &d, &z);
        assert_eq!(kp.encapsulation_key.len(), len);
        assert_eq!(kp.encapsulation_key[..], der[der.len() - len..], "{set:?}");

        let mut rng = ChaCha20Rng::seed_from_u64(len as u64);
        let (ct, ss) = kem_encapsulate(set, &kp.encapsulation_key, &mut rng).unwrap();
        assert_eq!(kem_decapsulate(&kp, &ct).unwrap(), ss);
    }
}
