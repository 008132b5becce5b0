use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use hoqs_core::bits::random_bits;
use hoqs_core::bounds::{eps_pe_cp, hypergeom_cdf};
use hoqs_core::hybrid::{he_decrypt, he_encrypt, padded_len, KeyBundle};
use hoqs_core::instruction::{unrank, Cipher};
use hoqs_core::pqc::{kem_decapsulate, kem_encapsulate, kem_keygen, split_shared_secret, KemParamSet};
use hoqs_core::qkd::toeplitz::seed_len;
use hoqs_core::qkd::{simulate_raw_keys, toeplitz_hash};
use hoqs_core::{optimize, GridPreset, OptimizerConfig, ParityCheckMatrix, PeType, SecurityParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn bounds(c: &mut Criterion) {
    c.bench_function("hypergeom_cdf N=20000 n=10000", |b| {
        b.iter(|| hypergeom_cdf(black_box(627), 20_000, 1254 + 359, 10_000).unwrap())
    });
    c.bench_function("eps_pe_cp", |b| b.iter(|| eps_pe_cp(black_box(0.0627), black_box(0.006), 20_000, 10_000).unwrap()));
}

fn optimizer(c: &mut Criterion) {
    let mut g = c.benchmark_group("optimize coarse");
    g.sample_size(10);
    let params = SecurityParams::new(6, 20_000, 0.0627);
    for pe in PeType::ALL {
        let cfg = OptimizerConfig::new(params, pe, GridPreset::Coarse);
        g.bench_function(pe.as_str(), |b| b.iter(|| optimize(black_box(&cfg)).unwrap()));
    }
    g.finish();
}

fn reconciliation(c: &mut Criterion) {
    let code = ParityCheckMatrix::default_code();
    let pair = simulate_raw_keys(20_000, 0.03, 1).unwrap();
    let x = pair.alice_bits[..10_000].to_bitvec();
    let y = pair.bob_bits[..10_000].to_bitvec();
    let s = code.syndrome(&x).unwrap();
    let mut g = c.benchmark_group("reconciliation");
    g.sample_size(10);
    g.bench_function("sum-product decode at 3%", |b| b.iter(|| code.decode(black_box(&y), &s, 100, 0.03)));
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let seed = random_bits(&mut rng, seed_len(10_000, 1000));
    g.bench_function("toeplitz 10000 -> 1000", |b| b.iter(|| toeplitz_hash(black_box(&x), 1000, &seed).unwrap()));
    g.finish();
}

fn hybrid(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let msg = vec![0x5a; 102];
    for n_obs in [2u32, 6, 10] {
        let is = unrank(1, n_obs).unwrap();
        let keys = KeyBundle {
            qkd_keys: (0..is.count_of(Cipher::Otp)).map(|_| random_bits(&mut rng, padded_len(msg.len()) * 8)).collect(),
            aes_key: rng.gen(),
            split: split_shared_secret(&rng.gen::<[u8; 32]>()).unwrap(),
        };
        let env = he_encrypt(&is, &msg, &keys, 1, [7; 16], b"bench").unwrap();
        c.bench_function(&format!("cascade encrypt n_obs={n_obs}"), |b| {
            b.iter(|| he_encrypt(&is, black_box(&msg), &keys, 1, [7; 16], b"bench").unwrap())
        });
        c.bench_function(&format!("cascade decrypt n_obs={n_obs}"), |b| b.iter(|| he_decrypt(black_box(&env), &is, &keys).unwrap()));
    }
}

fn kem(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for set in [KemParamSet::MlKem512, KemParamSet::MlKem768] {
        let kp = kem_keygen(set, &mut rng);
        c.bench_function(&format!("{set:?} keygen"), |b| b.iter(|| kem_keygen(set, &mut rng)));
        c.bench_function(&format!("{set:?} encapsulate"), |b| {
            b.iter(|| kem_encapsulate(set, &kp.encapsulation_key, &mut rng).unwrap())
        });
        c.bench_function(&format!("{set:?} decapsulate"), |b| {
            b.iter_batched(
                || kem_encapsulate(set, &kp.encapsulation_key, &mut ChaCha20Rng::seed_from_u64(5)).unwrap().0,
                |ct| kem_decapsulate(&kp, &ct).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, bounds, optimizer, reconciliation, hybrid, kem);
criterion_main!(benches);
