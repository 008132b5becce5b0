use hoqs_core::bits::random_bits;
use hoqs_core::instruction::{
    check_capacity, count_valid, decrypt_is, encrypt_is, gamma, rank, unrank, Cipher, InstructionSequence, IsError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Every balanced sequence without repeated neighbours, in lexicographic order.
fn enumerate(g: usize) -> Vec<Vec<Cipher>> {
    fn walk(left: &mut [usize; 3], prefix: &mut Vec<Cipher>, out: &mut Vec<Vec<Cipher>>) {
        if left.iter().all(|&n| n == 0) {
            out.push(prefix.clone());
            return;
        }
        for c in Cipher::ALL {
            if left[c as usize] == 0 || prefix.last() == Some(&c) {
                continue;
            }
            left[c as usize] -= 1;
            prefix.push(c);
            walk(left, prefix, out);
            prefix.pop();
            left[c as usize] += 1;
        }
    }
    let mut out = Vec::new();
    walk(&mut [g; 3], &mut Vec::new(), &mut out);
    out
}

#[test]
fn unrank_matches_enumeration() {
    for n_obs in (0..=12).filter(|&n| n != 1) {
        let all = enumerate(gamma(n_obs) as usize);
        assert_eq!(count_valid(n_obs).unwrap(), all.len() as u128, "n_obs {n_obs}");
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        for (i, steps) in all.iter().enumerate().take(1 << n_obs) {
            let is = unrank(i as u128, n_obs).unwrap();
            assert_eq!(&is.steps, steps, "n_obs {n_obs} index {i}");
            assert!(is.is_valid());
        }
    }
}

#[test]
fn rank_inverts_unrank() {
    for n_obs in (2..=6).chain([0]) {
        for i in 0..1u128 << n_obs {
            let is = unrank(i, n_obs).unwrap();
            assert_eq!(rank(&is).unwrap(), i);
            assert_eq!(InstructionSequence::parse(&is.to_string(), n_obs).unwrap(), is);
        }
    }
}

#[test]
fn capacity_holds_up_to_the_limit() {
    for n_obs in 2..=40 {
        check_capacity(n_obs).unwrap();
    }
    assert_eq!(count_valid(1), Err(IsError::InvalidNobs(1)));
    assert!(matches!(count_valid(41), Err(IsError::TooLarge { .. })));
    assert!(matches!(unrank(16, 4), Err(IsError::IndexRange { .. })));
}

#[test]
fn malformed_sequences_are_rejected() {
    assert_eq!(InstructionSequence::parse("OTP>OTP>AES>AES>ASCON>ASCON", 4), Err(IsError::Malformed));
    assert_eq!(InstructionSequence::parse("OTP>AES>ASCON", 4), Err(IsError::Malformed));
    assert!(matches!(InstructionSequence::parse("OTP>DES>ASCON", 2), Err(IsError::UnknownStep(_))));
    let bad = InstructionSequence { steps: vec![Cipher::Otp, Cipher::Otp, Cipher::Aes], n_obs: 2 };
    assert_eq!(rank(&bad), Err(IsError::Malformed));
}

/// 99.9th percentile of chi-square with the given degrees of freedom, Wilson-Hilferty.
fn chi2_critical(df: f64) -> f64 {
    let z = 3.090_232;
    df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3)
}

#[test]
fn encrypted_index_is_uniform_for_a_fixed_sequence() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    for n_obs in [4u32, 6, 8] {
        let cells = 1usize << n_obs;
        let draws = 200 * cells;
        let mut hist = vec![0u64; cells];
        for _ in 0..draws {
            let pad = random_bits(&mut rng, n_obs as usize);
            // a constant index; only the pad varies
            let pi = encrypt_is(3, n_obs, &pad).unwrap();
            hist[hoqs_core::bits::to_u128(&pi) as usize] += 1;
            assert_eq!(decrypt_is(&pi, &pad).unwrap(), 3);
        }
        let expected = draws as f64 / cells as f64;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < chi2_critical((cells - 1) as f64), "n_obs {n_obs}: chi2 {chi2}");
    }
}

#[test]
fn independent_cycles_collide_at_two_to_minus_nobs() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let (n_obs, trials) = (8u32, 200_000);
    let mut hits = 0u32;
    for _ in 0..trials {
        let a = encrypt_is(rng.gen_range(0..256), n_obs, &random_bits(&mut rng, 8)).unwrap();
        let b = encrypt_is(rng.gen_range(0..256), n_obs, &random_bits(&mut rng, 8)).unwrap();
        hits += u32::from(a == b);
    }
    let p = 1.0 / 256.0;
    let sd = (f64::from(trials) * p * (1.0 - p)).sqrt();
    assert!((f64::from(hits) - f64::from(trials) * p).abs() < 5.0 * sd, "{hits}");
}

#[test]
fn pad_length_must_match() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    assert!(matches!(encrypt_is(1, 4, &random_bits(&mut rng, 5)), Err(IsError::PadLength { .. })));
    assert!(matches!(encrypt_is(16, 4, &random_bits(&mut rng, 4)), Err(IsError::IndexRange { .. })));
}

proptest! {
    #[test]
    fn sequences_are_balanced_and_alternating(n_obs in 2u32..=40, raw in any::<u128>()) {
        let index = raw % (1u128 << n_obs);
        let is = unrank(index, n_obs).unwrap();
        let g = gamma(n_obs) as usize;
        prop_assert_eq!(is.steps.len(), 3 * g);
        for c in Cipher::ALL {
            prop_assert_eq!(is.count_of(c), g);
        }
        prop_assert!(is.steps.windows(2).all(|w| w[0] != w[1]));
        prop_assert_eq!(rank(&is).unwrap(), index);
    }

    #[test]
    fn index_encryption_round_trips(n_obs in 2u32..=40, raw in any::<u128>(), seed in any::<u64>()) {
        let index = raw % (1u128 << n_obs);
        let pad = random_bits(&mut ChaCha20Rng::seed_from_u64(seed), n_obs as usize);
        let pi = encrypt_is(index, n_obs, &pad).unwrap();
        prop_assert_eq!(pi.len(), n_obs as usize);
        prop_assert_eq!(decrypt_is(&pi, &pad).unwrap(), index);
    }
}
