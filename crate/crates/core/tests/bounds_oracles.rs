mod common;

use astro_float::Consts;
use common::{big, choose, eps_pa_oracle, pascal, to_f64, PREC, RM};
use hoqs_core::bounds::{
    binary_entropy, eps_ec_and_t, eps_pa, eps_pe_chernoff, eps_pe_cp, eps_pe_serfling, gamma_plus_chernoff, hypergeom_cdf,
    hypergeom_cdf_with, nu_from_gamma, EpsilonBudget, HypergeomMethod,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hypergeom_matches_enumeration_for_small_populations() {
    let t = pascal();
    for big_n in 1..=20i64 {
        for k in 0..=big_n {
            for n in 0..=big_n {
                let total = choose(&t, big_n, n) as f64;
                let mut acc = 0u64;
                for x in -1..=n {
                    if x >= 0 {
                        acc += choose(&t, k, x) * choose(&t, big_n - k, n - x);
                    }
                    let want = acc as f64 / total;
                    for method in [HypergeomMethod::default(), HypergeomMethod::Exact, HypergeomMethod::SaddlePoint] {
                        let got = hypergeom_cdf_with(x, big_n as u64, k as u64, n as u64, method).unwrap();
                        let tol = match method {
                            HypergeomMethod::SaddlePoint => 1e-9,
                            _ => 1e-15,
                        };
                        assert!(
                            (got - want).abs() <= tol * want.max(1e-300) || (got - want).abs() < 1e-15,
                            "N={big_n} K={k} n={n} x={x} {method:?}: {got} vs {want}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn hypergeom_rejects_bad_parameters() {
    assert!(hypergeom_cdf(0, 10, 11, 5).is_err());
    assert!(hypergeom_cdf(0, 10, 5, 11).is_err());
    assert_eq!(hypergeom_cdf(-1, 10, 5, 5).unwrap(), 0.0);
}

#[test]
fn eps_pa_matches_high_precision() {
    let mut cc = Consts::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a);
    let mut checked = 0;
    while checked < 100 {
        let s = rng.gen_range(4..=12);
        let (t, _) = eps_ec_and_t(s);
        let m = rng.gen_range(1000..=50_000u64);
        let delta = rng.gen_range(0.0..0.11);
        let nu = rng.gen_range(1e-6..0.1);
        let r = rng.gen_range(0..m / 2);
        let cap = m as f64 * (1.0 - binary_entropy(delta + nu).unwrap()) - r as f64 - f64::from(t);
        if cap < 10.0 {
            continue;
        }
        // exponent between -400 and 0
        let l = (cap - rng.gen_range(0.0..400.0)).max(1.0) as u64;
        let got = eps_pa(l, t, nu, delta, r, m).unwrap();
        let want = eps_pa_oracle(l, t, nu, delta, r, m, &mut cc);
        if want >= 1.0 {
            continue;
        }
        let rel = ((got - want) / want).abs();
        assert!(rel < 5e-12, "l={l} t={t} nu={nu} delta={delta} r={r} m={m}: {got:e} vs {want:e} (rel {rel:e})");
        checked += 1;
    }
}

#[test]
fn entropy_matches_high_precision() {
    let mut cc = Consts::new().unwrap();
    for &x in &[1e-9, 0.001, 0.0627, 0.11, 0.25, 0.4999] {
        let bx = big(x);
        let by = big(1.0).sub(&bx, PREC, RM);
        let ln2 = big(2.0).ln(PREC, RM, &mut cc);
        let h = bx
            .mul(&bx.ln(PREC, RM, &mut cc), PREC, RM)
            .add(&by.mul(&by.ln(PREC, RM, &mut cc), PREC, RM), PREC, RM)
            .div(&ln2, PREC, RM)
            .neg();
        let want = to_f64(&h, &mut cc);
        assert!((binary_entropy(x).unwrap() - want).abs() <= 4.0 * f64::EPSILON * want, "{x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn budget_identity(a in 0.0..1e-6f64, b in 0.0..1e-6f64, c in 0.0..1e-6f64, d in 0.0..1e-6f64) {
        let budget = EpsilonBudget::compose(a, b, c, d, 1e-6);
        prop_assert_eq!(budget.eps_total, a + b + c + 2.0 * d);
    }

    #[test]
    fn eps_pa_monotone_in_length(l in 1u64..2000, nu in 0.001..0.1f64, delta in 0.0..0.11f64) {
        let (t, _) = eps_ec_and_t(6);
        let a = eps_pa(l, t, nu, delta, 5000, 10_000).unwrap();
        let b = eps_pa(l + 1, t, nu, delta, 5000, 10_000).unwrap();
        prop_assert!(b >= a);
        prop_assert!(b <= 1.0);
    }

    #[test]
    fn cp_tail_shrinks_with_deviation(nu in 0.001..0.2f64, step in 0.001..0.05f64, delta in 0.01..0.11f64) {
        let a = eps_pe_cp(delta, nu, 2000, 1000).unwrap();
        let b = eps_pe_cp(delta, nu + step, 2000, 1000).unwrap();
        prop_assert!(b <= a + 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn serfling_bounded_and_decreasing(nu in 0.01..0.2f64, frac in 0.05..0.95f64, delta in 0.0..0.11f64) {
        let mu = nu * frac;
        let a = eps_pe_serfling(nu, mu, delta, 20_000, 10_000).unwrap();
        let b = eps_pe_serfling(nu * 1.1, mu, delta, 20_000, 10_000).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn chernoff_round_trip(y0 in 1.0..60.0f64, delta in 0.01..0.11f64) {
        let eps = (-y0).exp();
        let g = gamma_plus_chernoff(delta, eps, 10_000).unwrap();
        let nu = nu_from_gamma(g, delta, 20_000, 10_000).unwrap();
        let back = eps_pe_chernoff(delta, nu, 20_000, 10_000, 1e-9).unwrap();
        prop_assert!((back.ln() + y0).abs() < 1e-4, "eps {} -> {}", eps, back);
    }

    #[test]
    fn chernoff_upper_bound_above_delta(delta in 0.0..0.11f64, eps in 1e-12..0.5f64) {
        let g = gamma_plus_chernoff(delta, eps, 10_000).unwrap();
        prop_assert!(g >= delta);
        prop_assert!(g < 1.0);
    }
}
