//! Oracles shared by the bound tests and the acceptance run.

#![allow(dead_code)]

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

pub const PREC: usize = 200;
pub const RM: RoundingMode = RoundingMode::ToEven;

/// Pascal triangle up to row 20, exact in u64.
pub fn pascal() -> Vec<Vec<u64>> {
    let mut t = vec![vec![1u64]];
    for n in 1..=20 {
        let prev: &Vec<u64> = &t[n - 1];
        let mut row = vec![1u64; n + 1];
        for k in 1..n {
            row[k] = prev[k - 1] + prev[k];
        }
        t.push(row);
    }
    t
}

pub fn choose(t: &[Vec<u64>], n: i64, k: i64) -> u64 {
    if k < 0 || n < 0 || k > n {
        0
    } else {
        t[n as usize][k as usize]
    }
}

pub fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

pub fn to_f64(x: &BigFloat, cc: &mut Consts) -> f64 {
    x.format(Radix::Dec, RM, cc).unwrap().parse().unwrap()
}

/// `1/2 * 2^((r + t + l - m + m h2(delta + nu)) / 2)` at 200 bits.
pub fn eps_pa_oracle(l: u64, t: u32, nu: f64, delta: f64, r: u64, m: u64, cc: &mut Consts) -> f64 {
    let x = big(delta).add(&big(nu), PREC, RM);
    let one = big(1.0);
    let y = one.sub(&x, PREC, RM);
    let ln2 = big(2.0).ln(PREC, RM, cc);
    let h = x
        .mul(&x.ln(PREC, RM, cc), PREC, RM)
        .add(&y.mul(&y.ln(PREC, RM, cc), PREC, RM), PREC, RM)
        .div(&ln2, PREC, RM)
        .neg();
    let mb = BigFloat::from_u64(m, PREC);
    let e = BigFloat::from_u64(r + u64::from(t) + l, PREC).sub(&mb, PREC, RM).add(&mb.mul(&h, PREC, RM), PREC, RM);
    let half_e = e.div(&big(2.0), PREC, RM).sub(&one, PREC, RM);
    let v = half_e.mul(&ln2, PREC, RM).exp(PREC, RM, cc);
    to_f64(&v, cc)
}
