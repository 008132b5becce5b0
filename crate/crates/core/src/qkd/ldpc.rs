//! Sparse parity-check codes for syndrome-based reconciliation.
//!
//! Text format: a header line `rows cols row_weight`, then one line per row
//! with that row's sorted column indices separated by spaces. Lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::QkdError;
use crate::bits::{BitSlice, Bits};

/// Seed of the shipped 5000 x 10000 code.
pub const DEFAULT_CODE_SEED: u64 = 0x4c44_5043_0001;
pub const DEFAULT_CODE_FILE: &str = "ldpc_5000x10000_v1.txt";
static DEFAULT_CODE_TEXT: &str = include_str!("../../data/ldpc_5000x10000_v1.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    cols: usize,
    rows: Vec<Vec<u32>>,
    col_rows: Vec<Vec<u32>>,
}

impl ParityCheckMatrix {
    pub fn from_rows(cols: usize, mut rows: Vec<Vec<u32>>) -> Result<Self, QkdError> {
        let mut col_rows = vec![Vec::new(); cols];
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(QkdError::Code(format!("row {r} repeats a column")));
            }
            for &c in row.iter() {
                let c = c as usize;
                if c >= cols {
                    return Err(QkdError::Code(format!("row {r} references column {c} of {cols}")));
                }
                col_rows[c].push(r as u32);
            }
        }
        Ok(ParityCheckMatrix { cols, rows, col_rows })
    }

    /// Regular code with `col_weight` ones per column and `rows * row_weight = cols * col_weight`.
    ///
    /// Sockets are matched by a seeded shuffle, then repeated edges inside a
    /// row are removed by random swaps.
    pub fn generate_regular(rows: usize, cols: usize, col_weight: usize, seed: u64) -> Result<Self, QkdError> {
        if rows == 0 || (cols * col_weight) % rows != 0 {
            return Err(QkdError::Code(format!("{cols}x{col_weight} edges do not split over {rows} rows")));
        }
        let row_weight = cols * col_weight / rows;
        if row_weight > cols {
            return Err(QkdError::Code("row weight exceeds column count".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sockets: Vec<u32> = (0..cols as u32).flat_map(|c| std::iter::repeat(c).take(col_weight)).collect();
        sockets.shuffle(&mut rng);

        let has_repeat = |s: &[u32], r: usize| {
            let row = &s[r * row_weight..(r + 1) * row_weight];
            (0..row.len()).any(|i| row[i + 1..].contains(&row[i]))
        };
        for _ in 0..1000 {
            let bad: Vec<usize> = (0..rows).filter(|&r| has_repeat(&sockets, r)).collect();
            if bad.is_empty() {
                let rows = sockets.chunks(row_weight).map(|c| c.to_vec()).collect();
                return Self::from_rows(cols, rows);
            }
            for r in bad {
                let a = r * row_weight + rng.gen_range(0..row_weight);
                let b = rng.gen_range(0..sockets.len());
                sockets.swap(a, b);
            }
        }
        Err(QkdError::Code("could not remove repeated edges".into()))
    }

    /// The shipped 5000 x 10000 regular (3,6) code.
    pub fn default_code() -> &'static ParityCheckMatrix {
        static CODE: OnceLock<ParityCheckMatrix> = OnceLock::new();
        CODE.get_or_init(|| Self::parse(DEFAULT_CODE_TEXT).expect("shipped parity-check file is valid"))
    }

    pub fn parse(text: &str) -> Result<Self, QkdError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| QkdError::Code("empty parity-check file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| QkdError::Code(format!("bad header `{header}`"))))
            .collect::<Result<_, _>>()?;
        let [nrows, ncols, _row_weight] = dims[..] else {
            return Err(QkdError::Code(format!("header needs rows cols row_weight, got `{header}`")));
        };
        let rows = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<u32>().map_err(|_| QkdError::Code(format!("bad index `{t}`"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        if rows.len() != nrows {
            return Err(QkdError::Code(format!("header promises {nrows} rows, found {}", rows.len())));
        }
        Self::from_rows(ncols, rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.rows.len(), self.cols, self.max_row_weight()).unwrap();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.rows[r]
    }

    pub fn max_row_weight(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn column_weights(&self) -> impl Iterator<Item = usize> + '_ {
        self.col_rows.iter().map(Vec::len)
    }

    /// `H x` over GF(2).
    pub fn syndrome(&self, bits: &BitSlice) -> Result<Bits, QkdError> {
        if bits.len() != self.cols {
            return Err(QkdError::Dimension { expected: self.cols, got: bits.len() });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().fold(false, |acc, &c| acc ^ bits[c as usize]))
            .collect())
    }

    /// Sum-product decoding of Bob's string toward Alice's syndrome.
    ///
    /// Decodes the error pattern `e` with `H e = H y + s_A`, assuming each
    /// bit flips with probability `crossover`. Returns `y + e`, or
    /// [`QkdError::DetectableFailure`] when no pattern satisfying every check
    /// is found within `max_iters`.
    pub fn decode(&self, bob_bits: &BitSlice, alice_syndrome: &BitSlice, max_iters: usize, crossover: f64) -> Result<Bits, QkdError> {
        if alice_syndrome.len() != self.rows.len() {
            return Err(QkdError::Dimension { expected: self.rows.len(), got: alice_syndrome.len() });
        }
        let mut target = self.syndrome(bob_bits)?;
        target ^= alice_syndrome;

        let p = crossover.clamp(1e-6, 0.5 - 1e-6);
        let prior = ((1.0 - p) / p).ln();

        // edges are numbered row by row
        let mut row_start = Vec::with_capacity(self.rows.len() + 1);
        row_start.push(0usize);
        for row in &self.rows {
            row_start.push(row_start.last().unwrap() + row.len());
        }
        let num_edges = *row_start.last().unwrap();
        let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for (k, &c) in row.iter().enumerate() {
                var_edges[c as usize].push(row_start[r] + k);
            }
        }

        let mut v2c = vec![prior; num_edges];
        let mut c2v = vec![0.0f64; num_edges];
        let mut error = Bits::repeat(false, self.cols);
        let mut prefix = Vec::new();

        for _ in 0..max_iters {
            for (r, row) in self.rows.iter().enumerate() {
                let edges = row_start[r]..row_start[r] + row.len();
                let sign = if target[r] { -1.0 } else { 1.0 };
                prefix.clear();
                let mut acc = 1.0f64;
                for e in edges.clone() {
                    prefix.push(acc);
                    acc *= (0.5 * v2c[e]).tanh();
                }
                let mut suffix = 1.0f64;
                for (k, e) in edges.rev().enumerate() {
                    let idx = row.len() - 1 - k;
                    let excl = (prefix[idx] * suffix).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                    c2v[e] = sign * 2.0 * excl.atanh();
                    suffix *= (0.5 * v2c[e]).tanh();
                }
            }
            for (v, edges) in var_edges.iter().enumerate() {
                let total: f64 = prior + edges.iter().map(|&e| c2v[e]).sum::<f64>();
                error.set(v, total < 0.0);
                for &e in edges {
                    v2c[e] = total - c2v[e];
                }
            }
            if self.syndrome(&error)? == target {
                error ^= bob_bits;
                return Ok(error);
            }
        }
        Err(QkdError::DetectableFailure)
    }
}
