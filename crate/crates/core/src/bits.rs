//! Bit-string helpers. Bit 0 is the most significant bit of byte 0.

use bitvec::prelude::*;
use rand::RngCore;

pub type Bits = BitVec<u8, Msb0>;
pub type BitSlice = bitvec::slice::BitSlice<u8, Msb0>;

pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, len: usize) -> Bits {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    let mut bits = Bits::from_vec(bytes);
    bits.truncate(len);
    bits
}

pub fn from_bytes(bytes: &[u8]) -> Bits {
    Bits::from_slice(bytes)
}

/// Packs bits into bytes, zero-filling the final partial byte.
pub fn to_bytes(bits: &BitSlice) -> Vec<u8> {
    let mut owned = bits.to_bitvec();
    owned.set_uninitialized(false);
    owned.into_vec()
}

/// Big-endian integer value of at most 128 bits.
pub fn to_u128(bits: &BitSlice) -> u128 {
    assert!(bits.len() <= 128, "bit string too long for u128");
    bits.iter().fold(0u128, |acc, b| (acc << 1) | u128::from(*b))
}

/// The low `len` bits of `value`, most significant first.
pub fn from_u128(value: u128, len: usize) -> Bits {
    assert!(len <= 128);
    (0..len).rev().map(|i| (value >> i) & 1 == 1).collect()
}

pub fn hamming(a: &BitSlice, b: &BitSlice) -> usize {
    assert_eq!(a.len(), b.len(), "hamming distance needs equal lengths");
    a.iter().zip(b.iter()).filter(|(x, y)| **x != **y).count()
}

pub fn xor(a: &BitSlice, b: &BitSlice) -> Bits {
    assert_eq!(a.len(), b.len());
    let mut out = a.to_bitvec();
    out ^= b;
    out
}

/// Bits gathered at `indices`, in index order.
pub fn select(bits: &BitSlice, indices: &[usize]) -> Bits {
    indices.iter().map(|&i| bits[i]).collect()
}

/// Packs into 64-bit words with bit `k` at position `k % 64` of word `k / 64`.
pub(crate) fn to_words_lsb(bits: &BitSlice) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64) + 1];
    for i in bits.iter_ones() {
        words[i / 64] |= 1u64 << (i % 64);
    }
    words
}

/// 64 bits starting at bit `offset` of an LSB-first word array.
#[inline]
pub(crate) fn window64(words: &[u64], offset: usize) -> u64 {
    let (w, s) = (offset / 64, offset % 64);
    let lo = words.get(w).copied().unwrap_or(0);
    if s == 0 {
        lo
    } else {
        let hi = words.get(w + 1).copied().unwrap_or(0);
        (lo >> s) | (hi << (64 - s))
    }
}

pub fn render(bits: &BitSlice) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn byte_round_trip_and_order() {
        let b = from_bytes(&[0b1000_0001, 0xff]);
        assert!(b[0] && !b[1] && b[7] && b[8]);
        assert_eq!(to_bytes(&b), vec![0b1000_0001, 0xff]);
        assert_eq!(to_bytes(&b[..3]), vec![0b1000_0000]);
    }

    #[test]
    fn u128_round_trip() {
        let v = 0x1234_5678_9abc_def0u128;
        assert_eq!(to_u128(&from_u128(v, 70)), v);
        assert_eq!(render(&from_u128(5, 4)), "0101");
    }

    #[test]
    fn random_lengths() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for len in [0, 1, 7, 8, 9, 1000] {
            assert_eq!(random_bits(&mut rng, len).len(), len);
        }
    }

    #[test]
    fn windows_cross_word_boundaries() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let bits = random_bits(&mut rng, 300);
        let words = to_words_lsb(&bits);
        for off in [0, 1, 63, 64, 65, 200, 236] {
            let w = window64(&words, off);
            for k in 0..64 {
                let expect = bits.get(off + k).map_or(false, |b| *b);
                assert_eq!((w >> k) & 1 == 1, expect, "off {off} k {k}");
            }
        }
    }
}
