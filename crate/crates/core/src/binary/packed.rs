use super::SignTensor;
use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

/// Sign rows packed one bit per element along the innermost axis.
///
/// Bit `i % 64` of word `i / 64` in a row is set iff element `i` is `+1`.
/// Bits past `row_len` in the last word of a row are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBits {
    shape: Vec<usize>,
    row_len: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

#[inline]
pub(crate) fn words_for(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

/// Mask of the meaningful bits in the final word of an `n`-element row.
#[inline]
pub(crate) fn tail_mask(n: usize) -> u64 {
    match n % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedBits {
    pub(crate) fn from_rows(shape: Vec<usize>, row_len: usize, words: Vec<u64>) -> Self {
        let words_per_row = words_for(row_len);
        debug_assert_eq!(words.len() % words_per_row.max(1), 0);
        Self {
            shape,
            row_len,
            words_per_row,
            words,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.words.len() / self.words_per_row
    }

    /// Elements per row (the reduction length).
    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Meaningful bits in the final word of each row.
    pub fn valid_bits(&self) -> usize {
        match self.row_len % WORD_BITS {
            0 => WORD_BITS,
            r => r,
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..][..self.words_per_row]
    }
}

/// Packs along the innermost axis of `signs`.
pub fn pack(signs: &SignTensor) -> PackedBits {
    let row_len = *signs.shape().last().expect("non-empty shape");
    let wpr = words_for(row_len);
    let rows = signs.len() / row_len;
    let mut words = vec![0u64; rows * wpr];
    for (r, row) in signs.signs().chunks_exact(row_len).enumerate() {
        let dst = &mut words[r * wpr..][..wpr];
        for (i, &s) in row.iter().enumerate() {
            if s > 0 {
                dst[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
    }
    PackedBits::from_rows(signs.shape().to_vec(), row_len, words)
}

pub fn unpack(packed: &PackedBits) -> SignTensor {
    let n = packed.row_len;
    let mut signs = Vec::with_capacity(packed.rows() * n);
    for r in 0..packed.rows() {
        let row = packed.row(r);
        signs.extend((0..n).map(|i| {
            if row[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 {
                1i8
            } else {
                -1
            }
        }));
    }
    SignTensor::new(packed.shape.clone(), signs).expect("packed shape is consistent")
}

/// `±1` dot product of two packed rows of `n` elements:
/// `2·popcount(xnor(a, b)) − n`, with bits past `n` masked off.
pub fn xnor_popcount_dot(a: &[u64], b: &[u64], n: usize) -> Result<i64> {
    let words = words_for(n);
    if a.len() != words {
        return Err(Error::Dimension {
            axis: "packed row words (lhs)",
            expected: words,
            actual: a.len(),
        });
    }
    if b.len() != words {
        return Err(Error::Dimension {
            axis: "packed row words (rhs)",
            expected: words,
            actual: b.len(),
        });
    }
    if n == 0 {
        return Ok(0);
    }
    Ok(dot_unchecked(a, b, n))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[u64], b: &[u64], n: usize) -> i64 {
    let last = a.len() - 1;
    let mut agree = 0u32;
    for i in 0..last {
        agree += (!(a[i] ^ b[i])).count_ones();
    }
    agree += (!(a[last] ^ b[last]) & tail_mask(n)).count_ones();
    2 * i64::from(agree) - n as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn signs(v: &[i8]) -> SignTensor {
        SignTensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn packing_bit_order() {
        let p = pack(&signs(&[1, -1, 1, 1]));
        assert_eq!(p.words(), &[0b1101]);
        assert_eq!(p.valid_bits(), 4);
        assert_eq!(p.row_len(), 4);
    }

    #[test]
    fn saturated_word() {
        let p = pack(&signs(&[1; 64]));
        assert_eq!(p.words(), &[u64::MAX]);
        assert_eq!(p.valid_bits(), 64);
    }

    #[test]
    fn hand_dot() {
        let a = pack(&signs(&[1, 1, -1, 1]));
        let b = pack(&signs(&[1, -1, -1, 1]));
        assert_eq!(xnor_popcount_dot(a.row(0), b.row(0), 4).unwrap(), 2);
        let s = pack(&signs(&[-1; 64]));
        assert_eq!(xnor_popcount_dot(s.row(0), s.row(0), 64).unwrap(), 64);
    }

    #[test]
    fn mismatched_length_is_rejected() {
        let a = pack(&signs(&[1; 70]));
        let b = pack(&signs(&[1; 10]));
        assert!(xnor_popcount_dot(a.row(0), b.row(0), 70).is_err());
        assert!(xnor_popcount_dot(a.row(0), a.row(0), 10).is_err());
    }

    #[test]
    fn exhaustive_identity_small_rows() {
        for n in 1..=8usize {
            for x in 0u32..(1 << n) {
                for y in 0u32..(1 << n) {
                    let a: Vec<i8> = (0..n).map(|i| if x >> i & 1 == 1 { 1 } else { -1 }).collect();
                    let b: Vec<i8> = (0..n).map(|i| if y >> i & 1 == 1 { 1 } else { -1 }).collect();
                    let naive: i64 = a.iter().zip(&b).map(|(&p, &q)| i64::from(p * q)).sum();
                    let (pa, pb) = (pack(&signs(&a)), pack(&signs(&b)));
                    assert_eq!(xnor_popcount_dot(pa.row(0), pb.row(0), n).unwrap(), naive);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pack_round_trip(v in prop::collection::vec(prop::bool::ANY, 1..300)) {
            let s = signs(&v.iter().map(|&b| if b { 1 } else { -1 }).collect::<Vec<_>>());
            let p = pack(&s);
            prop_assert_eq!(unpack(&p), s);
            // Padding bits stay clear.
            let last = p.row(0)[p.words_per_row() - 1];
            prop_assert_eq!(last & !tail_mask(v.len()), 0);
        }
    }
}
