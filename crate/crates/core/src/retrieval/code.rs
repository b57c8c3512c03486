use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A K-bit code packed into 64-bit words; bit `j` lives in word `j / 64` at
/// position `j % 64`. Unused high bits of the last word are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HashCode {
    bits: usize,
    words: Vec<u64>,
}

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl HashCode {
    pub fn zeros(bits: usize) -> Self {
        Self {
            bits,
            words: vec![0; words_for(bits)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut c = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            if b {
                c.words[j / 64] |= 1 << (j % 64);
            }
        }
        c
    }

    /// Bit `j` set iff `values[j] > 0`; exact zero maps to 0.
    pub fn from_signs<T: Scalar>(values: &[T]) -> Self {
        let mut c = Self::zeros(values.len());
        for (j, &v) in values.iter().enumerate() {
            if v > T::zero() {
                c.words[j / 64] |= 1 << (j % 64);
            }
        }
        c
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::Data(format!("{} words cannot hold a {bits}-bit code", words.len())));
        }
        let rem = bits % 64;
        if rem != 0 && words.last().is_some_and(|w| w >> rem != 0) {
            return Err(Error::Data(format!("bits beyond position {bits} are set")));
        }
        Ok(Self { bits, words })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    /// The code as a ±1 vector (bit 1 → +1).
    pub fn signs(&self) -> Vec<f64> {
        (0..self.bits).map(|j| if self.bit(j) { 1.0 } else { -1.0 }).collect()
    }

    /// `⟨a, b⟩` of the ±1 forms, via `K − 2·H(a, b)`.
    pub fn inner_product(&self, other: &HashCode) -> Result<i64> {
        Ok(self.bits as i64 - 2 * hamming_distance(self, other)? as i64)
    }
}

/// One packed code per row of `codes` `[N, K]`.
pub fn binarize<T: Scalar>(codes: &Tensor<T>) -> Result<Vec<HashCode>> {
    let &[_, k] = codes.shape() else {
        return Err(Error::dim("binarize", codes.shape(), &[0, 0]));
    };
    Ok(codes.data().chunks(k).map(HashCode::from_signs).collect())
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Popcount of the XOR of two equal-length codes.
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::Data(format!("code length mismatch: {} vs {} bits", a.bits, b.bits)));
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_uses_strict_sign() {
        let t = Tensor::new(&[2, 4], vec![0.9f32, -0.3, 0.0, 0.2, -1.0, -0.5, -0.1, -0.9]).unwrap();
        let codes = binarize(&t).unwrap();
        assert_eq!(codes[0], HashCode::from_bits(&[true, false, false, true]));
        assert_eq!(codes[1], HashCode::zeros(4));
        let doubled = t.map(|x| 2.0 * x);
        assert_eq!(binarize(&doubled).unwrap(), codes);
    }

    #[test]
    fn hamming_worked_cases() {
        let a = HashCode::from_bits(&[true, false, true, true]);
        let b = HashCode::from_bits(&[true, false, true, false]);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 1);
        assert_eq!(a.inner_product(&b).unwrap(), 2);
        assert_eq!(a.inner_product(&a).unwrap(), 4);

        let x = HashCode::from_words(64, vec![0xdead_beef_0123_4567]).unwrap();
        let not_x = HashCode::from_words(64, vec![!0xdead_beef_0123_4567]).unwrap();
        assert_eq!(hamming_distance(&x, &not_x).unwrap(), 64);
        assert_eq!(x.inner_product(&not_x).unwrap(), -64);
    }

    #[test]
    fn rejects_mismatched_lengths_and_stray_bits() {
        assert!(hamming_distance(&HashCode::zeros(16), &HashCode::zeros(32)).is_err());
        assert!(HashCode::from_words(16, vec![1 << 20]).is_err());
        assert!(HashCode::from_words(16, vec![0, 0]).is_err());
    }

    fn code(bits: usize) -> impl Strategy<Value = HashCode> {
        proptest::collection::vec(any::<bool>(), bits).prop_map(|b| HashCode::from_bits(&b))
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric((a, b, c) in (code(70), code(70), code(70))) {
            let d = |x: &HashCode, y: &HashCode| hamming_distance(x, y).unwrap();
            prop_assert_eq!(d(&a, &a), 0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }

        #[test]
        fn inner_product_identity(a in code(48), b in code(48)) {
            let ip: f64 = a.signs().iter().zip(b.signs()).map(|(x, y)| x * y).sum();
            prop_assert_eq!(ip as i64, a.inner_product(&b).unwrap());
        }
    }
}
