use std::cmp::Ordering;

/// Fixed-length bit vector.
///
/// Ordering is lexicographic over bit positions with bit 0 first, i.e. the
/// order of the equivalent `Vec<bool>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bits {
    len: usize,
    words: Vec<u64>,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            out.set(i, b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn toggle(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len);
        Bits {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    /// Packs bit `i` into byte `i / 8`, position `i % 8` (LSB first).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Self {
        let mut out = Self::zeros(len);
        for i in 0..len {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                out.set(i, true);
            }
        }
        out
    }
}

impl Ord for Bits {
    fn cmp(&self, other: &Self) -> Ordering {
        // Bit-reversing each word makes the lowest index the most
        // significant bit, so word-wise integer order equals bit order.
        self.words
            .iter()
            .map(|w| w.reverse_bits())
            .cmp(other.words.iter().map(|w| w.reverse_bits()))
            .then(self.len.cmp(&other.len))
    }
}

impl PartialOrd for Bits {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn order_matches_bool_vectors(a in proptest::collection::vec(any::<bool>(), 70),
                                      b in proptest::collection::vec(any::<bool>(), 70)) {
            let (x, y) = (Bits::from_bools(&a), Bits::from_bools(&b));
            prop_assert_eq!(x.cmp(&y), a.cmp(&b));
        }

        #[test]
        fn byte_packing_round_trips(a in proptest::collection::vec(any::<bool>(), 0..100)) {
            let bits = Bits::from_bools(&a);
            prop_assert_eq!(Bits::from_bytes(a.len(), &bits.to_bytes()), bits);
        }
    }

    #[test]
    fn lsb_first_packing() {
        let b = Bits::from_bools(&[
            true, false, false, false, false, false, false, false, false, true,
        ]);
        assert_eq!(b.to_bytes(), vec![0b0000_0001, 0b0000_0010]);
    }
}
