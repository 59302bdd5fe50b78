/// Set of achievable primitive counts, exact on `0..=CAP` with a flag for
/// counts beyond the cap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SigmaSet {
    bits: u128,
    beyond_cap: bool,
}

impl SigmaSet {
    pub const CAP: u32 = 127;

    pub const EMPTY: SigmaSet = SigmaSet {
        bits: 0,
        beyond_cap: false,
    };

    pub fn single(v: u32) -> Self {
        if v > Self::CAP {
            SigmaSet {
                bits: 0,
                beyond_cap: true,
            }
        } else {
            SigmaSet {
                bits: 1u128 << v,
                beyond_cap: false,
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0 && !self.beyond_cap
    }

    pub fn contains(&self, v: u32) -> bool {
        v <= Self::CAP && self.bits >> v & 1 == 1
    }

    pub fn union(self, other: SigmaSet) -> SigmaSet {
        SigmaSet {
            bits: self.bits | other.bits,
            beyond_cap: self.beyond_cap || other.beyond_cap,
        }
    }

    /// Minkowski sum `{a + b}`.
    pub fn sum(self, other: SigmaSet) -> SigmaSet {
        if self.is_empty() || other.is_empty() {
            return SigmaSet::EMPTY;
        }
        let mut bits = 0u128;
        let mut beyond = self.beyond_cap || other.beyond_cap;
        let mut a = self.bits;
        while a != 0 {
            let i = a.trailing_zeros();
            a &= a - 1;
            bits |= other.bits << i;
            if i > 0 && other.bits >> (128 - i) != 0 {
                beyond = true;
            }
        }
        SigmaSet {
            bits,
            beyond_cap: beyond,
        }
    }

    pub fn min(&self) -> Option<u32> {
        if self.bits != 0 {
            Some(self.bits.trailing_zeros())
        } else if self.beyond_cap {
            Some(Self::CAP + 1)
        } else {
            None
        }
    }

    /// Largest achievable count, `None` when unbounded or empty.
    pub fn max(&self) -> Option<u32> {
        if self.beyond_cap || self.bits == 0 {
            None
        } else {
            Some(127 - self.bits.leading_zeros())
        }
    }

    pub fn is_bounded(&self) -> bool {
        !self.beyond_cap
    }

    /// Restricts to the half-open range `(lo, hi]`, `lo` may be `-1`.
    pub fn window(&self, lo: i32, hi: i32) -> SigmaSet {
        let mut out = SigmaSet::EMPTY;
        let from = (lo + 1).max(0);
        let to = hi.min(Self::CAP as i32);
        if from <= to {
            let width = (to - from + 1) as u32;
            let mask = if width >= 128 {
                u128::MAX
            } else {
                ((1u128 << width) - 1) << from
            };
            out.bits = self.bits & mask;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..=Self::CAP).filter(move |&v| self.contains(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_window() {
        let a = SigmaSet::single(0).union(SigmaSet::single(1));
        let b = SigmaSet::single(1).union(SigmaSet::single(3));
        let s = a.sum(b);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(s.window(1, 3).iter().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(s.window(-1, 1).iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(s.min(), Some(1));
        assert_eq!(s.max(), Some(4));
    }

    #[test]
    fn overflow_sets_flag() {
        let a = SigmaSet::single(100);
        let s = a.sum(a);
        assert!(!s.is_bounded());
        assert_eq!(s.max(), None);
        assert!(SigmaSet::EMPTY.sum(a).is_empty());
    }
}
