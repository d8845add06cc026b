//! Membership abstraction shared by the dense vertex sets of the torus and
//! the bitmask subsets used on small abstract chains.

pub trait Membership {
    fn contains(&self, i: usize) -> bool;
}

/// A subset of a state space with at most 64 states, as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mask(pub u64);

impl Mask {
    pub const EMPTY: Mask = Mask(0);

    pub fn full(size: usize) -> Mask {
        assert!(size <= 64, "mask subsets support at most 64 states");
        if size == 64 {
            Mask(u64::MAX)
        } else {
            Mask((1u64 << size) - 1)
        }
    }

    pub fn singleton(i: usize) -> Mask {
        Mask(1u64 << i)
    }

    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Mask {
        Mask(idx.into_iter().fold(0, |m, i| m | (1u64 << i)))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn complement(self, size: usize) -> Mask {
        Mask(!self.0 & Mask::full(size).0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn mass(self, pi: &[f64]) -> f64 {
        self.iter().map(|i| pi[i]).sum()
    }
}

impl Membership for Mask {
    #[inline]
    fn contains(&self, i: usize) -> bool {
        i < 64 && (self.0 >> i) & 1 == 1
    }
}

/// Every subset of an `size`-state space, including empty and full.
pub fn all_masks(size: usize) -> impl Iterator<Item = Mask> {
    assert!(size < 64);
    (0..(1u64 << size)).map(Mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_basics() {
        let m = Mask::from_indices([0, 2, 5]);
        assert_eq!(m.len(), 3);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 2, 5]);
        assert_eq!(m.complement(6), Mask::from_indices([1, 3, 4]));
        assert!(m.contains(2) && !m.contains(1));
        assert_eq!(all_masks(3).count(), 8);
    }
}
