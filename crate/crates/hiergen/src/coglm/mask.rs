//! Attention mask construction from mask regions.
//!
//! Position `j` (a column) is visible to every position when it lies
//! outside all mask regions; inside the regions visibility is causal:
//! `A[i,j] = 1` iff `j` is context, or `j <= i` with both `i` and `j` in
//! regions. Rows and columns of the masked tokens together form a
//! lower-triangular block over the region union.

use super::regions::MaskRegionSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMaskMatrix {
    s: usize,
    bits: Vec<bool>,
}

impl AttentionMaskMatrix {
    pub fn size(&self) -> usize {
        self.s
    }

    /// May 0-based position `i` attend to 0-based position `j`?
    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.s + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.s..(i + 1) * self.s]
    }

    /// Visible key count per row (sanity: never zero, the diagonal is
    /// always visible).
    pub fn visible_counts(&self) -> Vec<usize> {
        (0..self.s).map(|i| self.row(i).iter().filter(|&&b| b).count()).collect()
    }
}

pub fn build_attention_mask(s: usize, regions: &MaskRegionSet) -> AttentionMaskMatrix {
    let in_region = regions.membership(s);
    let mut bits = vec![false; s * s];
    for i in 0..s {
        for j in 0..s {
            bits[i * s + j] = !in_region[j] || (in_region[i] && j <= i);
        }
    }
    AttentionMaskMatrix { s, bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coglm::regions::MaskRegionSet;

    #[test]
    fn hand_evaluated_two_token_region() {
        // S=6, R={[3,4]}: columns 1,2,5,6 all ones; the region block is
        // lower-triangular.
        let set = MaskRegionSet::new(vec![(3, 4)]).unwrap();
        let a = build_attention_mask(6, &set);
        for i in 0..6 {
            for &j in &[0usize, 1, 4, 5] {
                assert!(a.allowed(i, j), "context column {} must be visible to {}", j + 1, i + 1);
            }
        }
        assert!(!a.allowed(2, 3)); // A[3,4] = 0
        assert!(a.allowed(3, 2)); // A[4,3] = 1
        assert!(a.allowed(2, 2)); // A[3,3] = 1
        assert!(a.allowed(3, 3)); // A[4,4] = 1
        // context rows cannot see into the region
        assert!(!a.allowed(0, 2));
        assert!(!a.allowed(5, 3));
    }

    #[test]
    fn no_regions_is_fully_bidirectional() {
        let a = build_attention_mask(5, &MaskRegionSet::empty());
        assert!(a.visible_counts().iter().all(|&c| c == 5));
    }

    #[test]
    fn full_region_is_causal_mask() {
        let set = MaskRegionSet::new(vec![(1, 7)]).unwrap();
        let a = build_attention_mask(7, &set);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(a.allowed(i, j), j <= i);
            }
        }
    }

    #[test]
    fn diagonal_always_visible() {
        let set = MaskRegionSet::new(vec![(2, 3), (6, 9)]).unwrap();
        let a = build_attention_mask(10, &set);
        for i in 0..10 {
            assert!(a.allowed(i, i));
        }
    }
}
