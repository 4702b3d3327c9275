//! Mask regions: ordered disjoint 1-based inclusive intervals over a
//! sequence. Region sampling implements the two training strategies.

use rand::seq::SliceRandom;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

use super::sequence::{LayoutStrategy, TokenSequence};

/// Side of the square token patches drawn by the mask-and-caption strategy.
pub const MASK_PATCH: usize = 4;
/// Fraction of image cells that must end up inside mask regions.
pub const MASK_COVERAGE: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRegionSet {
    /// `(l, r)` 1-based inclusive, sorted, pairwise disjoint.
    regions: Vec<(usize, usize)>,
}

impl MaskRegionSet {
    pub fn new(regions: Vec<(usize, usize)>) -> Result<Self> {
        for &(l, r) in &regions {
            if l < 1 || r < l {
                return Err(Error::InvalidArgument(format!("bad region [{l}, {r}]")));
            }
        }
        for w in regions.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::InvalidArgument(format!(
                    "regions [{},{}] and [{},{}] overlap or are out of order",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(MaskRegionSet { regions })
    }

    pub fn empty() -> Self {
        MaskRegionSet { regions: Vec::new() }
    }

    /// Build regions from a 0-based cell mask, merging runs of masked
    /// cells into maximal intervals. `offset` shifts cell 0 to sequence
    /// position `offset + 1` (1-based).
    pub fn from_cells(cells: &[bool], offset: usize) -> Self {
        let mut regions = Vec::new();
        let mut run: Option<usize> = None;
        for (i, &m) in cells.iter().enumerate() {
            match (m, run) {
                (true, None) => run = Some(i),
                (false, Some(start)) => {
                    regions.push((offset + start + 1, offset + i));
                    run = None;
                }
                _ => {}
            }
        }
        if let Some(start) = run {
            regions.push((offset + start + 1, offset + cells.len()));
        }
        MaskRegionSet { regions }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.regions.iter().copied()
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Is 1-based position `pos` inside any region?
    pub fn contains(&self, pos: usize) -> bool {
        self.regions.iter().any(|&(l, r)| l <= pos && pos <= r)
    }

    /// Membership table indexed by 0-based position.
    pub fn membership(&self, s: usize) -> Vec<bool> {
        let mut m = vec![false; s];
        for &(l, r) in &self.regions {
            for p in l..=r.min(s) {
                m[p - 1] = true;
            }
        }
        m
    }

    /// Number of loss targets: sum of `r - l` over regions.
    pub fn target_count(&self) -> usize {
        self.regions.iter().map(|&(l, r)| r - l).sum()
    }

    /// Total positions covered.
    pub fn covered(&self) -> usize {
        self.regions.iter().map(|&(l, r)| r - l + 1).sum()
    }

    /// Extend every region one position left, swallowing its predecessor
    /// context token (the infilling shift). Errors if any region starts
    /// at position 1 or would collide with the previous region.
    pub fn extend_to_predecessor(&self) -> Result<MaskRegionSet> {
        let mut out = Vec::with_capacity(self.regions.len());
        let mut prev_r = 0usize;
        for &(l, r) in &self.regions {
            if l < 2 {
                return Err(Error::InvalidArgument(
                    "region at sequence start has no predecessor to move".into(),
                ));
            }
            if l - 1 <= prev_r {
                return Err(Error::InvalidArgument(format!(
                    "region [{l},{r}] has no context predecessor (previous region ends at {prev_r})"
                )));
            }
            out.push((l - 1, r));
            prev_r = r;
        }
        MaskRegionSet::new(out)
    }
}

impl Serialize for MaskRegionSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[usize; 2]> = self.regions.iter().map(|&(l, r)| [l, r]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaskRegionSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[usize; 2]>::deserialize(d)?;
        MaskRegionSet::new(pairs.into_iter().map(|p| (p[0], p[1])).collect())
            .map_err(D::Error::custom)
    }
}

/// Sample mask regions for a laid-out sequence.
///
/// * `TextToImage`: one region covering the whole image span.
/// * `MaskAndCaption`: random `4x4` token patches (clipped at the grid
///   border) drawn without corner replacement until at least 75% of the
///   image cells are masked, merged into per-row maximal intervals, plus
///   one region covering separator and text.
pub fn sample_mask_regions(
    seq: &TokenSequence,
    strategy: LayoutStrategy,
    seed: u64,
) -> Result<MaskRegionSet> {
    if strategy != seq.strategy {
        return Err(Error::InvalidArgument(
            "mask strategy does not match the sequence layout".into(),
        ));
    }
    match strategy {
        LayoutStrategy::TextToImage => {
            let (l, r) = seq.image_span();
            MaskRegionSet::new(vec![(l, r)])
        }
        LayoutStrategy::MaskAndCaption => {
            let (h, w) = seq.grid;
            let n = h * w;
            let target = (MASK_COVERAGE * n as f64).ceil() as usize;
            let mut corners: Vec<(usize, usize)> =
                (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
            let mut rng = rng::seeded(seed);
            corners.shuffle(&mut rng);

            let mut masked = vec![false; n];
            let mut covered = 0usize;
            for (r0, c0) in corners {
                if covered >= target {
                    break;
                }
                for r in r0..(r0 + MASK_PATCH).min(h) {
                    for c in c0..(c0 + MASK_PATCH).min(w) {
                        let idx = r * w + c;
                        if !masked[idx] {
                            masked[idx] = true;
                            covered += 1;
                        }
                    }
                }
            }

            let mut set = MaskRegionSet::from_cells(&masked, seq.image_start());
            let sep = seq.separator_pos();
            set.regions.push((sep + 1, seq.len()));
            MaskRegionSet::new(set.regions)
        }
    }
}
