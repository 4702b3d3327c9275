//! Infilling preparation: the predecessor-shift trick.
//!
//! Training never predicts the first token of a region, so to generate a
//! region's full content at inference the last context token before it
//! is moved into the region to serve as its first, unpredicted position
//! (the region grows one slot to the left). In `AllAtOnce` mode every
//! region is shifted up front and one left-to-right pass generates them
//! all; the swallowed tokens land in masked columns and become blind
//! spots for earlier regions. `RegionByRegion` avoids the blind spots by
//! running one pass per region: only the active region is shifted, every
//! previously generated region turns back into plain context, and the
//! remaining regions stay masked.

use crate::error::Result;

use super::regions::MaskRegionSet;
use super::sequence::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfillMode {
    AllAtOnce,
    RegionByRegion,
}

/// One decoding pass: auto-regressive sampling sweeps the `active`
/// regions left to right under the attention mask built from
/// `mask_regions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfillPass {
    /// Adjusted regions to generate in this pass (1-based inclusive).
    /// Predictions are read at positions `l..r-1` of each, filling
    /// `l+1..r`; the token at `l` is the moved context token.
    pub active: Vec<(usize, usize)>,
    /// Region set defining the attention mask for this pass.
    pub mask_regions: MaskRegionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfillPlan {
    pub passes: Vec<InfillPass>,
}

pub fn prepare_infill(
    seq: &TokenSequence,
    regions: &MaskRegionSet,
    mode: InfillMode,
) -> Result<InfillPlan> {
    let _ = seq.len(); // shape errors surface when masks are built
    let passes = match mode {
        InfillMode::AllAtOnce => {
            let adjusted = regions.extend_to_predecessor()?;
            vec![InfillPass {
                active: adjusted.iter().collect(),
                mask_regions: adjusted,
            }]
        }
        InfillMode::RegionByRegion => {
            let all: Vec<(usize, usize)> = regions.iter().collect();
            let mut passes = Vec::with_capacity(all.len());
            for (idx, &(l, r)) in all.iter().enumerate() {
                // only the active region is shifted; earlier regions have
                // been generated by now and are context again, later ones
                // stay masked
                let active = MaskRegionSet::new(vec![(l, r)])?.extend_to_predecessor()?;
                let mut mask = active.iter().collect::<Vec<_>>();
                mask.extend_from_slice(&all[idx + 1..]);
                passes.push(InfillPass {
                    active: active.iter().collect(),
                    mask_regions: MaskRegionSet::new(mask)?,
                });
            }
            passes
        }
    };
    Ok(InfillPlan { passes })
}
