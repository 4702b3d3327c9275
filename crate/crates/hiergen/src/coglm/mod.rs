//! Masked prefix-attention language modeling: sequence layout, mask
//! region sampling, attention mask construction, the region next-token
//! loss, and infilling preparation.

pub mod infill;
pub mod loss;
pub mod mask;
pub mod regions;
pub mod sequence;

pub use infill::{prepare_infill, InfillMode, InfillPass, InfillPlan};
pub use loss::{coglm_loss, coglm_loss_and_dlogits};
pub use mask::{build_attention_mask, AttentionMaskMatrix};
pub use regions::{sample_mask_regions, MaskRegionSet, MASK_COVERAGE, MASK_PATCH};
pub use sequence::{layout_sequence, Language, LayoutStrategy, Role, TokenSequence};
