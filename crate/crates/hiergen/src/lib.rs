//! Hierarchical token-based text-to-image generation at desk scale.
//!
//! The stack: a k-means patch codebook stands in for a learned image
//! tokenizer; a masked prefix-attention language model handles
//! generation, infilling and captioning over mixed text/image token
//! sequences; windowed local-attention kernels make the high-resolution
//! stages cheap; and two finetuned super-resolution stages (a direct
//! encoder-decoder mapping and an iterative local-parallel refinement)
//! lift generated grids to 3x resolution.

pub mod config;
pub mod coglm;
pub mod error;
pub mod hierarchy;
pub mod image_io;
pub mod linalg;
pub mod local_attention;
pub mod memtrack;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod tokenizer;
pub mod training;

pub use coglm::{
    build_attention_mask, coglm_loss, prepare_infill, sample_mask_regions, AttentionMaskMatrix,
    InfillMode, Language, LayoutStrategy, MaskRegionSet, Role, TokenSequence,
};
pub use config::{config_hash, Geometry, ModelShape};
pub use error::{Error, Result};
pub use image_io::Pixmap;
pub use local_attention::{
    benchmark, cross_resolution_local_attention, local_attention_2d, local_attention_2d_causal,
    BenchConfig, BenchRow, CrossSpec, WindowSpec,
};
pub use model::{
    attention_upweight_mass, grad_check, Checkpoint, DirectSrParams, ModelParams, Stage,
    UpweightConfig,
};
pub use hierarchy::{
    build_lopar_schedule, direct_sr, iterative_sr, KeepPattern, LoParSchedule, PlanKind,
};
pub use pipeline::{
    caption_score, generate, infill_edit, GenerateConfig, GenerateOutput, InfillRequest,
    ParamsBundle, RunManifest,
};
pub use sampling::{cluster_sample, truncated_sample, SamplerConfig, TruncationMode};
pub use tokenizer::{decode_tokens, encode_image, Codebook, TokenGrid};
pub use training::{finetune_sr, pretrain_coglm, synthetic_dataset, TrainConfig};
