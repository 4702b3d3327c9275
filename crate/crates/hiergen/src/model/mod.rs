//! The dense transformer: parameters, forward/backward, gradient
//! checking, checkpoints, and attention diagnostics.

pub mod attention;
pub mod checkpoint;
pub mod diagnostics;
pub mod forward;
pub mod gradcheck;
pub mod layers;
pub mod params;

pub use checkpoint::{Checkpoint, Stage};
pub use diagnostics::{attention_upweight_mass, UpweightMass};
pub use forward::{
    backward_dense, build_score_bias, embed, forward_dense, forward_windowed, DenseArgs,
    DenseTrace, EmbedSpec, PosRef, UpweightConfig, WindowRoute,
};
pub use gradcheck::{central_difference, grad_check, GradCheckReport};
pub use params::{AttnParams, DirectSrParams, LayerParams, LnParams, ModelParams, Tensor};
