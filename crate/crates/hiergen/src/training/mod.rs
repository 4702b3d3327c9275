//! Synthetic data and the three training phases: base pretraining,
//! direct super-resolution finetuning, iterative super-resolution
//! finetuning.

pub mod finetune;
pub mod optim;
pub mod pretrain;
pub mod synthetic;

pub use finetune::{
    direct_sr_bias, draw_mask_ratio, finetune_sr, inplace_ce_loss_and_dlogits, local_band_bias,
    FinetuneOutcome, ITERATIVE_MASK_RATIOS,
};
pub use optim::{Adam, AdamConfig};
pub use pretrain::{
    choose_strategy, log_to_csv, prepare_sample, pretrain_coglm, PretrainOutcome, TrainConfig,
    TrainLogRow,
};
pub use synthetic::{
    caption_is_faithful, caption_of, grammar_vocab, parse_caption, render_scene,
    synthetic_dataset, Dataset, Relation, SceneRecord, ShapeKind, ShapeSpec, SyntheticPair,
};
