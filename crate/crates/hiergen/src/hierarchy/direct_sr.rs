//! Direct super-resolution: encoder-decoder mapping from an N x N token
//! grid to a 3N x 3N grid with every output token sampled independently
//! from its own marginal.
//!
//! The encoder is the frozen pretrained model run over the low-res grid
//! with 2D local attention. The decoder input is an all-[MASK] grid; its
//! per-layer attention (the only finetuned tensors) sees the local
//! decoder window plus the encoder window under it, with keys and values
//! for the encoder side projected from the encoder's final hidden states
//! by the same decoder layer weights.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::checkpoint::{Checkpoint, Stage};
use crate::model::forward::{forward_windowed, forward_windowed_hidden, EmbedSpec, WindowRoute};
use crate::model::params::DirectSrParams;
use crate::rng;
use crate::sampling::{restricted_probs, sample_token, SamplerConfig};
use crate::tokenizer::vocab::{CombinedVocab, Special};
use crate::tokenizer::{Codebook, TokenGrid};

pub struct DirectSrRun<'a> {
    pub vocab: &'a CombinedVocab,
    pub codebook: &'a Codebook,
    pub scale: usize,
    pub window: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

/// Encoder forward over the low-res grid; returns final hidden states.
pub fn encode_low_grid(
    low: &TokenGrid,
    params: &DirectSrParams<f32>,
    window: usize,
) -> Result<Mat<f32>> {
    let spec = EmbedSpec::from_grid(low);
    forward_windowed_hidden(
        &spec,
        &params.base,
        None,
        &WindowRoute::Local2d { h: low.height, w: low.width },
        window,
    )
}

/// Decoder logits for an all-[MASK] high-res grid over given encoder
/// states.
pub fn decoder_logits(
    enc_states: &Mat<f32>,
    low_shape: (usize, usize),
    params: &DirectSrParams<f32>,
    vocab: &CombinedVocab,
    scale: usize,
    window: usize,
) -> Result<Mat<f32>> {
    let (eh, ew) = low_shape;
    let (dh, dw) = (eh * scale, ew * scale);
    let mask_grid = TokenGrid::filled(dh, dw, vocab.special(Special::Mask));
    let spec = EmbedSpec::from_grid(&mask_grid);
    forward_windowed(
        &spec,
        &params.base,
        Some(&params.decoder_attn),
        &WindowRoute::Cross { dec_h: dh, dec_w: dw, enc_h: eh, enc_w: ew, scale, enc_states },
        window,
    )
}

/// Full direct super-resolution: one decoder forward, then one
/// independent draw per output cell from that cell's marginal. Per-cell
/// seeds are derived from the run seed and the cell index, so the draws
/// are independent of evaluation order.
pub fn direct_sr(low: &TokenGrid, ck: &Checkpoint, run: &DirectSrRun) -> Result<TokenGrid> {
    ck.expect_stage(Stage::DirectSr)?;
    if !ck.trained {
        return Err(Error::Checkpoint(
            "direct-sr checkpoint is flagged untrained; finetune it first".into(),
        ));
    }
    let params = DirectSrParams {
        base: ck.model.clone(),
        decoder_attn: ck
            .decoder_attn
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing decoder attention tensors".into()))?,
    };
    let enc = encode_low_grid(low, &params, run.window)?;
    let logits =
        decoder_logits(&enc, (low.height, low.width), &params, run.vocab, run.scale, run.window)?;

    let (dh, dw) = (low.height * run.scale, low.width * run.scale);
    let mut out = TokenGrid::filled(dh, dw, 0);
    for i in 0..dh * dw {
        let probs = restricted_probs(logits.row(i), run.vocab.image_range());
        let mut cell_rng = rng::seeded(rng::substream(run.seed, 31, i as u64));
        let id = sample_token(&probs, Some(run.codebook), &run.sampler, &mut cell_rng)?;
        out.ids[i] = id;
    }
    Ok(out)
}
