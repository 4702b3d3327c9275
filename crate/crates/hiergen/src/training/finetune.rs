//! Super-resolution finetuning.
//!
//! Direct stage: encoder and decoder both start from the pretrained
//! model; everything is frozen except per-layer decoder attention
//! copies. The decoder learns to predict every high-res token's marginal
//! from an all-[MASK] input plus cross-resolution windows into the
//! encoder states.
//!
//! Iterative stage: full finetune into a masked-prediction model on
//! high-res grids under 2D local attention; each sample masks a ratio
//! drawn from {0.2, 0.4, 0.6, 0.8, 0.9} of its cells.

use rayon::prelude::*;

use crate::config::Geometry;
use crate::error::{Error, Result};
use crate::linalg::{softmax_in_place, Mat};
use crate::local_attention::window_range;
use crate::model::forward::{backward_dense, forward_dense, DenseArgs, EmbedSpec};
use crate::model::params::{AttnParams, DirectSrParams, ModelParams, Tensor};
use crate::model::{Checkpoint, Stage};
use crate::rng;
use crate::tokenizer::vocab::{CombinedVocab, Special};
use crate::tokenizer::{encode_image, Codebook, TokenGrid};

use super::optim::Adam;
use super::pretrain::{TrainConfig, TrainLogRow};
use super::synthetic::Dataset;

pub const ITERATIVE_MASK_RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 0.9];

pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    /// Mask ratios drawn per (step, slot); iterative stage only.
    pub mask_ratios_drawn: Vec<f64>,
}

/// Mean cross-entropy of in-place predictions at `positions` (all rows
/// when `None`), with the gradient w.r.t. the logits.
pub fn inplace_ce_loss_and_dlogits(
    logits: &Mat<f32>,
    targets: &[u32],
    positions: Option<&[usize]>,
) -> Result<(f64, Mat<f32>)> {
    let all: Vec<usize>;
    let pos: &[usize] = match positions {
        Some(p) => p,
        None => {
            all = (0..logits.rows).collect();
            &all
        }
    };
    if pos.is_empty() {
        return Err(Error::InvalidArgument("no prediction positions".into()));
    }
    let inv = 1.0 / pos.len() as f32;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut nll = 0.0f64;
    for &i in pos {
        let target = targets[i] as usize;
        let mut probs = logits.row(i).to_vec();
        softmax_in_place(&mut probs);
        nll -= (probs[target] as f64).ln();
        let grow = grad.row_mut(i);
        for (g, p) in grow.iter_mut().zip(&probs) {
            *g = *p * inv;
        }
        grow[target] -= inv;
    }
    Ok((nll / pos.len() as f64, grad))
}

/// The structural decoder bias for direct super-resolution training:
/// decoder self keys inside the local window, encoder keys inside the
/// cross-resolution window, everything else -1e9.
pub fn direct_sr_bias(
    dec_h: usize,
    dec_w: usize,
    enc_h: usize,
    enc_w: usize,
    scale: usize,
    window: usize,
) -> Mat<f32> {
    let sd = dec_h * dec_w;
    let se = enc_h * enc_w;
    let neg = -1e9f32;
    let eext = window.div_ceil(scale);
    let mut bias = Mat::zeros(sd, sd + se);
    for i in 0..sd {
        let (r, c) = (i / dec_w, i % dec_w);
        let (r0, r1) = window_range(r, window, dec_h);
        let (c0, c1) = window_range(c, window, dec_w);
        let (er0, er1) = window_range(r / scale, eext, enc_h);
        let (ec0, ec1) = window_range(c / scale, eext, enc_w);
        let row = bias.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let inside = if j < sd {
                let (rr, cc) = (j / dec_w, j % dec_w);
                rr >= r0 && rr <= r1 && cc >= c0 && cc <= c1
            } else {
                let je = j - sd;
                let (rr, cc) = (je / enc_w, je % enc_w);
                rr >= er0 && rr <= er1 && cc >= ec0 && cc <= ec1
            };
            if !inside {
                *slot = neg;
            }
        }
    }
    bias
}

/// The 2D local band bias for iterative-stage training.
pub fn local_band_bias(h: usize, w: usize, window: usize) -> Mat<f32> {
    let s = h * w;
    let neg = -1e9f32;
    let mut bias = Mat::zeros(s, s);
    for i in 0..s {
        let (r, c) = (i / w, i % w);
        let (r0, r1) = window_range(r, window, h);
        let (c0, c1) = window_range(c, window, w);
        let row = bias.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let (rr, cc) = (j / w, j % w);
            if rr < r0 || rr > r1 || cc < c0 || cc > c1 {
                *slot = neg;
            }
        }
    }
    bias
}

pub fn draw_mask_ratio(seed: u64, step: usize, slot: usize) -> f64 {
    use rand::Rng as _;
    let mut r = rng::seeded(rng::substream(seed, 41, (step * 8192 + slot) as u64));
    ITERATIVE_MASK_RATIOS[r.gen_range(0..ITERATIVE_MASK_RATIOS.len())]
}

fn zero_attn_like(attn: &[AttnParams<f32>]) -> Vec<AttnParams<f32>> {
    attn.iter()
        .map(|a| AttnParams {
            w_qkv: Tensor { mat: Mat::zeros(a.w_qkv.mat.rows, a.w_qkv.mat.cols), frozen: false },
            b_qkv: Tensor { mat: Mat::zeros(a.b_qkv.mat.rows, a.b_qkv.mat.cols), frozen: false },
            w_o: Tensor { mat: Mat::zeros(a.w_o.mat.rows, a.w_o.mat.cols), frozen: false },
            b_o: Tensor { mat: Mat::zeros(a.b_o.mat.rows, a.b_o.mat.cols), frozen: false },
        })
        .collect()
}

fn add_attn(dst: &mut [AttnParams<f32>], src: &[AttnParams<f32>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (dt, st) in [
            (&mut d.w_qkv, &s.w_qkv),
            (&mut d.b_qkv, &s.b_qkv),
            (&mut d.w_o, &s.w_o),
            (&mut d.b_o, &s.b_o),
        ] {
            for (a, b) in dt.mat.data.iter_mut().zip(&st.mat.data) {
                *a += *b;
            }
        }
    }
}

fn scale_attn(dst: &mut [AttnParams<f32>], factor: f32) {
    for d in dst.iter_mut() {
        for t in [&mut d.w_qkv, &mut d.b_qkv, &mut d.w_o, &mut d.b_o] {
            t.mat.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Finetune the pretrained model into one of the two super-resolution
/// stages. Errors if the input checkpoint is not a trained base model.
pub fn finetune_sr(
    pretrained: &Checkpoint,
    stage: Stage,
    dataset: &Dataset,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    geometry: &Geometry,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    pretrained.expect_stage(Stage::CogLm)?;
    if !pretrained.trained {
        return Err(Error::Checkpoint("base checkpoint is flagged untrained".into()));
    }
    match stage {
        Stage::DirectSr => finetune_direct(pretrained, dataset, codebook, vocab, geometry, cfg),
        Stage::IterativeSr => {
            finetune_iterative(pretrained, dataset, codebook, vocab, geometry, cfg)
        }
        Stage::CogLm => Err(Error::InvalidArgument(
            "finetune stage must be direct-sr or iterative-sr".into(),
        )),
    }
}

/// Pick the batch item indices for a step (shared by both stages).
fn batch_indices(cfg: &TrainConfig, n: usize, step: usize) -> Vec<usize> {
    use rand::Rng as _;
    (0..cfg.batch_size)
        .map(|slot| {
            let mut r = rng::seeded(rng::substream(cfg.seed, 42, (step * 8192 + slot) as u64));
            r.gen_range(0..n)
        })
        .collect()
}

fn encode_high_grids(
    dataset: &Dataset,
    codebook: &Codebook,
    geometry: &Geometry,
    needed: &std::collections::BTreeSet<usize>,
) -> Result<std::collections::HashMap<usize, TokenGrid>> {
    let px = geometry.high_pixels();
    let entries: Vec<(usize, Result<TokenGrid>)> = needed
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&idx| (idx, encode_image(&dataset.train[idx].render(px), codebook)))
        .collect();
    let mut map = std::collections::HashMap::new();
    for (idx, grid) in entries {
        map.insert(idx, grid?);
    }
    Ok(map)
}

fn finetune_direct(
    pretrained: &Checkpoint,
    dataset: &Dataset,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    geometry: &Geometry,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let mut sr = DirectSrParams::from_pretrained(pretrained.model.clone());
    let frozen_before = sr.base.clone();
    let (low_side, scale, window) = (geometry.low_side, geometry.scale, geometry.window);
    let high_side = low_side * scale;

    let schedule: Vec<Vec<usize>> =
        (0..cfg.steps).map(|s| batch_indices(cfg, dataset.train.len(), s)).collect();
    let needed: std::collections::BTreeSet<usize> =
        schedule.iter().flatten().copied().collect();
    let highs = encode_high_grids(dataset, codebook, geometry, &needed)?;
    let low_px = geometry.low_pixels();
    let lows: std::collections::HashMap<usize, TokenGrid> = {
        let entries: Vec<(usize, Result<TokenGrid>)> = needed
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&&idx| (idx, encode_image(&dataset.train[idx].render(low_px), codebook)))
            .collect();
        let mut map = std::collections::HashMap::new();
        for (idx, grid) in entries {
            map.insert(idx, grid?);
        }
        map
    };

    let bias = direct_sr_bias(high_side, high_side, low_side, low_side, scale, window);
    let mask_grid = TokenGrid::filled(high_side, high_side, vocab.special(Special::Mask));
    let dec_spec = EmbedSpec::from_grid(&mask_grid);

    let mut adam = Adam::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.steps);
    for (step, indices) in schedule.iter().enumerate() {
        let results: Vec<Result<(f64, Vec<AttnParams<f32>>)>> = indices
            .par_iter()
            .map(|idx| {
                let enc = super::super::hierarchy::direct_sr::encode_low_grid(
                    &lows[idx],
                    &sr,
                    window,
                )?;
                let args = DenseArgs {
                    attn_override: Some(&sr.decoder_attn),
                    extra: Some(&enc),
                    bias: &bias,
                };
                let trace = forward_dense(&dec_spec, &sr.base, &args)?;
                let (loss, dlogits) =
                    inplace_ce_loss_and_dlogits(&trace.logits, &highs[idx].ids, None)?;
                let mut base_grads = sr.base.zeros_like();
                let mut attn_grads = zero_attn_like(&sr.decoder_attn);
                backward_dense(
                    &dec_spec,
                    &sr.base,
                    &args,
                    &trace,
                    &dlogits,
                    &mut base_grads,
                    Some(&mut attn_grads),
                );
                Ok((loss, attn_grads))
            })
            .collect();

        let mut loss_sum = 0.0;
        let mut batch = zero_attn_like(&sr.decoder_attn);
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            add_attn(&mut batch, &grads);
        }
        scale_attn(&mut batch, 1.0 / cfg.batch_size as f32);
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, detail: format!("direct-sr loss {loss}") });
        }
        adam.step_attn(&mut sr.decoder_attn, &batch);
        log.push(TrainLogRow {
            step,
            loss,
            lr: cfg.adam.lr,
            strategy_a: 0,
            strategy_b: 0,
        });
    }

    debug_assert_eq!(sr.base, frozen_before, "frozen tensors moved during direct finetuning");
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint::direct_sr(sr, true),
        log,
        mask_ratios_drawn: Vec::new(),
    })
}

fn finetune_iterative(
    pretrained: &Checkpoint,
    dataset: &Dataset,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    geometry: &Geometry,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let mut params = pretrained.model.clone();
    let high_side = geometry.high_side();
    let s = high_side * high_side;
    let mask_id = vocab.special(Special::Mask);

    let schedule: Vec<Vec<usize>> =
        (0..cfg.steps).map(|s| batch_indices(cfg, dataset.train.len(), s)).collect();
    let needed: std::collections::BTreeSet<usize> =
        schedule.iter().flatten().copied().collect();
    let highs = encode_high_grids(dataset, codebook, geometry, &needed)?;

    let bias = local_band_bias(high_side, high_side, geometry.window);
    let mut adam = Adam::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut ratios = Vec::with_capacity(cfg.steps * cfg.batch_size);

    for (step, indices) in schedule.iter().enumerate() {
        let slot_ratios: Vec<f64> =
            (0..cfg.batch_size).map(|slot| draw_mask_ratio(cfg.seed, step, slot)).collect();
        ratios.extend_from_slice(&slot_ratios);

        let results: Vec<Result<(f64, ModelParams<f32>)>> = indices
            .par_iter()
            .enumerate()
            .map(|(slot, idx)| {
                use rand::seq::SliceRandom;
                let grid = &highs[idx];
                let ratio = slot_ratios[slot];
                let n_mask = ((ratio * s as f64).round() as usize).clamp(1, s - 1);
                let mut order: Vec<usize> = (0..s).collect();
                let mut r = rng::seeded(rng::substream(
                    cfg.seed,
                    43,
                    (step * 8192 + slot) as u64,
                ));
                order.shuffle(&mut r);
                let masked = &order[..n_mask];

                let mut input = grid.clone();
                for &i in masked {
                    input.ids[i] = mask_id;
                }
                let spec = EmbedSpec::from_grid(&input);
                let args = DenseArgs::plain(&bias);
                let trace = forward_dense(&spec, &params, &args)?;
                let (loss, dlogits) =
                    inplace_ce_loss_and_dlogits(&trace.logits, &grid.ids, Some(masked))?;
                let mut grads = params.zeros_like();
                backward_dense(&spec, &params, &args, &trace, &dlogits, &mut grads, None);
                Ok((loss, grads))
            })
            .collect();

        let mut loss_sum = 0.0;
        let mut batch = params.zeros_like();
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            let src = grads.tensors();
            let mut i = 0;
            batch.visit_tensors_mut(|_, t| {
                for (a, b) in t.mat.data.iter_mut().zip(&src[i].1.mat.data) {
                    *a += *b;
                }
                i += 1;
            });
        }
        let inv = 1.0 / cfg.batch_size as f32;
        batch.visit_tensors_mut(|_, t| t.mat.data.iter_mut().for_each(|v| *v *= inv));
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, detail: format!("iterative-sr loss {loss}") });
        }
        batch.apply_freeze_mask(&params);
        adam.step_model(&mut params, &batch);
        log.push(TrainLogRow { step, loss, lr: cfg.adam.lr, strategy_a: 0, strategy_b: 0 });
    }

    Ok(FinetuneOutcome {
        checkpoint: Checkpoint::iterative_sr(params, true),
        log,
        mask_ratios_drawn: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_ratios_come_from_the_listed_set() {
        let mut seen = std::collections::HashSet::new();
        for step in 0..200 {
            for slot in 0..4 {
                let r = draw_mask_ratio(7, step, slot);
                assert!(ITERATIVE_MASK_RATIOS.contains(&r), "ratio {r} not in the set");
                seen.insert((r * 10.0) as u32);
            }
        }
        assert_eq!(seen.len(), 5, "all five ratios should appear");
    }

    #[test]
    fn iterative_inputs_keep_context() {
        // max ratio 0.9 always leaves at least 10% unmasked
        assert!(ITERATIVE_MASK_RATIOS.iter().all(|&r| r <= 0.9));
    }

    #[test]
    fn band_bias_blocks_far_pairs() {
        let b = local_band_bias(6, 6, 3);
        // cell (0,0) cannot see (5,5)
        assert_eq!(b.at(0, 35), -1e9);
        assert_eq!(b.at(0, 0), 0.0);
        assert_eq!(b.at(0, 1), 0.0);
        assert_eq!(b.at(0, 7), 0.0);
        assert_eq!(b.at(0, 2), -1e9);
    }

    #[test]
    fn direct_bias_routes_cross_window() {
        let b = direct_sr_bias(6, 6, 2, 2, 3, 3);
        // decoder cell (0,0): encoder window ceil(3/3)=1 centered at (0,0)
        let sd = 36;
        assert_eq!(b.at(0, sd), 0.0); // enc (0,0)
        assert_eq!(b.at(0, sd + 3), -1e9); // enc (1,1)
        // decoder cell (5,5) -> enc center (1,1)
        assert_eq!(b.at(35, sd + 3), 0.0);
        assert_eq!(b.at(35, sd), -1e9);
    }
}
