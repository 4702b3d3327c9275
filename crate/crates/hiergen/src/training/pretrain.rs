//! Pretraining over the synthetic pairs: each sample flips a fair coin
//! between the generation strategy (text, separator, fully masked image)
//! and the combined infilling + captioning strategy (masked image
//! patches plus masked separator + text). The generation strategy's mask
//! region is extended one slot left to cover the separator, so the
//! position that predicts the first image token is trained exactly as it
//! is used at inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coglm::{
    build_attention_mask, coglm_loss_and_dlogits, layout_sequence, sample_mask_regions,
    LayoutStrategy, MaskRegionSet, TokenSequence,
};
use crate::config::{Geometry, ModelShape};
use crate::error::{Error, Result};
use crate::linalg::Scalar as _;
use crate::model::forward::{
    backward_dense, build_score_bias, forward_dense, DenseArgs, EmbedSpec, UpweightConfig,
};
use crate::model::params::ModelParams;
use crate::model::{Checkpoint, Stage};
use crate::rng;
use crate::tokenizer::vocab::CombinedVocab;
use crate::tokenizer::{encode_image, Codebook, TokenGrid};

use super::optim::{Adam, AdamConfig};
use super::synthetic::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 900, batch_size: 8, adam: AdamConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub strategy_a: usize,
    pub strategy_b: usize,
}

pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from("step,loss,lr,strategy_a,strategy_b\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.step, r.loss, r.lr, r.strategy_a, r.strategy_b
        ));
    }
    s
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    pub strategy_counts: (usize, usize),
}

/// Fair per-sample strategy choice, seeded.
pub fn choose_strategy(seed: u64, step: usize, slot: usize) -> LayoutStrategy {
    use rand::Rng as _;
    let mut r = rng::seeded(rng::substream(seed, 21, (step * 8192 + slot) as u64));
    if r.gen_bool(0.5) {
        LayoutStrategy::TextToImage
    } else {
        LayoutStrategy::MaskAndCaption
    }
}

/// Lay out one training sample and its (possibly extended) mask regions.
pub fn prepare_sample(
    caption_ids: &[u32],
    grid: &TokenGrid,
    strategy: LayoutStrategy,
    language: crate::coglm::Language,
    vocab: &CombinedVocab,
    text_budget: usize,
    region_seed: u64,
) -> Result<(TokenSequence, MaskRegionSet)> {
    let seq = layout_sequence(caption_ids, grid, strategy, language, vocab, text_budget)?;
    let regions = sample_mask_regions(&seq, strategy, region_seed)?;
    let regions = match strategy {
        // cover the separator so the first image token is a trained target
        LayoutStrategy::TextToImage => regions.extend_to_predecessor()?,
        LayoutStrategy::MaskAndCaption => regions,
    };
    Ok((seq, regions))
}

fn assert_first_region_tokens_unpredicted(regions: &MaskRegionSet) {
    let targets: std::collections::HashSet<usize> =
        regions.iter().flat_map(|(l, r)| l + 1..=r).collect();
    for (l, _) in regions.iter() {
        assert!(!targets.contains(&l), "first region token at {l} became a loss target");
    }
}

pub fn pretrain_coglm(
    dataset: &Dataset,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    shape: &ModelShape,
    geometry: &Geometry,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let low_px = geometry.low_pixels();
    let grids: Vec<TokenGrid> = dataset
        .train
        .par_iter()
        .map(|p| encode_image(&p.render(low_px), codebook))
        .collect::<Result<_>>()?;
    let captions: Vec<Vec<u32>> = dataset
        .train
        .iter()
        .map(|p| vocab.encode_text(&p.caption))
        .collect::<Result<_>>()?;

    let mut params = ModelParams::<f32>::init(shape, rng::substream(cfg.seed, 1, 0));
    let mut adam = Adam::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut totals = (0usize, 0usize);

    for step in 0..cfg.steps {
        let items: Vec<(usize, LayoutStrategy)> = (0..cfg.batch_size)
            .map(|slot| {
                use rand::Rng as _;
                let mut r =
                    rng::seeded(rng::substream(cfg.seed, 22, (step * 8192 + slot) as u64));
                let idx = r.gen_range(0..dataset.train.len());
                (idx, choose_strategy(cfg.seed, step, slot))
            })
            .collect();

        let results: Vec<Result<(f64, ModelParams<f32>)>> = items
            .par_iter()
            .enumerate()
            .map(|(slot, (idx, strategy))| {
                let pair = &dataset.train[*idx];
                let (seq, regions) = prepare_sample(
                    &captions[*idx],
                    &grids[*idx],
                    *strategy,
                    pair.language,
                    vocab,
                    geometry.text_budget,
                    rng::substream(cfg.seed, 23, (step * 8192 + slot) as u64),
                )?;
                assert_first_region_tokens_unpredicted(&regions);
                let mask = build_attention_mask(seq.len(), &regions);
                let bias = build_score_bias::<f32>(&mask, &seq.roles, UpweightConfig::none());
                let spec = EmbedSpec::from_sequence(&seq);
                let args = DenseArgs::plain(&bias);
                let trace = forward_dense(&spec, &params, &args)?;
                let (loss, dlogits) = coglm_loss_and_dlogits(&trace.logits, &seq, &regions)?;
                let mut grads = params.zeros_like();
                backward_dense(&spec, &params, &args, &trace, &dlogits, &mut grads, None);
                Ok((loss.to_f64(), grads))
            })
            .collect();

        let mut loss_sum = 0.0;
        let mut batch_grads = params.zeros_like();
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            let mut i = 0;
            let src = grads.tensors();
            batch_grads.visit_tensors_mut(|_, t| {
                for (a, b) in t.mat.data.iter_mut().zip(&src[i].1.mat.data) {
                    *a += *b;
                }
                i += 1;
            });
        }
        let inv = 1.0 / cfg.batch_size as f32;
        batch_grads.visit_tensors_mut(|_, t| t.mat.data.iter_mut().for_each(|v| *v *= inv));
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("batch loss {loss}; aborting before the update"),
            });
        }
        batch_grads.apply_freeze_mask(&params);
        adam.step_model(&mut params, &batch_grads);

        let a = items.iter().filter(|(_, s)| *s == LayoutStrategy::TextToImage).count();
        totals.0 += a;
        totals.1 += cfg.batch_size - a;
        log.push(TrainLogRow {
            step,
            loss,
            lr: cfg.adam.lr,
            strategy_a: a,
            strategy_b: cfg.batch_size - a,
        });
    }

    if !params.all_finite() {
        return Err(Error::Diverged { step: cfg.steps, detail: "non-finite parameters".into() });
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint { stage: Stage::CogLm, trained: true, model: params, decoder_attn: None },
        log,
        strategy_counts: totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_mix_is_half_and_half() {
        let mut a = 0usize;
        let n = 10_000;
        for i in 0..n {
            if choose_strategy(3, i, 0) == LayoutStrategy::TextToImage {
                a += 1;
            }
        }
        let frac = a as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "strategy A fraction {frac}");
    }
}
