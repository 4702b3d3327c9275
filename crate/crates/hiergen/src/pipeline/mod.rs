//! End-to-end text-to-image generation and text-guided infilling.
//!
//! Generation: a batch of low-resolution grids is decoded
//! auto-regressively from the text, optionally ranked by caption
//! perplexity (lowest is best), and the survivors pass through direct
//! then iterative super-resolution before being painted to pixels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coglm::{
    build_attention_mask, layout_sequence, prepare_infill, sample_mask_regions, InfillMode,
    Language, LayoutStrategy, MaskRegionSet,
};
use crate::config::{config_hash, Geometry};
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_lopar_schedule, direct_sr, iterative_sr, DirectSrRun, IterativeSrRun, KeepPattern,
    PlanKind,
};
use crate::image_io::Pixmap;
use crate::model::forward::{
    build_score_bias, forward_dense, DenseArgs, EmbedSpec, UpweightConfig,
};
use crate::model::{Checkpoint, Stage};
use crate::rng;
use crate::sampling::{restricted_probs, sample_token, SamplerConfig, TruncationMode};
use crate::tokenizer::vocab::{CombinedVocab, Special};
use crate::tokenizer::{decode_tokens, encode_image, Codebook, TokenGrid};

/// Everything generation needs loaded up front.
pub struct ParamsBundle {
    pub coglm: Checkpoint,
    pub direct: Checkpoint,
    pub iterative: Checkpoint,
    pub codebook: Codebook,
    pub vocab: CombinedVocab,
    pub geometry: Geometry,
}

impl ParamsBundle {
    pub fn validate(&self) -> Result<()> {
        for (ck, stage) in [
            (&self.coglm, Stage::CogLm),
            (&self.direct, Stage::DirectSr),
            (&self.iterative, Stage::IterativeSr),
        ] {
            ck.expect_stage(stage)?;
            if !ck.trained {
                return Err(Error::Checkpoint(format!(
                    "{} checkpoint is flagged untrained",
                    stage.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n_candidates: usize,
    /// Candidates surviving post-selection into super-resolution.
    pub keep: usize,
    pub temperature: f64,
    /// Clusters kept by cluster sampling.
    pub cluster_k: usize,
    pub upweight: f64,
    pub post_select: bool,
    pub language: Language,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            n_candidates: 16,
            keep: 1,
            temperature: 1.0,
            cluster_k: 4,
            upweight: 1.0,
            post_select: true,
            language: Language::English,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            temperature: self.temperature,
            mode: TruncationMode::Cluster { k: self.cluster_k },
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub seed: u64,
    pub caption_score: Option<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub text: String,
    pub seed: u64,
    pub config_hash: String,
    pub workers: usize,
    pub candidates: Vec<CandidateReport>,
    /// File names, filled in by whoever writes artifacts to disk.
    pub outputs: Vec<String>,
}

pub struct GenerateOutput {
    /// Final high-resolution images of the kept candidates, best first.
    pub images: Vec<Pixmap>,
    pub high_grids: Vec<TokenGrid>,
    pub low_grids: Vec<TokenGrid>,
    pub manifest: RunManifest,
}

/// Auto-regressive low-resolution generation for one candidate.
pub fn generate_low_res(
    text_ids: &[u32],
    bundle_coglm: &Checkpoint,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    geometry: &Geometry,
    sampler: &SamplerConfig,
    upweight: f64,
    seed: u64,
) -> Result<TokenGrid> {
    let n = geometry.low_side;
    let placeholder = TokenGrid::filled(n, n, vocab.special(Special::Mask));
    let mut seq = layout_sequence(
        text_ids,
        &placeholder,
        LayoutStrategy::TextToImage,
        Language::English,
        vocab,
        geometry.text_budget,
    )?;
    let regions = sample_mask_regions(&seq, LayoutStrategy::TextToImage, 0)?
        .extend_to_predecessor()?;
    let mask = build_attention_mask(seq.len(), &regions);
    let bias = build_score_bias::<f32>(&mask, &seq.roles, UpweightConfig::new(upweight)?);
    let mut rng = rng::seeded(seed);

    let s = seq.len();
    let sep = seq.separator_pos();
    for p in sep..s - 1 {
        let spec = EmbedSpec::from_sequence(&seq);
        let trace = forward_dense(&spec, &bundle_coglm.model, &DenseArgs::plain(&bias))?;
        let probs = restricted_probs(trace.logits.row(p), vocab.image_range());
        let id = sample_token(&probs, Some(codebook), sampler, &mut rng)?;
        seq.tokens[p + 1] = id;
    }
    Ok(seq.image_grid())
}

/// Perplexity of the text under the captioning layout: the image is
/// context, the separator + text span is the mask region, and the
/// softmax is restricted to the text section of the vocabulary (so a
/// uniform model scores exactly the text vocabulary size).
pub fn caption_score(
    grid: &TokenGrid,
    text: &str,
    language: Language,
    coglm: &Checkpoint,
    vocab: &CombinedVocab,
    text_budget: usize,
) -> Result<f64> {
    coglm.expect_stage(Stage::CogLm)?;
    let text_ids = vocab.encode_text(text)?;
    if text_ids.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty caption".into()));
    }
    let seq = layout_sequence(
        &text_ids,
        grid,
        LayoutStrategy::MaskAndCaption,
        language,
        vocab,
        text_budget,
    )?;
    let sep0 = seq.separator_pos();
    let regions = MaskRegionSet::new(vec![(sep0 + 1, seq.len())])?;
    let mask = build_attention_mask(seq.len(), &regions);
    let bias = build_score_bias::<f32>(&mask, &seq.roles, UpweightConfig::none());
    let spec = EmbedSpec::from_sequence(&seq);
    let trace = forward_dense(&spec, &coglm.model, &DenseArgs::plain(&bias))?;

    let base = vocab.image_vocab;
    let mut nll = 0.0f64;
    let (l, r) = (sep0 + 1, seq.len());
    for i in l..r {
        let target = seq.tokens[i] as usize;
        debug_assert!(target >= base, "caption target must be a text-section token");
        let probs = restricted_probs(trace.logits.row(i - 1), vocab.text_range());
        nll -= probs[target - base].ln();
    }
    Ok((nll / (r - l) as f64).exp())
}

pub fn generate(
    text: &str,
    bundle: &ParamsBundle,
    cfg: &GenerateConfig,
) -> Result<GenerateOutput> {
    bundle.validate()?;
    if cfg.n_candidates == 0 || cfg.keep == 0 {
        return Err(Error::InvalidArgument("need at least one candidate and one keep".into()));
    }
    let text_ids = bundle.vocab.encode_text(text)?;

    // candidates are independent; each gets its own derived seed
    let cand_seeds: Vec<u64> =
        (0..cfg.n_candidates).map(|i| rng::substream(cfg.seed, 2, i as u64)).collect();
    let lows: Vec<TokenGrid> = cand_seeds
        .par_iter()
        .map(|&seed| {
            generate_low_res(
                &text_ids,
                &bundle.coglm,
                &bundle.codebook,
                &bundle.vocab,
                &bundle.geometry,
                &cfg.sampler(seed),
                cfg.upweight,
                seed,
            )
        })
        .collect::<Result<_>>()?;

    let do_select = cfg.post_select && !text_ids.is_empty() && cfg.n_candidates > 1;
    let scores: Vec<Option<f64>> = if do_select {
        lows.par_iter()
            .map(|g| {
                caption_score(
                    g,
                    text,
                    cfg.language,
                    &bundle.coglm,
                    &bundle.vocab,
                    bundle.geometry.text_budget,
                )
                .map(Some)
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; cfg.n_candidates]
    };

    // rank ascending by score; ties and unscored runs fall back to index
    let mut order: Vec<usize> = (0..cfg.n_candidates).collect();
    order.sort_by(|&a, &b| match (scores[a], scores[b]) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap().then(a.cmp(&b)),
        _ => a.cmp(&b),
    });
    let kept: Vec<usize> = order.iter().copied().take(cfg.keep.min(cfg.n_candidates)).collect();

    let schedule = build_lopar_schedule(
        bundle.geometry.high_side(),
        bundle.geometry.high_side(),
        bundle.geometry.sigma,
        KeepPattern::Grid,
        PlanKind::Compressed,
    )?;
    let results: Vec<(TokenGrid, Pixmap)> = kept
        .par_iter()
        .map(|&idx| {
            let sr_seed = rng::substream(cfg.seed, 5, idx as u64);
            let run = DirectSrRun {
                vocab: &bundle.vocab,
                codebook: &bundle.codebook,
                scale: bundle.geometry.scale,
                window: bundle.geometry.window,
                sampler: cfg.sampler(sr_seed),
                seed: sr_seed,
            };
            let high = direct_sr(&lows[idx], &bundle.direct, &run)?;
            let iter_seed = rng::substream(cfg.seed, 6, idx as u64);
            let irun = IterativeSrRun {
                vocab: &bundle.vocab,
                codebook: &bundle.codebook,
                window: bundle.geometry.window,
                sampler: cfg.sampler(iter_seed),
                seed: iter_seed,
            };
            let (refined, _) = iterative_sr(&high, &bundle.iterative, &schedule, &irun)?;
            let img = decode_tokens(&refined, &bundle.codebook)?;
            Ok((refined, img))
        })
        .collect::<Result<_>>()?;

    let candidates = (0..cfg.n_candidates)
        .map(|i| CandidateReport {
            index: i,
            seed: cand_seeds[i],
            caption_score: scores[i],
            kept: kept.contains(&i),
        })
        .collect();
    let manifest = RunManifest {
        text: text.to_string(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        workers: rayon::current_num_threads(),
        candidates,
        outputs: Vec::new(),
    };
    let (high_grids, images) = results.into_iter().unzip();
    Ok(GenerateOutput { images, high_grids, low_grids: lows, manifest })
}

/// Text-guided re-generation of a rectangular token region; all other
/// cells are preserved bit-exactly.
pub struct InfillRequest {
    /// (row0, col0, row1, col1), inclusive token-cell bounds.
    pub rect: (usize, usize, usize, usize),
    pub mode: InfillMode,
    pub sampler: SamplerConfig,
    pub upweight: f64,
}

pub fn infill_edit(
    image: &Pixmap,
    text: &str,
    language: Language,
    coglm: &Checkpoint,
    codebook: &Codebook,
    vocab: &CombinedVocab,
    text_budget: usize,
    req: &InfillRequest,
) -> Result<(Pixmap, TokenGrid)> {
    coglm.expect_stage(Stage::CogLm)?;
    let grid = encode_image(image, codebook)?;
    let (r0, c0, r1, c1) = req.rect;
    if r0 > r1 || c0 > c1 {
        return Err(Error::InvalidArgument("empty infill region".into()));
    }
    if r1 >= grid.height || c1 >= grid.width {
        return Err(Error::InvalidArgument(format!(
            "rect ({r0},{c0})-({r1},{c1}) outside {}x{} token grid",
            grid.height, grid.width
        )));
    }
    let text_ids = vocab.encode_text(text)?;
    let mut seq = layout_sequence(
        &text_ids,
        &grid,
        LayoutStrategy::TextToImage,
        language,
        vocab,
        text_budget,
    )?;

    let mut cells = vec![false; grid.len()];
    for r in r0..=r1 {
        for c in c0..=c1 {
            cells[r * grid.width + c] = true;
        }
    }
    let regions = MaskRegionSet::from_cells(&cells, seq.image_start());
    let plan = prepare_infill(&seq, &regions, req.mode)?;

    // unknown cells start as [MASK]; their columns are masked anyway
    let mask_id = vocab.special(Special::Mask);
    let original = seq.tokens.clone();
    let in_any_region = regions.membership(seq.len());
    for (i, &masked) in in_any_region.iter().enumerate() {
        if masked {
            seq.tokens[i] = mask_id;
        }
    }

    let mut rng = rng::seeded(req.sampler.seed);
    for pass in &plan.passes {
        let mask = build_attention_mask(seq.len(), &pass.mask_regions);
        let bias = build_score_bias::<f32>(&mask, &seq.roles, UpweightConfig::new(req.upweight)?);
        for &(l, r) in &pass.active {
            // the region's first position holds the moved context token
            seq.tokens[l - 1] = original[l - 1];
            for p in (l - 1)..(r - 1) {
                let spec = EmbedSpec::from_sequence(&seq);
                let trace = forward_dense(&spec, &coglm.model, &DenseArgs::plain(&bias))?;
                let probs = restricted_probs(trace.logits.row(p), vocab.image_range());
                let id = sample_token(&probs, Some(codebook), &req.sampler, &mut rng)?;
                seq.tokens[p + 1] = id;
            }
        }
    }

    let out_grid = seq.image_grid();
    // untouched cells must be identical to the input encoding
    for r in 0..grid.height {
        for c in 0..grid.width {
            if !(r0..=r1).contains(&r) || !(c0..=c1).contains(&c) {
                debug_assert_eq!(out_grid.get(r, c), grid.get(r, c));
            }
        }
    }
    let out = decode_tokens(&out_grid, codebook)?;
    Ok((out, out_grid))
}
