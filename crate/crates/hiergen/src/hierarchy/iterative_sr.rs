//! Iterative super-resolution: local parallel auto-regressive
//! refinement. Kept cells pass through untouched; the rest are re-masked
//! and regenerated in schedule order, one model forward per iteration,
//! with every cell of an iteration sampled from that forward's logits
//! snapshot.

use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, Stage};
use crate::model::forward::{forward_windowed, EmbedSpec, WindowRoute};
use crate::rng;
use crate::sampling::{restricted_probs, sample_token, SamplerConfig};
use crate::tokenizer::vocab::{CombinedVocab, Special};
use crate::tokenizer::{Codebook, TokenGrid};

use super::schedule::LoParSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterativeSrStats {
    /// Model forwards actually run (iterations with at least one cell).
    pub forwards: usize,
    pub kept_cells: usize,
    pub generated_cells: usize,
}

pub struct IterativeSrRun<'a> {
    pub vocab: &'a CombinedVocab,
    pub codebook: &'a Codebook,
    pub window: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

pub fn iterative_sr(
    grid_in: &TokenGrid,
    ck: &Checkpoint,
    schedule: &LoParSchedule,
    run: &IterativeSrRun,
) -> Result<(TokenGrid, IterativeSrStats)> {
    ck.expect_stage(Stage::IterativeSr)?;
    if !ck.trained {
        return Err(Error::Checkpoint(
            "iterative-sr checkpoint is flagged untrained; finetune it first".into(),
        ));
    }
    if (schedule.height, schedule.width) != (grid_in.height, grid_in.width) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} schedule", grid_in.height, grid_in.width),
            got: format!("{}x{}", schedule.height, schedule.width),
        });
    }
    schedule.validate()?;

    let mask_id = run.vocab.special(Special::Mask);
    let (h, w) = (grid_in.height, grid_in.width);
    let mut work = grid_in.clone();
    let mut generated = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !schedule.is_kept(r, c) {
                work.set(r, c, mask_id);
            }
        }
    }

    let mut stats = IterativeSrStats {
        forwards: 0,
        kept_cells: schedule.kept_count(),
        generated_cells: 0,
    };
    for t in 0..schedule.iterations {
        let group = schedule.group(t);
        if group.is_empty() {
            continue;
        }
        let spec = EmbedSpec::from_grid(&work);
        let logits =
            forward_windowed(&spec, &ck.model, None, &WindowRoute::Local2d { h, w }, run.window)?;
        stats.forwards += 1;
        // all cells of this iteration sample from the frozen snapshot;
        // per-cell seeds make the result order-independent
        for &(r, c) in &group {
            let i = r * w + c;
            debug_assert!(!generated[i], "cell generated twice");
            let probs = restricted_probs(logits.row(i), run.vocab.image_range());
            let mut cell_rng =
                rng::seeded(rng::substream(run.seed, 47, (t * h * w + i) as u64));
            let id = sample_token(&probs, Some(run.codebook), &run.sampler, &mut cell_rng)?;
            work.set(r, c, id);
            generated[i] = true;
            stats.generated_cells += 1;
        }
    }
    debug_assert_eq!(stats.generated_cells + stats.kept_cells, h * w);
    Ok((work, stats))
}
