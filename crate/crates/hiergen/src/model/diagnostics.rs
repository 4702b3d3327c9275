//! Attention diagnostics for the textual upweighting knob.

use crate::coglm::{build_attention_mask, sample_mask_regions, Role, TokenSequence};
use crate::error::Result;
use crate::linalg::Scalar;

use super::forward::{build_score_bias, forward_dense, DenseArgs, EmbedSpec, UpweightConfig};
use super::params::ModelParams;

#[derive(Debug, Clone)]
pub struct UpweightMass {
    pub c: f64,
    /// Softmax mass on text keys, summed per image-query row and averaged
    /// over image queries and heads, one entry per layer.
    pub per_layer: Vec<f64>,
    /// Mean over layers.
    pub mean: f64,
}

/// Measure how much attention image queries place on text keys as the
/// upweight constant varies. Runs the generation-layout mask, so text is
/// visible context for every image query.
pub fn attention_upweight_mass<F: Scalar>(
    seq: &TokenSequence,
    params: &ModelParams<F>,
    cs: &[f64],
) -> Result<Vec<UpweightMass>> {
    let regions = sample_mask_regions(seq, seq.strategy, 0)?;
    let mask = build_attention_mask(seq.len(), &regions);
    let spec = EmbedSpec::from_sequence(seq);
    let image_rows: Vec<usize> = seq
        .roles
        .iter()
        .enumerate()
        .filter_map(|(i, r)| (*r == Role::Image).then_some(i))
        .collect();
    let text_cols: Vec<usize> = seq
        .roles
        .iter()
        .enumerate()
        .filter_map(|(j, r)| (*r == Role::Text).then_some(j))
        .collect();

    let mut out = Vec::with_capacity(cs.len());
    for &c in cs {
        let bias = build_score_bias::<F>(&mask, &seq.roles, UpweightConfig::new(c)?);
        let trace = forward_dense(&spec, params, &DenseArgs::plain(&bias))?;
        let mut per_layer = Vec::with_capacity(params.shape.layers);
        for l in 0..params.shape.layers {
            let probs = trace.attention_probs(l);
            let mut acc = 0.0;
            let mut count = 0usize;
            for head in probs {
                for &i in &image_rows {
                    let row = head.row(i);
                    let mass: f64 = text_cols.iter().map(|&j| row[j].to_f64()).sum();
                    acc += mass;
                    count += 1;
                }
            }
            per_layer.push(acc / count as f64);
        }
        let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
        out.push(UpweightMass { c, per_layer, mean });
    }
    Ok(out)
}
