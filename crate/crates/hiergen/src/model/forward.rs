//! Full model forward and backward.
//!
//! Block structure per layer (sandwich placement, one normalization on
//! each side of every residual branch):
//!
//! ```text
//! x = x + LN_attn_out( Attn( LN_attn_in(x) ) )
//! x = x + LN_ffn_out( FFN( LN_ffn_in(x) ) )
//! ```
//!
//! Text-stream positions (text, separators, BOS) use the 1D position
//! table indexed by their order within the stream; image cells use the
//! sum of the row and column tables. The dense route drives training and
//! low-resolution generation; the windowed routes run super-resolution
//! inference on the local-attention kernels.

use crate::coglm::{AttentionMaskMatrix, Role, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Scalar};
use crate::local_attention::{
    cross_resolution_local_attention, local_attention_2d, CrossSpec, WindowSpec,
};
use crate::tokenizer::TokenGrid;

use super::attention::{attention_bwd, attention_fwd, AttnCache};
use super::layers::{
    gelu, gelu_bwd, layer_norm, layer_norm_bwd, linear, linear_bwd, LnCache,
};
use super::params::{AttnParams, ModelParams};

/// Textual attention upweighting: a constant added pre-softmax to every
/// (image query, text key) score. Applied at inference in all layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpweightConfig {
    pub c: f64,
}

impl UpweightConfig {
    pub fn none() -> Self {
        UpweightConfig { c: 0.0 }
    }

    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("upweight c must be >= 0, got {c}")));
        }
        Ok(UpweightConfig { c })
    }
}

/// Position-embedding source per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosRef {
    /// Index into the 1D text position table.
    Text(usize),
    /// (row, col) into the 2D image tables.
    Image(usize, usize),
}

/// Everything the embedding layer needs to know about a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedSpec {
    pub tokens: Vec<u32>,
    pub pos: Vec<PosRef>,
}

impl EmbedSpec {
    pub fn from_sequence(seq: &TokenSequence) -> Self {
        let stream = seq.text_stream_index();
        let pos = seq
            .roles
            .iter()
            .enumerate()
            .map(|(i, r)| match r {
                Role::Image => {
                    let (row, col) = seq.image_coords(i);
                    PosRef::Image(row, col)
                }
                _ => PosRef::Text(stream[i].expect("non-image position has a stream index")),
            })
            .collect();
        EmbedSpec { tokens: seq.tokens.clone(), pos }
    }

    /// Image-only sequence in raster order (super-resolution grids).
    pub fn from_grid(grid: &TokenGrid) -> Self {
        let pos = (0..grid.height)
            .flat_map(|r| (0..grid.width).map(move |c| PosRef::Image(r, c)))
            .collect();
        EmbedSpec { tokens: grid.ids.clone(), pos }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Token + position embeddings.
pub fn embed<F: Scalar>(spec: &EmbedSpec, params: &ModelParams<F>) -> Result<Mat<F>> {
    let d = params.shape.d_model;
    let mut x = Mat::zeros(spec.len(), d);
    for (i, (&tok, pos)) in spec.tokens.iter().zip(&spec.pos).enumerate() {
        if tok as usize >= params.shape.vocab {
            return Err(Error::InvalidArgument(format!(
                "token id {tok} out of vocab {}",
                params.shape.vocab
            )));
        }
        let row = x.row_mut(i);
        let te = params.tok_emb.mat.row(tok as usize);
        match *pos {
            PosRef::Text(t) => {
                if t >= params.shape.text_pos_slots {
                    return Err(Error::InvalidArgument(format!(
                        "text position {t} exceeds table of {}",
                        params.shape.text_pos_slots
                    )));
                }
                let pe = params.text_pos.mat.row(t);
                for j in 0..d {
                    row[j] = te[j] + pe[j];
                }
            }
            PosRef::Image(r, c) => {
                if r >= params.shape.image_side_max || c >= params.shape.image_side_max {
                    return Err(Error::InvalidArgument(format!(
                        "image cell ({r},{c}) exceeds table of {}",
                        params.shape.image_side_max
                    )));
                }
                let re = params.img_row.mat.row(r);
                let ce = params.img_col.mat.row(c);
                for j in 0..d {
                    row[j] = te[j] + re[j] + ce[j];
                }
            }
        }
    }
    Ok(x)
}

/// Additive score bias for the dense route: -1e9 on masked pairs, +c on
/// (image query -> text key) pairs, 0 elsewhere.
pub fn build_score_bias<F: Scalar>(
    mask: &AttentionMaskMatrix,
    roles: &[Role],
    upweight: UpweightConfig,
) -> Mat<F> {
    let s = mask.size();
    debug_assert_eq!(roles.len(), s);
    let neg = F::from_f64(-1e9);
    let c = F::from_f64(upweight.c);
    let mut bias = Mat::zeros(s, s);
    for i in 0..s {
        let row = bias.row_mut(i);
        for j in 0..s {
            if !mask.allowed(i, j) {
                row[j] = neg;
            } else if roles[i] == Role::Image && roles[j] == Role::Text {
                row[j] = c;
            }
        }
    }
    bias
}

pub struct DenseArgs<'a, F: Scalar> {
    /// Per-layer replacement attention projections (the super-resolution
    /// decoder); `None` uses the base attention.
    pub attn_override: Option<&'a [AttnParams<F>]>,
    /// Extra key/value source states (encoder outputs), constants.
    pub extra: Option<&'a Mat<F>>,
    /// S x (S+E) additive score bias.
    pub bias: &'a Mat<F>,
}

impl<'a, F: Scalar> DenseArgs<'a, F> {
    pub fn plain(bias: &'a Mat<F>) -> Self {
        DenseArgs { attn_override: None, extra: None, bias }
    }
}

pub struct LayerTrace<F> {
    c_attn_in: LnCache<F>,
    n1: Mat<F>,
    attn_cache: AttnCache<F>,
    c_attn_out: LnCache<F>,
    c_ffn_in: LnCache<F>,
    n3: Mat<F>,
    ffn_pre: Mat<F>,
    ffn_act: Mat<F>,
    c_ffn_out: LnCache<F>,
}

pub struct DenseTrace<F> {
    pub logits: Mat<F>,
    final_x: Mat<F>,
    layers: Vec<LayerTrace<F>>,
}

impl<F: Scalar> DenseTrace<F> {
    /// Per-layer, per-head attention weights (S x (S+E) rows summing to 1).
    pub fn attention_probs(&self, layer: usize) -> &[Mat<F>] {
        &self.layers[layer].attn_cache.probs
    }
}

fn layer_attn<'a, F: Scalar>(
    params: &'a ModelParams<F>,
    over: Option<&'a [AttnParams<F>]>,
    l: usize,
) -> &'a AttnParams<F> {
    match over {
        Some(o) => &o[l],
        None => &params.layers[l].attn,
    }
}

/// Dense-route forward; keeps every intermediate needed by
/// [`backward_dense`].
pub fn forward_dense<F: Scalar>(
    spec: &EmbedSpec,
    params: &ModelParams<F>,
    args: &DenseArgs<F>,
) -> Result<DenseTrace<F>> {
    let s = spec.len();
    let e = args.extra.map_or(0, |m| m.rows);
    if args.bias.rows != s || args.bias.cols != s + e {
        return Err(Error::ShapeMismatch {
            expected: format!("bias {s}x{}", s + e),
            got: format!("{}x{}", args.bias.rows, args.bias.cols),
        });
    }
    if let Some(o) = args.attn_override {
        if o.len() != params.shape.layers {
            return Err(Error::ShapeMismatch {
                expected: format!("{} override layers", params.shape.layers),
                got: format!("{}", o.len()),
            });
        }
    }

    let mut x = embed(spec, params)?;
    if !x.all_finite() {
        return Err(Error::NonFinite { layer: 0 });
    }
    let eps = params.shape.ln_eps;
    let heads = params.shape.heads;
    let mut layers = Vec::with_capacity(params.shape.layers);
    for l in 0..params.shape.layers {
        let lp = &params.layers[l];
        let (n1, c_attn_in) = layer_norm(&x, &lp.ln_attn_in, eps);
        let (attn_out, attn_cache) =
            attention_fwd(&n1, args.extra, layer_attn(params, args.attn_override, l), heads, args.bias);
        let (n2, c_attn_out) = layer_norm(&attn_out, &lp.ln_attn_out, eps);
        for (xv, nv) in x.data.iter_mut().zip(&n2.data) {
            *xv += *nv;
        }
        let (n3, c_ffn_in) = layer_norm(&x, &lp.ln_ffn_in, eps);
        let ffn_pre = linear(&n3, &lp.w1, &lp.b1);
        let ffn_act = gelu(&ffn_pre);
        let ffn_out = linear(&ffn_act, &lp.w2, &lp.b2);
        let (n4, c_ffn_out) = layer_norm(&ffn_out, &lp.ln_ffn_out, eps);
        for (xv, nv) in x.data.iter_mut().zip(&n4.data) {
            *xv += *nv;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { layer: l + 1 });
        }
        layers.push(LayerTrace {
            c_attn_in,
            n1,
            attn_cache,
            c_attn_out,
            c_ffn_in,
            n3,
            ffn_pre,
            ffn_act,
            c_ffn_out,
        });
    }
    let logits = linear(&x, &params.head_w, &params.head_b);
    if !logits.all_finite() {
        return Err(Error::NonFinite { layer: params.shape.layers + 1 });
    }
    Ok(DenseTrace { logits, final_x: x, layers })
}

/// Backward through the dense route. Accumulates into `grads` (same
/// structure as the params); when `attn_grads_override` is given the
/// attention gradients go there instead of the base layers. Freeze
/// flags are applied by the caller via `apply_freeze_mask`.
pub fn backward_dense<F: Scalar>(
    spec: &EmbedSpec,
    params: &ModelParams<F>,
    args: &DenseArgs<F>,
    trace: &DenseTrace<F>,
    dlogits: &Mat<F>,
    grads: &mut ModelParams<F>,
    mut attn_grads_override: Option<&mut Vec<AttnParams<F>>>,
) {
    let heads = params.shape.heads;
    let mut dx = linear_bwd(dlogits, &trace.final_x, &params.head_w, &mut grads.head_w, &mut grads.head_b);

    for l in (0..params.shape.layers).rev() {
        let lp = &params.layers[l];
        let lt = &trace.layers[l];

        // FFN branch
        let dffn_out = {
            let g = &mut grads.layers[l];
            layer_norm_bwd(&dx, &lt.c_ffn_out, &lp.ln_ffn_out, &mut g.ln_ffn_out.gain, &mut g.ln_ffn_out.bias)
        };
        let dact = {
            let g = &mut grads.layers[l];
            linear_bwd(&dffn_out, &lt.ffn_act, &lp.w2, &mut g.w2, &mut g.b2)
        };
        let dpre = gelu_bwd(&dact, &lt.ffn_pre);
        let dn3 = {
            let g = &mut grads.layers[l];
            linear_bwd(&dpre, &lt.n3, &lp.w1, &mut g.w1, &mut g.b1)
        };
        let dres = {
            let g = &mut grads.layers[l];
            layer_norm_bwd(&dn3, &lt.c_ffn_in, &lp.ln_ffn_in, &mut g.ln_ffn_in.gain, &mut g.ln_ffn_in.bias)
        };
        for (a, b) in dx.data.iter_mut().zip(&dres.data) {
            *a += *b;
        }

        // attention branch
        let dattn_out = {
            let g = &mut grads.layers[l];
            layer_norm_bwd(&dx, &lt.c_attn_out, &lp.ln_attn_out, &mut g.ln_attn_out.gain, &mut g.ln_attn_out.bias)
        };
        let dn1 = {
            let ap = layer_attn(params, args.attn_override, l);
            let ag: &mut AttnParams<F> = match attn_grads_override.as_deref_mut() {
                Some(o) => &mut o[l],
                None => &mut grads.layers[l].attn,
            };
            attention_bwd(&dattn_out, &lt.n1, args.extra, ap, &lt.attn_cache, heads, ag)
        };
        let dres = {
            let g = &mut grads.layers[l];
            layer_norm_bwd(&dn1, &lt.c_attn_in, &lp.ln_attn_in, &mut g.ln_attn_in.gain, &mut g.ln_attn_in.bias)
        };
        for (a, b) in dx.data.iter_mut().zip(&dres.data) {
            *a += *b;
        }
    }

    // scatter embedding gradients
    let d = params.shape.d_model;
    for (i, (&tok, pos)) in spec.tokens.iter().zip(&spec.pos).enumerate() {
        let g = dx.row(i);
        let te = grads.tok_emb.mat.row_mut(tok as usize);
        for j in 0..d {
            te[j] += g[j];
        }
        match *pos {
            PosRef::Text(t) => {
                let pe = grads.text_pos.mat.row_mut(t);
                for j in 0..d {
                    pe[j] += g[j];
                }
            }
            PosRef::Image(r, c) => {
                let re = grads.img_row.mat.row_mut(r);
                for j in 0..d {
                    re[j] += g[j];
                }
                let ce = grads.img_col.mat.row_mut(c);
                for j in 0..d {
                    ce[j] += g[j];
                }
            }
        }
    }
}

/// Inference-only attention routing for the windowed paths.
pub enum WindowRoute<'a, F: Scalar> {
    /// Bidirectional local attention over an image grid.
    Local2d { h: usize, w: usize },
    /// Decoder grid attending itself locally plus encoder states under
    /// cross-resolution windows.
    Cross { dec_h: usize, dec_w: usize, enc_h: usize, enc_w: usize, scale: usize, enc_states: &'a Mat<F> },
}

/// Forward on the windowed kernels; returns logits only (no trace).
pub fn forward_windowed<F: Scalar>(
    spec: &EmbedSpec,
    params: &ModelParams<F>,
    attn_override: Option<&[AttnParams<F>]>,
    route: &WindowRoute<F>,
    window: usize,
) -> Result<Mat<F>> {
    let x = forward_windowed_hidden(spec, params, attn_override, route, window)?;
    let logits = linear(&x, &params.head_w, &params.head_b);
    if !logits.all_finite() {
        return Err(Error::NonFinite { layer: params.shape.layers + 1 });
    }
    Ok(logits)
}

/// Windowed-route forward stopping before the output head; used to read
/// encoder hidden states for the cross-resolution decoder.
pub fn forward_windowed_hidden<F: Scalar>(
    spec: &EmbedSpec,
    params: &ModelParams<F>,
    attn_override: Option<&[AttnParams<F>]>,
    route: &WindowRoute<F>,
    window: usize,
) -> Result<Mat<F>> {
    let d = params.shape.d_model;
    let heads = params.shape.heads;
    let head_dim = d / heads;
    let eps = params.shape.ln_eps;
    let (h, w) = match route {
        WindowRoute::Local2d { h, w } => (*h, *w),
        WindowRoute::Cross { dec_h, dec_w, .. } => (*dec_h, *dec_w),
    };
    if spec.len() != h * w {
        return Err(Error::ShapeMismatch {
            expected: format!("{} grid tokens", h * w),
            got: format!("{}", spec.len()),
        });
    }
    let win2d = WindowSpec::square(window);
    let cross_spec = |enc_h: usize, enc_w: usize, scale: usize| WindowSpec {
        kh: window,
        kw: window,
        causal: false,
        cross: Some(CrossSpec { enc_h, enc_w, scale }),
    };

    let mut x = embed(spec, params)?;
    if !x.all_finite() {
        return Err(Error::NonFinite { layer: 0 });
    }
    for l in 0..params.shape.layers {
        let lp = &params.layers[l];
        let ap = layer_attn(params, attn_override, l);
        let (n1, _) = layer_norm(&x, &lp.ln_attn_in, eps);
        let qkv = linear(&n1, &ap.w_qkv, &ap.b_qkv);
        let enc_kv = match route {
            WindowRoute::Cross { enc_states, .. } => Some(linear(enc_states, &ap.w_qkv, &ap.b_qkv)),
            _ => None,
        };
        let mut ctx = Mat::zeros(spec.len(), d);
        for hd in 0..heads {
            let q = super::attention::slice_head(&qkv, 0, d, head_dim, hd);
            let k = super::attention::slice_head(&qkv, 1, d, head_dim, hd);
            let v = super::attention::slice_head(&qkv, 2, d, head_dim, hd);
            let ctx_h = match route {
                WindowRoute::Local2d { .. } => local_attention_2d(h, w, &q, &k, &v, &win2d)?,
                WindowRoute::Cross { enc_h, enc_w, scale, .. } => {
                    let ekv = enc_kv.as_ref().expect("encoder projection present");
                    let ek = super::attention::slice_head(ekv, 1, d, head_dim, hd);
                    let ev = super::attention::slice_head(ekv, 2, d, head_dim, hd);
                    cross_resolution_local_attention(
                        h,
                        w,
                        &q,
                        &k,
                        &v,
                        &ek,
                        &ev,
                        &cross_spec(*enc_h, *enc_w, *scale),
                    )?
                }
            };
            super::attention::add_head(&mut ctx, head_dim, hd, &ctx_h);
        }
        let attn_out = linear(&ctx, &ap.w_o, &ap.b_o);
        let (n2, _) = layer_norm(&attn_out, &lp.ln_attn_out, eps);
        for (xv, nv) in x.data.iter_mut().zip(&n2.data) {
            *xv += *nv;
        }
        let (n3, _) = layer_norm(&x, &lp.ln_ffn_in, eps);
        let ffn = linear(&gelu(&linear(&n3, &lp.w1, &lp.b1)), &lp.w2, &lp.b2);
        let (n4, _) = layer_norm(&ffn, &lp.ln_ffn_out, eps);
        for (xv, nv) in x.data.iter_mut().zip(&n4.data) {
            *xv += *nv;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { layer: l + 1 });
        }
    }
    Ok(x)
}
