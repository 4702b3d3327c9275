//! Dense multi-head attention over an arbitrary additive score bias.
//!
//! The bias matrix folds together the attention mask (-1e9 on blocked
//! pairs; large enough that the masked weight underflows to exactly zero
//! after softmax, without the NaN hazards of a literal infinity) and the
//! textual upweighting constant. Keys may extend beyond the query
//! sequence: `extra` supplies additional states (encoder outputs) that
//! are projected with the same K/V weights and treated as constants in
//! the backward pass.

use crate::linalg::{dot, softmax_in_place, Mat, Scalar};

use super::layers::{linear, linear_bwd};
use super::params::AttnParams;

pub struct AttnCache<F> {
    /// S x 3d fused projection of the query-side input.
    qkv: Mat<F>,
    /// E x 3d fused projection of the extra states (empty if none).
    extra_kv: Mat<F>,
    /// Per-head S x (S+E) attention weights.
    pub probs: Vec<Mat<F>>,
    /// S x d concatenated head outputs (input of the output projection).
    ctx: Mat<F>,
}

fn head_cols(block: usize, d: usize, head_dim: usize, h: usize) -> std::ops::Range<usize> {
    block * d + h * head_dim..block * d + (h + 1) * head_dim
}

fn slice_cols<F: Scalar>(m: &Mat<F>, range: std::ops::Range<usize>) -> Mat<F> {
    let w = range.len();
    let mut out = Mat::zeros(m.rows, w);
    for i in 0..m.rows {
        out.row_mut(i).copy_from_slice(&m.row(i)[range.clone()]);
    }
    out
}

fn add_cols<F: Scalar>(dst: &mut Mat<F>, range: std::ops::Range<usize>, src: &Mat<F>) {
    for i in 0..src.rows {
        let drow = &mut dst.row_mut(i)[range.clone()];
        for (a, b) in drow.iter_mut().zip(src.row(i)) {
            *a += *b;
        }
    }
}

/// Stack `top` over `bottom` (same column count).
fn vstack<F: Scalar>(top: &Mat<F>, bottom: &Mat<F>) -> Mat<F> {
    debug_assert_eq!(top.cols, bottom.cols);
    let mut data = Vec::with_capacity((top.rows + bottom.rows) * top.cols);
    data.extend_from_slice(&top.data);
    data.extend_from_slice(&bottom.data);
    Mat::from_vec(top.rows + bottom.rows, top.cols, data)
}

pub fn attention_fwd<F: Scalar>(
    xq: &Mat<F>,
    extra: Option<&Mat<F>>,
    p: &AttnParams<F>,
    heads: usize,
    bias: &Mat<F>,
) -> (Mat<F>, AttnCache<F>) {
    let d = xq.cols;
    let head_dim = d / heads;
    let s = xq.rows;
    let e = extra.map_or(0, |m| m.rows);
    debug_assert_eq!(bias.rows, s);
    debug_assert_eq!(bias.cols, s + e);

    let qkv = linear(xq, &p.w_qkv, &p.b_qkv);
    let extra_kv = match extra {
        Some(m) => linear(m, &p.w_qkv, &p.b_qkv),
        None => Mat::zeros(0, 3 * d),
    };

    let scale = F::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut ctx = Mat::zeros(s, d);
    let mut probs_all = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = slice_cols(&qkv, head_cols(0, d, head_dim, h));
        let k_self = slice_cols(&qkv, head_cols(1, d, head_dim, h));
        let v_self = slice_cols(&qkv, head_cols(2, d, head_dim, h));
        let (k, v) = if e > 0 {
            let k_extra = slice_cols(&extra_kv, head_cols(1, d, head_dim, h));
            let v_extra = slice_cols(&extra_kv, head_cols(2, d, head_dim, h));
            (vstack(&k_self, &k_extra), vstack(&v_self, &v_extra))
        } else {
            (k_self, v_self)
        };

        let mut probs = Mat::zeros(s, s + e);
        for i in 0..s {
            let qrow = q.row(i);
            let brow = bias.row(i);
            let prow = probs.row_mut(i);
            for j in 0..s + e {
                prow[j] = dot(qrow, k.row(j)) * scale + brow[j];
            }
            softmax_in_place(prow);
        }
        let ctx_h = probs.matmul(&v);
        add_cols(&mut ctx, h * head_dim..(h + 1) * head_dim, &ctx_h);
        probs_all.push(probs);
    }

    let out = linear(&ctx, &p.w_o, &p.b_o);
    (out, AttnCache { qkv, extra_kv, probs: probs_all, ctx })
}

/// Backward pass; accumulates parameter gradients into `dp` and returns
/// the gradient w.r.t. `xq`. Gradients through `extra` are dropped (the
/// extra states are constants for the stage that uses them), but their
/// contribution to the K/V projection weights is kept.
#[allow(clippy::too_many_arguments)]
pub fn attention_bwd<F: Scalar>(
    dout: &Mat<F>,
    xq: &Mat<F>,
    extra: Option<&Mat<F>>,
    p: &AttnParams<F>,
    cache: &AttnCache<F>,
    heads: usize,
    dp: &mut AttnParams<F>,
) -> Mat<F> {
    let d = xq.cols;
    let head_dim = d / heads;
    let s = xq.rows;
    let e = extra.map_or(0, |m| m.rows);
    let scale = F::from_f64(1.0 / (head_dim as f64).sqrt());

    let dctx = linear_bwd(dout, &cache.ctx, &p.w_o, &mut dp.w_o, &mut dp.b_o);

    let mut dqkv = Mat::zeros(s, 3 * d);
    let mut dextra_kv = Mat::zeros(e, 3 * d);
    for h in 0..heads {
        let q = slice_cols(&cache.qkv, head_cols(0, d, head_dim, h));
        let k_self = slice_cols(&cache.qkv, head_cols(1, d, head_dim, h));
        let v_self = slice_cols(&cache.qkv, head_cols(2, d, head_dim, h));
        let (k, v) = if e > 0 {
            let k_extra = slice_cols(&cache.extra_kv, head_cols(1, d, head_dim, h));
            let v_extra = slice_cols(&cache.extra_kv, head_cols(2, d, head_dim, h));
            (vstack(&k_self, &k_extra), vstack(&v_self, &v_extra))
        } else {
            (k_self, v_self)
        };
        let probs = &cache.probs[h];
        let dctx_h = slice_cols(&dctx, h * head_dim..(h + 1) * head_dim);

        // dprobs = dctx_h v^T ; dv = probs^T dctx_h
        let dprobs = dctx_h.matmul_t(&v);
        let dv = probs.t_matmul(&dctx_h);

        // softmax backward per row
        let mut dscores = Mat::zeros(s, s + e);
        for i in 0..s {
            let prow = probs.row(i);
            let dprow = dprobs.row(i);
            let mut inner = F::ZERO;
            for j in 0..s + e {
                inner += prow[j] * dprow[j];
            }
            let dsrow = dscores.row_mut(i);
            for j in 0..s + e {
                dsrow[j] = prow[j] * (dprow[j] - inner) * scale;
            }
        }

        // dq = dscores k ; dk = dscores^T q
        let dq = dscores.matmul(&k);
        let dk = dscores.t_matmul(&q);

        add_cols(&mut dqkv, head_cols(0, d, head_dim, h), &dq);
        let (dk_self, dk_extra) = split_rows(&dk, s);
        let (dv_self, dv_extra) = split_rows(&dv, s);
        add_cols(&mut dqkv, head_cols(1, d, head_dim, h), &dk_self);
        add_cols(&mut dqkv, head_cols(2, d, head_dim, h), &dv_self);
        if e > 0 {
            add_cols(&mut dextra_kv, head_cols(1, d, head_dim, h), &dk_extra);
            add_cols(&mut dextra_kv, head_cols(2, d, head_dim, h), &dv_extra);
        }
    }

    let dxq = linear_bwd(&dqkv, xq, &p.w_qkv, &mut dp.w_qkv, &mut dp.b_qkv);
    if let Some(extra) = extra {
        // weight gradient from the extra key/value source; dx for the
        // extra states themselves is intentionally dropped
        let dw = extra.t_matmul(&dextra_kv);
        for (a, b) in dp.w_qkv.mat.data.iter_mut().zip(&dw.data) {
            *a += *b;
        }
        for i in 0..e {
            let row = dextra_kv.row(i);
            for j in 0..3 * d {
                dp.b_qkv.mat.data[j] += row[j];
            }
        }
    }
    dxq
}

/// Extract head `h` of block `block` (0=Q, 1=K, 2=V) from a fused
/// `rows x 3d` projection.
pub(crate) fn slice_head<F: Scalar>(
    qkv: &Mat<F>,
    block: usize,
    d: usize,
    head_dim: usize,
    h: usize,
) -> Mat<F> {
    slice_cols(qkv, head_cols(block, d, head_dim, h))
}

/// Accumulate a head output back into the concatenated context.
pub(crate) fn add_head<F: Scalar>(ctx: &mut Mat<F>, head_dim: usize, h: usize, src: &Mat<F>) {
    add_cols(ctx, h * head_dim..(h + 1) * head_dim, src);
}

fn split_rows<F: Scalar>(m: &Mat<F>, at: usize) -> (Mat<F>, Mat<F>) {
    let top = Mat::from_vec(at, m.cols, m.data[..at * m.cols].to_vec());
    let bottom = Mat::from_vec(m.rows - at, m.cols, m.data[at * m.cols..].to_vec());
    (top, bottom)
}
