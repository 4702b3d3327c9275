//! Streaming windowed attention (plain and raster-causal).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat, Scalar};

use super::{window_range, WindowSpec};

fn check_grids<F: Scalar>(h: usize, w: usize, q: &Mat<F>, k: &Mat<F>, v: &Mat<F>) -> Result<()> {
    if q.rows != h * w || k.rows != h * w || v.rows != h * w {
        return Err(Error::ShapeMismatch {
            expected: format!("{} grid rows", h * w),
            got: format!("q {}, k {}, v {}", q.rows, k.rows, v.rows),
        });
    }
    if q.cols != k.cols || q.cols != v.cols {
        return Err(Error::ShapeMismatch {
            expected: format!("matching feature dim {}", q.cols),
            got: format!("k {}, v {}", k.cols, v.cols),
        });
    }
    Ok(())
}

/// One query cell: two-pass softmax over the window key set. `keys`
/// yields flat indices into `k`/`v`; `scratch` holds the scores.
#[inline]
fn attend_cell<F: Scalar>(
    qrow: &[F],
    k: &Mat<F>,
    v: &Mat<F>,
    keys: impl Iterator<Item = usize> + Clone,
    scale: F,
    scratch: &mut Vec<F>,
    out: &mut [F],
) {
    scratch.clear();
    let mut max = F::from_f64(f64::NEG_INFINITY);
    for j in keys.clone() {
        let s = dot(qrow, k.row(j)) * scale;
        if s > max {
            max = s;
        }
        scratch.push(s);
    }
    let mut denom = F::ZERO;
    for s in scratch.iter_mut() {
        *s = (*s - max).exp();
        denom += *s;
    }
    out.iter_mut().for_each(|o| *o = F::ZERO);
    for (idx, j) in keys.enumerate() {
        let wgt = scratch[idx] / denom;
        let vrow = v.row(j);
        for (o, &vv) in out.iter_mut().zip(vrow) {
            *o += wgt * vv;
        }
    }
}

fn run_local<F: Scalar>(
    h: usize,
    w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
    spec: &WindowSpec,
    causal: bool,
) -> Result<Mat<F>> {
    spec.validate()?;
    check_grids(h, w, q, k, v)?;
    let d = q.cols;
    let scale = F::from_f64(1.0 / (d as f64).sqrt());
    let mut out = Mat::zeros(h * w, d);
    out.data
        .par_chunks_mut(d)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(spec.kh * spec.kw),
            |scratch, (i, orow)| {
                let (r, c) = (i / w, i % w);
                let (r0, r1) = window_range(r, spec.kh, h);
                let (c0, c1) = window_range(c, spec.kw, w);
                let keys = (r0..=r1).flat_map(move |rr| {
                    (c0..=c1).map(move |cc| rr * w + cc)
                });
                if causal {
                    let keys = keys.filter(move |&j| j <= i);
                    attend_cell(q.row(i), k, v, keys, scale, scratch, orow);
                } else {
                    attend_cell(q.row(i), k, v, keys, scale, scratch, orow);
                }
            },
        );
    Ok(out)
}

/// Bidirectional 2D local attention: each cell attends the centered
/// `kh x kw` window clipped at the grid borders.
pub fn local_attention_2d<F: Scalar>(
    h: usize,
    w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
    spec: &WindowSpec,
) -> Result<Mat<F>> {
    if spec.causal || spec.cross.is_some() {
        return Err(Error::InvalidArgument(
            "plain 2D kernel called with a causal or cross spec".into(),
        ));
    }
    run_local(h, w, q, k, v, spec, false)
}

/// Auto-regressive 2D local attention: window keys restricted to raster
/// index <= the query's raster index.
pub fn local_attention_2d_causal<F: Scalar>(
    h: usize,
    w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
    spec: &WindowSpec,
) -> Result<Mat<F>> {
    if !spec.causal {
        return Err(Error::InvalidArgument("causal kernel needs spec.causal".into()));
    }
    if spec.cross.is_some() {
        return Err(Error::InvalidArgument("causal kernel does not take a cross spec".into()));
    }
    run_local(h, w, q, k, v, spec, true)
}
