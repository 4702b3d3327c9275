//! Dense masked attention: the O((HW)^2) baseline the windowed kernels
//! are benchmarked and checked against. Materializes the full score
//! matrix, adds -1e9 to blocked pairs, softmaxes, and multiplies.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_in_place, Mat, Scalar};

use super::{window_range, WindowSpec};

/// Pair-level mask for the dense path.
#[derive(Debug, Clone, Copy)]
pub enum DensePairMask<'a> {
    /// Full bidirectional attention.
    None,
    /// The band (and raster-causal, if set) mask equivalent to a
    /// windowed kernel.
    Window(&'a WindowSpec),
}

impl DensePairMask<'_> {
    #[inline]
    fn blocked(&self, h: usize, w: usize, i: usize, j: usize) -> bool {
        match self {
            DensePairMask::None => false,
            DensePairMask::Window(spec) => {
                let (r, c) = (i / w, i % w);
                let (rr, cc) = (j / w, j % w);
                let (r0, r1) = window_range(r, spec.kh, h);
                let (c0, c1) = window_range(c, spec.kw, w);
                let outside = rr < r0 || rr > r1 || cc < c0 || cc > c1;
                outside || (spec.causal && j > i)
            }
        }
    }
}

pub fn dense_attention_2d_masked<F: Scalar>(
    h: usize,
    w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
    mask: DensePairMask,
) -> Result<Mat<F>> {
    let s = h * w;
    if q.rows != s || k.rows != s || v.rows != s || q.cols != k.cols || q.cols != v.cols {
        return Err(Error::ShapeMismatch {
            expected: format!("{s} rows, equal dims"),
            got: format!("q {}x{}, k {}x{}, v {}x{}", q.rows, q.cols, k.rows, k.cols, v.rows, v.cols),
        });
    }
    let d = q.cols;
    let scale = F::from_f64(1.0 / (d as f64).sqrt());
    let neg = F::from_f64(-1e9);

    let mut scores = Mat::zeros(s, s);
    scores.data.par_chunks_mut(s).enumerate().for_each(|(i, row)| {
        let qrow = q.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let mut sc = dot(qrow, k.row(j)) * scale;
            if mask.blocked(h, w, i, j) {
                sc += neg;
            }
            *slot = sc;
        }
        softmax_in_place(row);
    });

    let mut out = Mat::zeros(s, d);
    out.data.par_chunks_mut(d).enumerate().for_each(|(i, orow)| {
        let prow = scores.row(i);
        for j in 0..s {
            let wgt = prow[j];
            if wgt == F::ZERO {
                continue;
            }
            for (o, &vv) in orow.iter_mut().zip(v.row(j)) {
                *o += wgt * vv;
            }
        }
    });
    Ok(out)
}

/// Unmasked dense attention.
pub fn dense_attention_2d<F: Scalar>(
    h: usize,
    w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
) -> Result<Mat<F>> {
    dense_attention_2d_masked(h, w, q, k, v, DensePairMask::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn masked_dense_matches_windowed_kernel() {
        let (h, w, d) = (6, 5, 8);
        let mut r = crate::rng::seeded(12);
        let mut mk = |seed: u64| {
            let _ = seed;
            let mut m = Mat::<f32>::zeros(h * w, d);
            m.data.iter_mut().for_each(|v| *v = r.gen::<f32>() - 0.5);
            m
        };
        let q = mk(0);
        let k = mk(1);
        let v = mk(2);
        let spec = WindowSpec::square(3);
        let dense =
            dense_attention_2d_masked(h, w, &q, &k, &v, DensePairMask::Window(&spec)).unwrap();
        let local = super::super::local_attention_2d(h, w, &q, &k, &v, &spec).unwrap();
        for i in 0..h * w {
            for c in 0..d {
                assert!((dense.at(i, c) - local.at(i, c)).abs() < 1e-5);
            }
        }
    }
}
