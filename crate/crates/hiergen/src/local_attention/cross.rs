//! Cross-resolution local attention: decoder cells attend their local
//! decoder window plus the encoder window under their position, with one
//! softmax normalizing jointly over both key sets.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat, Scalar};

use super::{window_range, WindowSpec};

/// `q`,`k`,`v` are decoder grids (`dec_h * dec_w` rows); `enc_k`,`enc_v`
/// are encoder grids per `spec.cross`. Decoder cell `(r, c)` attends its
/// `kh x kw` decoder window and the `ceil(kh/scale) x ceil(kw/scale)`
/// encoder window centered at `(r/scale, c/scale)`.
#[allow(clippy::too_many_arguments)]
pub fn cross_resolution_local_attention<F: Scalar>(
    dec_h: usize,
    dec_w: usize,
    q: &Mat<F>,
    k: &Mat<F>,
    v: &Mat<F>,
    enc_k: &Mat<F>,
    enc_v: &Mat<F>,
    spec: &WindowSpec,
) -> Result<Mat<F>> {
    spec.validate()?;
    let cross = spec.cross.ok_or_else(|| {
        Error::InvalidArgument("cross-resolution kernel needs spec.cross".into())
    })?;
    let (enc_h, enc_w, scale) = (cross.enc_h, cross.enc_w, cross.scale);
    if scale == 0 || dec_h != enc_h * scale || dec_w != enc_w * scale {
        return Err(Error::InvalidArgument(format!(
            "decoder {dec_h}x{dec_w} is not an integer scale of encoder {enc_h}x{enc_w}"
        )));
    }
    let s = dec_h * dec_w;
    if q.rows != s || k.rows != s || v.rows != s {
        return Err(Error::ShapeMismatch {
            expected: format!("{s} decoder rows"),
            got: format!("q {}, k {}, v {}", q.rows, k.rows, v.rows),
        });
    }
    if enc_k.rows != enc_h * enc_w || enc_v.rows != enc_h * enc_w || enc_k.cols != q.cols {
        return Err(Error::ShapeMismatch {
            expected: format!("{} encoder rows of dim {}", enc_h * enc_w, q.cols),
            got: format!("k {}x{}, v {}x{}", enc_k.rows, enc_k.cols, enc_v.rows, enc_v.cols),
        });
    }

    let d = q.cols;
    let fscale = F::from_f64(1.0 / (d as f64).sqrt());
    let (ekh, ekw) = spec.encoder_extent(scale);
    let mut out = Mat::zeros(s, d);
    out.data
        .par_chunks_mut(d)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(spec.kh * spec.kw + ekh * ekw),
            |scratch: &mut Vec<F>, (i, orow)| {
                let (r, c) = (i / dec_w, i % dec_w);
                let (r0, r1) = window_range(r, spec.kh, dec_h);
                let (c0, c1) = window_range(c, spec.kw, dec_w);
                let (er0, er1) = window_range(r / scale, ekh, enc_h);
                let (ec0, ec1) = window_range(c / scale, ekw, enc_w);

                let qrow = q.row(i);
                scratch.clear();
                let mut max = F::from_f64(f64::NEG_INFINITY);
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        let sc = dot(qrow, k.row(rr * dec_w + cc)) * fscale;
                        if sc > max {
                            max = sc;
                        }
                        scratch.push(sc);
                    }
                }
                for rr in er0..=er1 {
                    for cc in ec0..=ec1 {
                        let sc = dot(qrow, enc_k.row(rr * enc_w + cc)) * fscale;
                        if sc > max {
                            max = sc;
                        }
                        scratch.push(sc);
                    }
                }
                let mut denom = F::ZERO;
                for sc in scratch.iter_mut() {
                    *sc = (*sc - max).exp();
                    denom += *sc;
                }
                orow.iter_mut().for_each(|o| *o = F::ZERO);
                let mut idx = 0;
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        let wgt = scratch[idx] / denom;
                        idx += 1;
                        for (o, &vv) in orow.iter_mut().zip(v.row(rr * dec_w + cc)) {
                            *o += wgt * vv;
                        }
                    }
                }
                for rr in er0..=er1 {
                    for cc in ec0..=ec1 {
                        let wgt = scratch[idx] / denom;
                        idx += 1;
                        for (o, &vv) in orow.iter_mut().zip(enc_v.row(rr * enc_w + cc)) {
                            *o += wgt * vv;
                        }
                    }
                }
            },
        );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_attention::CrossSpec;
    use rand::Rng as _;

    fn randn(rows: usize, cols: usize, seed: u64) -> Mat<f32> {
        let mut r = crate::rng::seeded(seed);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data.iter_mut() {
            *v = r.gen::<f32>() - 0.5;
        }
        m
    }

    fn spec(enc_h: usize, enc_w: usize, scale: usize, k: usize) -> WindowSpec {
        WindowSpec {
            kh: k,
            kw: k,
            causal: false,
            cross: Some(CrossSpec { enc_h, enc_w, scale }),
        }
    }

    #[test]
    fn paper_geometry_runs() {
        // 60x60 decoder over a 20x20 encoder at scale 3
        let d = 8;
        let q = randn(3600, d, 1);
        let k = randn(3600, d, 2);
        let v = randn(3600, d, 3);
        let ek = randn(400, d, 4);
        let ev = randn(400, d, 5);
        let out =
            cross_resolution_local_attention(60, 60, &q, &k, &v, &ek, &ev, &spec(20, 20, 3, 9))
                .unwrap();
        assert_eq!(out.rows, 3600);
        assert!(out.all_finite());
    }

    #[test]
    fn equal_keys_give_uniform_average() {
        // all keys identical -> uniform softmax -> output is the average of
        // the visible decoder and encoder values
        let d = 4;
        let (dh, dw, eh, ew, scale) = (4, 4, 2, 2, 2);
        let q = randn(dh * dw, d, 6);
        let mut k = Mat::zeros(dh * dw, d);
        k.data.iter_mut().for_each(|v| *v = 0.3);
        let mut ek = Mat::zeros(eh * ew, d);
        ek.data.iter_mut().for_each(|v| *v = 0.3);
        let v = randn(dh * dw, d, 7);
        let ev = randn(eh * ew, d, 8);
        let sp = spec(eh, ew, scale, 3);
        let out =
            cross_resolution_local_attention(dh, dw, &q, &k, &v, &ek, &ev, &sp).unwrap();

        // decoder cell (1,1): 3x3 decoder window fully inside; encoder
        // extent ceil(3/2)=2 centered at (0,0) clipped -> rows 0..=1, cols 0..=1
        let mut vals = Vec::new();
        for rr in 0..=2usize {
            for cc in 0..=2usize {
                vals.push(v.row(rr * dw + cc));
            }
        }
        for rr in 0..=1usize {
            for cc in 0..=1usize {
                vals.push(ev.row(rr * ew + cc));
            }
        }
        let i = dw + 1;
        for c in 0..d {
            let want: f32 = vals.iter().map(|r| r[c]).sum::<f32>() / vals.len() as f32;
            assert!((out.at(i, c) - want).abs() < 1e-5, "col {c}: {} vs {want}", out.at(i, c));
        }
    }

    #[test]
    fn non_integer_scale_errors() {
        let d = 4;
        let q = randn(30, d, 1);
        let k = randn(30, d, 2);
        let v = randn(30, d, 3);
        let ek = randn(4, d, 4);
        let ev = randn(4, d, 5);
        // decoder 5x6 over encoder 2x2 is not an integer scale
        assert!(cross_resolution_local_attention(5, 6, &q, &k, &v, &ek, &ev, &spec(2, 2, 3, 3))
            .is_err());
    }
}
