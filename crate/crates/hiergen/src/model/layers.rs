//! Forward/backward primitives: layer normalization, GELU, linear.

use crate::linalg::{Mat, Scalar};

use super::params::{LnParams, Tensor};

pub struct LnCache<F> {
    /// Normalized input before gain/bias.
    pub xhat: Mat<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm<F: Scalar>(x: &Mat<F>, p: &LnParams<F>, eps: f64) -> (Mat<F>, LnCache<F>) {
    let (s, d) = (x.rows, x.cols);
    let mut y = Mat::zeros(s, d);
    let mut xhat = Mat::zeros(s, d);
    let mut rstd = vec![F::ZERO; s];
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(eps);
    for i in 0..s {
        let row = x.row(i);
        let mut mean = F::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = F::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let r = F::ONE / (var + eps).sqrt();
        rstd[i] = r;
        let xh = xhat.row_mut(i);
        let yr = y.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
            yr[j] = xh[j] * p.gain.mat.data[j] + p.bias.mat.data[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates parameter gradients into `dgain`/`dbias`.
pub fn layer_norm_bwd<F: Scalar>(
    dy: &Mat<F>,
    cache: &LnCache<F>,
    p: &LnParams<F>,
    dgain: &mut Tensor<F>,
    dbias: &mut Tensor<F>,
) -> Mat<F> {
    let (s, d) = (dy.rows, dy.cols);
    let mut dx = Mat::zeros(s, d);
    let inv_d = F::from_f64(1.0 / d as f64);
    for i in 0..s {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgain.mat.data[j] += dyr[j] * xh[j];
            dbias.mat.data[j] += dyr[j];
        }
        // dl/dxhat = dy * gain; then standard LN input gradient
        let mut sum_dxhat = F::ZERO;
        let mut sum_dxhat_xhat = F::ZERO;
        for j in 0..d {
            let dxh = dyr[j] * p.gain.mat.data[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * p.gain.mat.data[j];
            dxr[j] = (dxh - sum_dxhat * inv_d - xh[j] * sum_dxhat_xhat * inv_d) * cache.rstd[i];
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<F: Scalar>(x: &Mat<F>) -> Mat<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        let u = *v;
        let t = (c * (u + a * u * u * u)).tanh();
        *v = half * u * (F::ONE + t);
    }
    y
}

pub fn gelu_bwd<F: Scalar>(dy: &Mat<F>, x: &Mat<F>) -> Mat<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let mut dx = dy.clone();
    for (g, &u) in dx.data.iter_mut().zip(&x.data) {
        let inner = c * (u + a * u * u * u);
        let t = inner.tanh();
        let dinner = c * (F::ONE + three * a * u * u);
        let d = half * (F::ONE + t) + half * u * (F::ONE - t * t) * dinner;
        *g *= d;
    }
    dx
}

/// y = x W + b, with `W: in x out`, `b: 1 x out`.
pub fn linear<F: Scalar>(x: &Mat<F>, w: &Tensor<F>, b: &Tensor<F>) -> Mat<F> {
    let mut y = x.matmul(&w.mat);
    for i in 0..y.rows {
        let row = y.row_mut(i);
        for j in 0..row.len() {
            row[j] += b.mat.data[j];
        }
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)`; returns `dx = dy W^T`.
pub fn linear_bwd<F: Scalar>(
    dy: &Mat<F>,
    x: &Mat<F>,
    w: &Tensor<F>,
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Mat<F> {
    let dwm = x.t_matmul(dy);
    for (a, b) in dw.mat.data.iter_mut().zip(&dwm.data) {
        *a += *b;
    }
    for i in 0..dy.rows {
        let row = dy.row(i);
        for j in 0..row.len() {
            db.mat.data[j] += row[j];
        }
    }
    dy.matmul_t(&w.mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::LnParams;
    use rand::Rng as _;

    fn randn_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut r = crate::rng::seeded(seed);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data.iter_mut() {
            *v = r.gen::<f64>() * 2.0 - 1.0;
        }
        m
    }

    #[test]
    fn layer_norm_rows_are_normalized() {
        let x = randn_mat(4, 16, 1);
        let mut p = LnParams::<f64> {
            gain: Tensor { mat: Mat::zeros(1, 16), frozen: false },
            bias: Tensor { mat: Mat::zeros(1, 16), frozen: false },
        };
        p.gain.mat.data.iter_mut().for_each(|v| *v = 1.0);
        let (y, _) = layer_norm(&x, &p, 1e-5);
        for i in 0..4 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 16.0;
            let var: f64 = y.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let x = randn_mat(3, 8, 2);
        let mut p = LnParams::<f64> {
            gain: Tensor { mat: Mat::zeros(1, 8), frozen: false },
            bias: Tensor { mat: Mat::zeros(1, 8), frozen: false },
        };
        let mut r = crate::rng::seeded(3);
        p.gain.mat.data.iter_mut().for_each(|v| *v = 0.5 + r.gen::<f64>());
        p.bias.mat.data.iter_mut().for_each(|v| *v = r.gen::<f64>() - 0.5);
        // scalar objective: weighted sum of outputs
        let wsum = randn_mat(3, 8, 4);
        let loss = |x: &Mat<f64>| -> f64 {
            let (y, _) = layer_norm(x, &p, 1e-5);
            y.data.iter().zip(&wsum.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, &p, 1e-5);
        let mut dg = Tensor { mat: Mat::<f64>::zeros(1, 8), frozen: false };
        let mut db = Tensor { mat: Mat::<f64>::zeros(1, 8), frozen: false };
        let dx = layer_norm_bwd(&wsum, &cache, &p, &mut dg, &mut db);
        let eps = 1e-6;
        for idx in [0, 5, 11, 17, 23] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - dx.data[idx]).abs() < 1e-6, "idx {idx}: {fd} vs {}", dx.data[idx]);
        }
    }

    #[test]
    fn gelu_backward_matches_finite_difference() {
        let x = randn_mat(2, 6, 5);
        let dy = randn_mat(2, 6, 6);
        let dx = gelu_bwd(&dy, &x);
        let eps = 1e-6;
        for idx in 0..12 {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let f = |m: &Mat<f64>| -> f64 {
                gelu(m).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((fd - dx.data[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_backward_matches_finite_difference() {
        let x = randn_mat(3, 4, 7);
        let w = Tensor { mat: randn_mat(4, 5, 8), frozen: false };
        let b = Tensor { mat: randn_mat(1, 5, 9), frozen: false };
        let dy = randn_mat(3, 5, 10);
        let mut dw = Tensor { mat: Mat::<f64>::zeros(4, 5), frozen: false };
        let mut db = Tensor { mat: Mat::<f64>::zeros(1, 5), frozen: false };
        let dx = linear_bwd(&dy, &x, &w, &mut dw, &mut db);
        let eps = 1e-6;
        let f = |w: &Tensor<f64>, b: &Tensor<f64>, x: &Mat<f64>| -> f64 {
            linear(x, w, b).data.iter().zip(&dy.data).map(|(a, c)| a * c).sum()
        };
        for idx in [0, 7, 13, 19] {
            let mut wp = w.clone();
            wp.mat.data[idx] += eps;
            let mut wm = w.clone();
            wm.mat.data[idx] -= eps;
            let fd = (f(&wp, &b, &x) - f(&wm, &b, &x)) / (2.0 * eps);
            assert!((fd - dw.mat.data[idx]).abs() < 1e-6);
        }
        for idx in [2, 11] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (f(&w, &b, &xp) - f(&w, &b, &xm)) / (2.0 * eps);
            assert!((fd - dx.data[idx]).abs() < 1e-6);
        }
        for idx in [0, 4] {
            let mut bp = b.clone();
            bp.mat.data[idx] += eps;
            let mut bm = b.clone();
            bm.mat.data[idx] -= eps;
            let fd = (f(&w, &bp, &x) - f(&w, &bm, &x)) / (2.0 * eps);
            assert!((fd - db.mat.data[idx]).abs() < 1e-6);
        }
    }
}
