//! Minimal scalar abstraction and row-major matrix used by the model.
//!
//! Training and inference run in f32; gradient checking instantiates the
//! same code in f64, so everything numeric is generic over [`Scalar`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![F::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self * other, plain triple loop with k-major inner order.
    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for j in 0..other.cols {
                    out_row[j] += a * orow[j];
                }
            }
        }
        out
    }

    /// self^T * other.
    pub fn t_matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = arow[i];
                let out_row = out.row_mut(i);
                for j in 0..other.cols {
                    out_row[j] += a * brow[j];
                }
            }
        }
        out
    }

    /// self * other^T.
    pub fn matmul_t(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = F::ZERO;
                for k in 0..self.cols {
                    acc += arow[k] * brow[k];
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn map_to<T: Scalar>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::ZERO;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// In-place numerically stable softmax over a slice.
pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.maximum(v);
    }
    let mut sum = F::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// log(softmax(row)[idx]) without materializing the softmax.
pub fn log_softmax_at<F: Scalar>(row: &[F], idx: usize) -> F {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.maximum(v);
    }
    let mut sum = F::ZERO;
    for &v in row.iter() {
        sum += (v - m).exp();
    }
    row[idx] - m - sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_variants_agree() {
        let a = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(2, 3, vec![1.5, -2.0, 0.5, 2.0, 1.0, -1.0]);
        let atb = a.t_matmul(&b); // 3x3
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += a.at(k, i) * b.at(k, j);
                }
                assert!((atb.at(i, j) - acc).abs() < 1e-12);
            }
        }
        let abt = a.matmul_t(&b); // 2x2
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.at(i, k) * b.at(j, k);
                }
                assert!((abt.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut r = vec![0.5f64, -1.0, 2.0, 0.0];
        softmax_in_place(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ls = log_softmax_at(&[0.5, -1.0, 2.0, 0.0], 2);
        assert!((ls - r[2].ln()).abs() < 1e-12);
    }
}
