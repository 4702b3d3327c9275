//! Mask-region next-token loss.
//!
//! Inside every region `[l, r]` the positions `l..r-1` each predict the
//! token at the following position; the first region token is input
//! only. The mean is taken over all `sum(r_u - l_u)` targets.

use crate::error::{Error, Result};
use crate::linalg::{log_softmax_at, softmax_in_place, Mat, Scalar};

use super::regions::MaskRegionSet;
use super::sequence::TokenSequence;

/// Mean negative log-likelihood over the region targets.
pub fn coglm_loss<F: Scalar>(
    logits: &Mat<F>,
    seq: &TokenSequence,
    regions: &MaskRegionSet,
) -> Result<F> {
    check_shapes(logits, seq, regions)?;
    let denom = regions.target_count();
    if denom == 0 {
        return Err(Error::InvalidArgument(
            "no loss targets: every mask region has length 1".into(),
        ));
    }
    let mut nll = F::ZERO;
    for (l, r) in regions.iter() {
        for i in l..r {
            // position i (1-based) predicts the token at i+1
            let target = seq.tokens[i] as usize; // tokens[i] is position i+1, 0-based
            nll -= log_softmax_at(logits.row(i - 1), target);
        }
    }
    Ok(nll / F::from_f64(denom as f64))
}

/// Loss together with its gradient w.r.t. the logits:
/// `(softmax(logits[i]) - onehot(target)) / denom` at predicting
/// positions, zero elsewhere.
pub fn coglm_loss_and_dlogits<F: Scalar>(
    logits: &Mat<F>,
    seq: &TokenSequence,
    regions: &MaskRegionSet,
) -> Result<(F, Mat<F>)> {
    check_shapes(logits, seq, regions)?;
    let denom = regions.target_count();
    if denom == 0 {
        return Err(Error::InvalidArgument(
            "no loss targets: every mask region has length 1".into(),
        ));
    }
    let inv = F::ONE / F::from_f64(denom as f64);
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut nll = F::ZERO;
    for (l, r) in regions.iter() {
        for i in l..r {
            let target = seq.tokens[i] as usize;
            let mut probs = logits.row(i - 1).to_vec();
            softmax_in_place(&mut probs);
            nll -= probs[target].ln();
            let grow = grad.row_mut(i - 1);
            for (g, p) in grow.iter_mut().zip(&probs) {
                *g = *p * inv;
            }
            grow[target] -= inv;
        }
    }
    Ok((nll * inv, grad))
}

fn check_shapes<F: Scalar>(
    logits: &Mat<F>,
    seq: &TokenSequence,
    regions: &MaskRegionSet,
) -> Result<()> {
    if logits.rows != seq.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} logit rows", seq.len()),
            got: format!("{}", logits.rows),
        });
    }
    if let Some((_, r)) = regions.iter().last() {
        if r > seq.len() {
            return Err(Error::InvalidArgument(format!(
                "region end {r} beyond sequence length {}",
                seq.len()
            )));
        }
    }
    Ok(())
}
