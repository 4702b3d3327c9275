//! Finite-difference verification of the analytic gradients.

use rand::Rng as _;

use crate::coglm::{
    build_attention_mask, coglm_loss, coglm_loss_and_dlogits, MaskRegionSet, TokenSequence,
};
use crate::error::{Error, Result};
use crate::linalg::Scalar as _;
use crate::rng;

use super::forward::{backward_dense, build_score_bias, forward_dense, DenseArgs, EmbedSpec, UpweightConfig};
use super::params::ModelParams;

/// `(f(x+eps) - f(x-eps)) / 2 eps`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-8);
    (a - n).abs() / denom
}

/// Compare analytic gradients of the mask-region loss against central
/// differences on at least `min_coords` coordinates spread over every
/// unfrozen tensor. Frozen tensors are asserted to have exactly-zero
/// analytic gradients and are excluded from the sampling.
pub fn grad_check(
    params: &ModelParams<f64>,
    seq: &TokenSequence,
    regions: &MaskRegionSet,
    eps: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let spec = EmbedSpec::from_sequence(seq);
    let mask = build_attention_mask(seq.len(), regions);
    let bias = build_score_bias::<f64>(&mask, &seq.roles, UpweightConfig::none());

    // analytic
    let trace = forward_dense(&spec, params, &DenseArgs::plain(&bias))?;
    let (_, dlogits) = coglm_loss_and_dlogits(&trace.logits, seq, regions)?;
    let mut grads = params.zeros_like();
    backward_dense(&spec, params, &DenseArgs::plain(&bias), &trace, &dlogits, &mut grads, None);
    grads.apply_freeze_mask(params);

    for ((name, gt), (_, pt)) in grads.tensors().iter().zip(params.tensors().iter()) {
        if pt.frozen && gt.mat.data.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frozen tensor {name} has a nonzero analytic gradient"
            )));
        }
    }

    // choose coordinates: one per unfrozen tensor, then fill at random
    let flags: Vec<(String, bool, usize)> =
        params.tensors().iter().map(|(n, t)| (n.clone(), t.frozen, t.len())).collect();
    let mut r = rng::seeded(seed);
    let mut coords: Vec<(usize, usize)> = Vec::new(); // (tensor idx, flat idx)
    for (ti, (_, frozen, len)) in flags.iter().enumerate() {
        if !*frozen && *len > 0 {
            coords.push((ti, r.gen_range(0..*len)));
        }
    }
    let unfrozen: Vec<usize> = flags
        .iter()
        .enumerate()
        .filter(|(_, (_, f, l))| !*f && *l > 0)
        .map(|(i, _)| i)
        .collect();
    while coords.len() < min_coords {
        let ti = unfrozen[r.gen_range(0..unfrozen.len())];
        coords.push((ti, r.gen_range(0..flags[ti].2)));
    }

    // numeric: perturb in place and re-evaluate the loss
    let mut p = params.clone();
    let eval = |p: &ModelParams<f64>| -> Result<f64> {
        let trace = forward_dense(&spec, p, &DenseArgs::plain(&bias))?;
        coglm_loss(&trace.logits, seq, regions).map(|l| l.to_f64())
    };

    let analytic: Vec<Vec<f64>> =
        grads.tensors().iter().map(|(_, t)| t.mat.data.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (ti, idx) in coords {
        let orig = read_coord(&p, ti, idx);
        write_coord(&mut p, ti, idx, orig + eps);
        let up = eval(&p)?;
        write_coord(&mut p, ti, idx, orig - eps);
        let down = eval(&p)?;
        write_coord(&mut p, ti, idx, orig);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[ti][idx];
        let e = rel_err(a, numeric);
        report.coords_checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_tensor = flags[ti].0.clone();
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn read_coord(p: &ModelParams<f64>, tensor: usize, idx: usize) -> f64 {
    p.tensors()[tensor].1.mat.data[idx]
}

fn write_coord(p: &mut ModelParams<f64>, tensor: usize, idx: usize, v: f64) {
    let mut i = 0;
    p.visit_tensors_mut(|_, t| {
        if i == tensor {
            t.mat.data[idx] = v;
        }
        i += 1;
    });
}
