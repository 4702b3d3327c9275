//! Token sampling: temperature plus top-k / top-p truncation, and
//! cluster sampling.
//!
//! Top-k and top-p truncate token by token, which mutilates distributions
//! where many near-duplicate tokens split what is really one outcome's
//! probability mass (incomplete truncation). Cluster sampling fixes this
//! by truncating whole k-means clusters of the codebook: cluster
//! probabilities are the sums over member tokens, a cluster is kept or
//! dropped as a unit, and the final token is drawn within the chosen
//! cluster with its relative probabilities intact.
//!
//! Temperature applies to each categorical draw (the cluster choice and
//! the within-cluster choice), so temperature zero degenerates to the
//! highest-probability token of the highest-mass cluster.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::Codebook;

/// Temperatures at or below this run the deterministic argmax path.
const GREEDY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationMode {
    TopK { k: usize },
    TopP { p: f64 },
    /// Top-k over clusters; `k` counts clusters.
    Cluster { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub mode: TruncationMode,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        match self.mode {
            TruncationMode::TopK { k } | TruncationMode::Cluster { k } => {
                if k == 0 {
                    return Err(Error::InvalidArgument("k must be at least 1".into()));
                }
            }
            TruncationMode::TopP { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidArgument(format!("p must be in (0, 1], got {p}")));
                }
            }
        }
        Ok(())
    }
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty distribution".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("negative or non-finite probability".into()));
    }
    let sum: f64 = probs.iter().sum();
    if sum == 0.0 {
        return Err(Error::InvalidArgument("all-zero probability vector".into()));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Keep mask of the `k` highest-probability entries (ties to lower index).
pub fn truncate_top_k(probs: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Keep mask of the smallest sorted prefix with cumulative mass >= p.
pub fn truncate_top_p(probs: &[f64], p: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    let mut acc = 0.0;
    for &i in &order {
        keep[i] = true;
        acc += probs[i];
        if acc >= p {
            break;
        }
    }
    keep
}

/// Keep mask over tokens induced by top-k truncation at cluster
/// granularity: whole clusters survive or vanish together.
pub fn cluster_keep_mask(probs: &[f64], cb: &Codebook, k: usize) -> Result<Vec<bool>> {
    if probs.len() != cb.vocab_size() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} token probabilities", cb.vocab_size()),
            got: format!("{}", probs.len()),
        });
    }
    let masses = cluster_masses(probs, cb);
    let keep_cluster = truncate_top_k(&masses, k);
    Ok((0..probs.len()).map(|t| keep_cluster[cb.cluster_of(t as u32) as usize]).collect())
}

fn cluster_masses(probs: &[f64], cb: &Codebook) -> Vec<f64> {
    let mut masses = vec![0.0; cb.n_clusters()];
    for (t, &p) in probs.iter().enumerate() {
        masses[cb.cluster_of(t as u32) as usize] += p;
    }
    masses
}

/// One temperatured categorical draw over the kept entries. Temperature
/// zero returns the argmax (ties to lower index).
fn draw(probs: &[f64], keep: &[bool], temperature: f64, rng: &mut rng::Rng) -> usize {
    if temperature <= GREEDY_EPS {
        let mut best = usize::MAX;
        let mut best_p = -1.0;
        for (i, (&p, &k)) in probs.iter().zip(keep).enumerate() {
            if k && p > best_p {
                best_p = p;
                best = i;
            }
        }
        return best;
    }
    let inv_t = 1.0 / temperature;
    let weights: Vec<f64> =
        probs.iter().zip(keep).map(|(&p, &k)| if k && p > 0.0 { p.powf(inv_t) } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        // kept entries all had zero probability; fall back to the first kept
        return keep.iter().position(|&k| k).expect("at least one kept entry");
    }
    let mut dart = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        last = i;
        if dart < w {
            return i;
        }
        dart -= w;
    }
    last
}

/// Softmax over a contiguous id slice of a logits row, in f64. Index `i`
/// of the result corresponds to id `range.start + i`; everything outside
/// the slice is treated as masked out entirely (the sampling-mask trick
/// for restricting generation to one vocabulary section).
pub fn restricted_probs<F: crate::linalg::Scalar>(
    row: &[F],
    range: std::ops::Range<usize>,
) -> Vec<f64> {
    let slice = &row[range];
    let max = slice.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
    let mut out: Vec<f64> = slice.iter().map(|&v| (v.to_f64() - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Dispatch one draw according to the configured truncation mode; the
/// codebook is needed only for cluster mode.
pub fn sample_token(
    probs: &[f64],
    cb: Option<&Codebook>,
    cfg: &SamplerConfig,
    rng: &mut rng::Rng,
) -> Result<u32> {
    match cfg.mode {
        TruncationMode::Cluster { .. } => {
            let cb = cb.ok_or_else(|| {
                Error::InvalidArgument("cluster sampling needs a codebook".into())
            })?;
            cluster_sample_with(probs, cb, cfg, rng)
        }
        _ => truncated_sample_with(probs, cfg, rng),
    }
}

/// Temperature + top-k / top-p sampling.
pub fn truncated_sample(probs: &[f64], cfg: &SamplerConfig) -> Result<u32> {
    cfg.validate()?;
    validate_probs(probs)?;
    let mut rng = rng::seeded(cfg.seed);
    truncated_sample_with(probs, cfg, &mut rng)
}

/// As [`truncated_sample`] but drawing from a caller-owned generator
/// (decoding loops thread one generator through many draws).
pub fn truncated_sample_with(
    probs: &[f64],
    cfg: &SamplerConfig,
    rng: &mut rng::Rng,
) -> Result<u32> {
    cfg.validate()?;
    validate_probs(probs)?;
    let keep = match cfg.mode {
        TruncationMode::TopK { k } => truncate_top_k(probs, k),
        TruncationMode::TopP { p } => truncate_top_p(probs, p),
        TruncationMode::Cluster { .. } => {
            return Err(Error::InvalidArgument(
                "cluster mode requires cluster_sample (needs a codebook)".into(),
            ))
        }
    };
    Ok(draw(probs, &keep, cfg.temperature, rng) as u32)
}

/// Cluster sampling: draw a cluster by temperatured top-k over cluster
/// masses, then a token within it. Single-member clusters skip the inner
/// draw, so with singleton clusters the draw sequence is identical to
/// plain top-k.
pub fn cluster_sample(probs: &[f64], cb: &Codebook, cfg: &SamplerConfig) -> Result<u32> {
    let mut rng = rng::seeded(cfg.seed);
    cluster_sample_with(probs, cb, cfg, &mut rng)
}

pub fn cluster_sample_with(
    probs: &[f64],
    cb: &Codebook,
    cfg: &SamplerConfig,
    rng: &mut rng::Rng,
) -> Result<u32> {
    cfg.validate()?;
    validate_probs(probs)?;
    let k = match cfg.mode {
        TruncationMode::Cluster { k } => k,
        _ => {
            return Err(Error::InvalidArgument("cluster_sample requires cluster mode".into()))
        }
    };
    if probs.len() != cb.vocab_size() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} token probabilities", cb.vocab_size()),
            got: format!("{}", probs.len()),
        });
    }

    let masses = cluster_masses(probs, cb);
    let keep_cluster = truncate_top_k(&masses, k);
    let cluster = draw(&masses, &keep_cluster, cfg.temperature, rng);

    let members: Vec<usize> =
        (0..probs.len()).filter(|&t| cb.cluster_of(t as u32) as usize == cluster).collect();
    if members.len() == 1 {
        return Ok(members[0] as u32);
    }
    // within-cluster draw, relative probabilities preserved
    let sub: Vec<f64> = members.iter().map(|&t| probs[t]).collect();
    let keep_all = vec![true; sub.len()];
    let picked = draw(&sub, &keep_all, cfg.temperature, rng);
    Ok(members[picked] as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codebook_with_clusters(cluster_of: Vec<u32>, n_clusters: usize) -> Codebook {
        let k = cluster_of.len();
        // centroid contents are irrelevant for sampling; make them distinct
        let centroids: Vec<f32> = (0..k * 3).map(|i| i as f32 / (k * 3) as f32).collect();
        Codebook::from_parts(1, centroids, cluster_of, n_clusters).unwrap()
    }

    #[test]
    fn top_k_keeps_highest_and_renormalizes() {
        let probs = [0.5, 0.3, 0.2];
        let keep = truncate_top_k(&probs, 2);
        assert_eq!(keep, vec![true, true, false]);
        // renormalized kept masses are 0.625 / 0.375: check empirically
        let cfg = SamplerConfig { temperature: 1.0, mode: TruncationMode::TopK { k: 2 }, seed: 0 };
        let mut counts = [0usize; 3];
        let mut rng = crate::rng::seeded(9);
        for _ in 0..20_000 {
            let cfg = SamplerConfig { seed: rng.gen(), ..cfg };
            counts[truncated_sample(&probs, &cfg).unwrap() as usize] += 1;
        }
        assert_eq!(counts[2], 0);
        let f0 = counts[0] as f64 / 20_000.0;
        assert!((f0 - 0.625).abs() < 0.02, "top-0 frequency {f0}");
    }

    #[test]
    fn k_equal_vocab_and_p_one_keep_everything() {
        let probs = [0.25, 0.25, 0.25, 0.25];
        assert!(truncate_top_k(&probs, 4).iter().all(|&b| b));
        assert!(truncate_top_p(&probs, 1.0).iter().all(|&b| b));
    }

    #[test]
    fn top_p_takes_smallest_sufficient_prefix() {
        let probs = [0.5, 0.3, 0.2];
        assert_eq!(truncate_top_p(&probs, 0.5), vec![true, false, false]);
        assert_eq!(truncate_top_p(&probs, 0.75), vec![true, true, false]);
        assert_eq!(truncate_top_p(&probs, 0.81), vec![true, true, true]);
    }

    #[test]
    fn all_zero_probs_error() {
        let cfg = SamplerConfig { temperature: 1.0, mode: TruncationMode::TopK { k: 1 }, seed: 0 };
        assert!(truncated_sample(&[0.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn incomplete_truncation_repair_example() {
        // clusters A={t1,t2,t3}, B={t4}, C={t5,t6}
        // plain top-1 keeps only t4; cluster top-1 keeps all of A
        let probs = [0.2, 0.2, 0.2, 0.25, 0.1, 0.05];
        let plain = truncate_top_k(&probs, 1);
        assert_eq!(plain, vec![false, false, false, true, false, false]);

        let cb = codebook_with_clusters(vec![0, 0, 0, 1, 2, 2], 3);
        let keep = cluster_keep_mask(&probs, &cb, 1).unwrap();
        assert_eq!(keep, vec![true, true, true, false, false, false]);
    }

    #[test]
    fn kept_set_is_union_of_whole_clusters() {
        let mut rng = crate::rng::seeded(5);
        for _ in 0..200 {
            let n = 12;
            let clusters: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let cb = codebook_with_clusters(clusters.clone(), 4);
            let mut probs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let sum: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= sum);
            let k = rng.gen_range(1..=4);
            let keep = cluster_keep_mask(&probs, &cb, k).unwrap();
            for c in 0..4u32 {
                let members: Vec<usize> =
                    (0..n).filter(|&t| clusters[t] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let states: Vec<bool> = members.iter().map(|&t| keep[t]).collect();
                assert!(
                    states.iter().all(|&s| s == states[0]),
                    "cluster {c} split: {states:?}"
                );
            }
        }
    }

    #[test]
    fn temperature_zero_is_argmax_of_top_cluster() {
        let probs = [0.2, 0.21, 0.19, 0.25, 0.1, 0.05];
        let cb = codebook_with_clusters(vec![0, 0, 0, 1, 2, 2], 3);
        let cfg =
            SamplerConfig { temperature: 0.0, mode: TruncationMode::Cluster { k: 3 }, seed: 1 };
        // cluster masses: A=0.6, B=0.25, C=0.15 -> A wins; argmax in A is t2
        assert_eq!(cluster_sample(&probs, &cb, &cfg).unwrap(), 1);
    }

    #[test]
    fn singleton_clusters_reduce_to_plain_top_k() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let cb = codebook_with_clusters(vec![0, 1, 2, 3], 4);
        for seed in 0..50 {
            let cl = SamplerConfig {
                temperature: 1.0,
                mode: TruncationMode::Cluster { k: 2 },
                seed,
            };
            let tk =
                SamplerConfig { temperature: 1.0, mode: TruncationMode::TopK { k: 2 }, seed };
            assert_eq!(
                cluster_sample(&probs, &cb, &cl).unwrap(),
                truncated_sample(&probs, &tk).unwrap()
            );
        }
    }

    #[test]
    fn within_cluster_ratios_are_preserved() {
        // empirical conditional distribution inside the kept cluster
        // matches the raw ratios
        let probs = [0.3, 0.15, 0.05, 0.5];
        let cb = codebook_with_clusters(vec![0, 0, 0, 1], 2);
        let mut counts = [0usize; 4];
        let mut rng = crate::rng::seeded(3);
        for _ in 0..30_000 {
            let cfg = SamplerConfig {
                temperature: 1.0,
                mode: TruncationMode::Cluster { k: 1 },
                seed: rng.gen(),
            };
            counts[cluster_sample(&probs, &cb, &cfg).unwrap() as usize] += 1;
        }
        // cluster 1 (mass 0.5) is the single kept cluster
        assert_eq!(counts[0] + counts[1] + counts[2], 0);
        assert_eq!(counts[3], 30_000);

        let mut counts = [0usize; 4];
        let mut rng = crate::rng::seeded(4);
        for _ in 0..30_000 {
            let cfg = SamplerConfig {
                temperature: 1.0,
                mode: TruncationMode::Cluster { k: 2 },
                seed: rng.gen(),
            };
            counts[cluster_sample(&probs, &cb, &cfg).unwrap() as usize] += 1;
        }
        // within cluster 0 the 0.3 : 0.15 ratio must hold (2 : 1)
        let ratio = counts[0] as f64 / counts[1] as f64;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }
}
