//! Cluster sampling at larger scales: the production cluster count and
//! the near-duplicate-token scenario that motivates truncating whole
//! clusters instead of single tokens.

use hiergen::sampling::{cluster_keep_mask, truncate_top_k};
use hiergen::Codebook;
use rand::Rng as _;

#[test]
fn production_scale_codebook_clusters_into_500() {
    let mut r = hiergen::rng::seeded(1);
    let centroids: Vec<f32> = (0..20_000 * 3).map(|_| r.gen()).collect();
    let cb = Codebook::from_parts(1, centroids, vec![0; 20_000], 1).unwrap();
    let clustered = cb.cluster(500, 0).unwrap();
    assert_eq!(clustered.n_clusters(), 500);
    let mut counts = vec![0usize; 500];
    for t in 0..20_000u32 {
        counts[clustered.cluster_of(t) as usize] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), 20_000);
}

#[test]
fn near_duplicate_tokens_cluster_together_and_survive_truncation() {
    // 42 nearly identical "white" entries among a spread-out codebook:
    // clustering groups them, so their summed mass survives a cluster
    // truncation that plain token top-k would shred.
    let n = 512usize;
    let n_white = 42usize;
    let mut r = hiergen::rng::seeded(9);
    let mut centroids = Vec::with_capacity(n * 3);
    for i in 0..n {
        if i < n_white {
            for _ in 0..3 {
                centroids.push(0.98 + r.gen::<f32>() * 0.02);
            }
        } else {
            for _ in 0..3 {
                centroids.push(r.gen::<f32>() * 0.85);
            }
        }
    }
    let cb = Codebook::from_parts(1, centroids, vec![0; n], 1).unwrap().cluster(16, 3).unwrap();

    // all whites in one cluster
    let white_cluster = cb.cluster_of(0);
    for t in 0..n_white as u32 {
        assert_eq!(cb.cluster_of(t), white_cluster, "white token {t} strayed");
    }

    // whites carry 60% of the mass in aggregate but only ~1.4% each; a
    // plain top-5 keeps none of them
    let white_p = 0.6 / n_white as f64;
    let other_p = 0.4 / (n - n_white) as f64 * 0.2;
    let mut probs = vec![0.0f64; n];
    for (t, p) in probs.iter_mut().enumerate() {
        *p = if t < n_white { white_p } else { other_p };
    }
    // bump a handful of non-white tokens above any single white token
    for t in n_white..n_white + 5 {
        probs[t] = white_p * 1.5;
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);

    let plain = truncate_top_k(&probs, 5);
    assert!(plain[..n_white].iter().all(|&k| !k), "plain top-5 should drop every white token");

    let keep = cluster_keep_mask(&probs, &cb, 1).unwrap();
    assert!(keep[..n_white].iter().all(|&k| k), "cluster top-1 must keep the whole white cluster");
}
