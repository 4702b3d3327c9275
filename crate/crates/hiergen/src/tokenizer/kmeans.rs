//! Deterministic Lloyd k-means.
//!
//! The algorithm is pinned precisely so that a run is reproducible from
//! its seed alone and an independent reimplementation can match it
//! assignment-for-assignment:
//!
//! 1. Deduplicate input points by exact value, keeping first-occurrence
//!    order; error if fewer than `k` distinct points exist.
//! 2. Choose `k` initial centroids from the distinct list by a seeded
//!    partial Fisher–Yates draw, in selection order.
//! 3. Iterate: assign every point to the nearest centroid (squared
//!    Euclidean distance accumulated in f64, index order; ties go to the
//!    lowest centroid id), then move each centroid to the mean of its
//!    members (empty clusters keep their previous position).
//! 4. Stop after `max_iters` iterations or when the relative centroid
//!    shift `sqrt(sum ||dc||^2) / (sqrt(sum ||c||^2) + 1e-12)` drops to
//!    `rel_tol` or below.
//! 5. Re-assign once against the final centroids before returning.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        KMeans { k, max_iters: 50, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOutput {
    /// `k * dim`, row-major.
    pub centroids: Vec<f64>,
    /// Nearest-centroid id per input point, consistent with `centroids`.
    pub assignments: Vec<u32>,
    /// Iterations actually run.
    pub iterations: usize,
    /// Total squared quantization error measured during each assignment
    /// phase; non-increasing by construction of Lloyd's method.
    pub error_curve: Vec<f64>,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, cent);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

impl KMeans {
    pub fn run(&self, points: &[f64], dim: usize, seed: u64) -> Result<KMeansOutput> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "point buffer of {} values is not a multiple of dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input point".into()));
        }

        // Distinct points, first occurrence order.
        let mut distinct: Vec<usize> = Vec::new();
        for i in 0..n {
            let pi = &points[i * dim..(i + 1) * dim];
            if !distinct.iter().any(|&j| points[j * dim..(j + 1) * dim] == *pi) {
                distinct.push(i);
            }
        }
        if distinct.len() < self.k {
            return Err(Error::Codebook(format!(
                "need at least k={} distinct points, found {}",
                self.k,
                distinct.len()
            )));
        }

        // Seeded partial Fisher–Yates over the distinct list.
        let mut rng = rng::seeded(seed);
        let mut pool = distinct;
        let mut centroids = Vec::with_capacity(self.k * dim);
        for step in 0..self.k {
            let pick = step + rng.gen_range(0..pool.len() - step);
            pool.swap(step, pick);
            let p = pool[step];
            centroids.extend_from_slice(&points[p * dim..(p + 1) * dim]);
        }

        let mut assignments = vec![0u32; n];
        let mut error_curve = Vec::new();
        let mut iterations = 0;
        for _ in 0..self.max_iters {
            iterations += 1;

            let mut err = 0.0;
            for i in 0..n {
                let (a, d) = nearest(&points[i * dim..(i + 1) * dim], &centroids, dim);
                assignments[i] = a;
                err += d;
            }
            error_curve.push(err);

            let mut sums = vec![0.0f64; self.k * dim];
            let mut counts = vec![0usize; self.k];
            for i in 0..n {
                let c = assignments[i] as usize;
                counts[c] += 1;
                for j in 0..dim {
                    sums[c * dim + j] += points[i * dim + j];
                }
            }

            let mut shift_sq = 0.0;
            let mut norm_sq = 0.0;
            for c in 0..self.k {
                norm_sq += sq_dist(&centroids[c * dim..(c + 1) * dim], &vec![0.0; dim]);
                if counts[c] == 0 {
                    continue;
                }
                for j in 0..dim {
                    let new = sums[c * dim + j] / counts[c] as f64;
                    let d = new - centroids[c * dim + j];
                    shift_sq += d * d;
                    centroids[c * dim + j] = new;
                }
            }
            if shift_sq.sqrt() / (norm_sq.sqrt() + 1e-12) <= self.rel_tol {
                break;
            }
        }

        // Final assignments must reflect the returned centroids.
        for i in 0..n {
            assignments[i] = nearest(&points[i * dim..(i + 1) * dim], &centroids, dim).0;
        }

        Ok(KMeansOutput { centroids, assignments, iterations, error_curve })
    }
}
