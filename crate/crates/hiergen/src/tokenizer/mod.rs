//! Image patch codebook: a k-means stand-in for a learned discrete
//! image tokenizer.
//!
//! Images are cut into `P x P` patches; each patch maps to the nearest of
//! `K` centroid vectors. The codebook also carries a k-means partition of
//! its own centroids into clusters, which cluster sampling treats as
//! atomic truncation units.

pub mod kmeans;
mod serial;
pub mod vocab;

use crate::error::{Error, Result};
use crate::image_io::Pixmap;
use kmeans::KMeans;

pub use serial::{read_codebook, write_codebook};

/// Token id -> centroid map plus the cluster partition used by cluster
/// sampling. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    patch_size: usize,
    /// `K * dim` centroid values in [0,1], `dim = patch_size^2 * 3`.
    centroids: Vec<f32>,
    /// Cluster id per token, `K` entries, values in `[0, n_clusters)`.
    cluster_of: Vec<u32>,
    n_clusters: usize,
}

/// A grid of image token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u32>,
}

impl TokenGrid {
    pub fn filled(height: usize, width: usize, id: u32) -> Self {
        TokenGrid { height, width, ids: vec![id; height * width] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.ids[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, id: u32) {
        self.ids[r * self.width + c] = id;
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Codebook {
    /// Build a codebook by running k-means over raw pixel patches.
    /// Deterministic given `seed`; errors if fewer than `k` distinct
    /// patches exist or any pixel is non-finite.
    pub fn build(patches: &[f32], patch_size: usize, k: usize, seed: u64) -> Result<Codebook> {
        let dim = patch_size * patch_size * 3;
        if k == 0 {
            return Err(Error::Codebook("k must be at least 1".into()));
        }
        if patches.is_empty() || patches.len() % dim != 0 {
            return Err(Error::Codebook(format!(
                "patch buffer of {} values is not a multiple of {dim}",
                patches.len()
            )));
        }
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(Error::Codebook("non-finite pixel value".into()));
        }
        let pts: Vec<f64> = patches.iter().map(|&v| v as f64).collect();
        let out = KMeans::new(k).run(&pts, dim, seed)?;
        Ok(Codebook {
            patch_size,
            centroids: out.centroids.iter().map(|&v| v as f32).collect(),
            cluster_of: vec![0; k],
            n_clusters: 1,
        })
    }

    /// Construct directly from centroid values (used by deserialization
    /// and tests). Validates the cluster partition.
    pub fn from_parts(
        patch_size: usize,
        centroids: Vec<f32>,
        cluster_of: Vec<u32>,
        n_clusters: usize,
    ) -> Result<Codebook> {
        let dim = patch_size * patch_size * 3;
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::Codebook("bad centroid buffer".into()));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Codebook("non-finite centroid".into()));
        }
        let k = centroids.len() / dim;
        if cluster_of.len() != k || n_clusters == 0 {
            return Err(Error::Codebook("cluster table does not match vocab".into()));
        }
        if cluster_of.iter().any(|&c| c as usize >= n_clusters) {
            return Err(Error::Codebook("cluster id out of range".into()));
        }
        Ok(Codebook { patch_size, centroids, cluster_of, n_clusters })
    }

    pub fn vocab_size(&self) -> usize {
        self.centroids.len() / self.dim()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn centroid(&self, id: u32) -> &[f32] {
        let d = self.dim();
        &self.centroids[id as usize * d..(id as usize + 1) * d]
    }

    pub fn cluster_of(&self, id: u32) -> u32 {
        self.cluster_of[id as usize]
    }

    pub fn cluster_table(&self) -> &[u32] {
        &self.cluster_of
    }

    pub(crate) fn centroid_buffer(&self) -> &[f32] {
        &self.centroids
    }

    /// Nearest centroid id for one patch; ties break to the lowest id.
    pub fn quantize(&self, patch: &[f32]) -> u32 {
        debug_assert_eq!(patch.len(), self.dim());
        let d = self.dim();
        let mut best = 0u32;
        let mut best_dist = f32::INFINITY;
        for c in 0..self.vocab_size() {
            let cent = &self.centroids[c * d..(c + 1) * d];
            let mut acc = 0.0f32;
            for j in 0..d {
                let diff = patch[j] - cent[j];
                acc += diff * diff;
            }
            if acc < best_dist {
                best_dist = acc;
                best = c as u32;
            }
        }
        best
    }

    /// Replace the cluster partition by k-means over the centroid vectors.
    pub fn cluster(&self, n_clusters: usize, seed: u64) -> Result<Codebook> {
        if n_clusters == 0 || n_clusters > self.vocab_size() {
            return Err(Error::Codebook(format!(
                "n_clusters {n_clusters} out of range for vocab {}",
                self.vocab_size()
            )));
        }
        let pts: Vec<f64> = self.centroids.iter().map(|&v| v as f64).collect();
        let out = KMeans::new(n_clusters).run(&pts, self.dim(), seed)?;
        Ok(Codebook {
            patch_size: self.patch_size,
            centroids: self.centroids.clone(),
            cluster_of: out.assignments,
            n_clusters,
        })
    }
}

/// Cut an image into row-major `P x P` patches, each flattened RGB
/// row-major. Errors unless both dimensions divide evenly.
pub fn image_patches(img: &Pixmap, patch_size: usize) -> Result<Vec<f32>> {
    if patch_size == 0 || img.width % patch_size != 0 || img.height % patch_size != 0 {
        return Err(Error::Codebook(format!(
            "image {}x{} not divisible by patch size {patch_size}",
            img.width, img.height
        )));
    }
    let (gw, gh) = (img.width / patch_size, img.height / patch_size);
    let dim = patch_size * patch_size * 3;
    let mut out = Vec::with_capacity(gw * gh * dim);
    for gr in 0..gh {
        for gc in 0..gw {
            for py in 0..patch_size {
                for px in 0..patch_size {
                    let p = img.pixel(gc * patch_size + px, gr * patch_size + py);
                    out.extend_from_slice(&p);
                }
            }
        }
    }
    Ok(out)
}

/// Quantize an image to a token grid; `H/P x W/P` cells.
pub fn encode_image(img: &Pixmap, cb: &Codebook) -> Result<TokenGrid> {
    let p = cb.patch_size();
    let patches = image_patches(img, p)?;
    let dim = cb.dim();
    let (gw, gh) = (img.width / p, img.height / p);
    let ids = patches.chunks_exact(dim).map(|patch| cb.quantize(patch)).collect();
    Ok(TokenGrid { height: gh, width: gw, ids })
}

/// Paint each grid cell with its centroid patch.
pub fn decode_tokens(grid: &TokenGrid, cb: &Codebook) -> Result<Pixmap> {
    let p = cb.patch_size();
    let k = cb.vocab_size() as u32;
    if let Some(&bad) = grid.ids.iter().find(|&&id| id >= k) {
        return Err(Error::Codebook(format!("token id {bad} out of range (K={k})")));
    }
    let mut img = Pixmap::new(grid.width * p, grid.height * p);
    for gr in 0..grid.height {
        for gc in 0..grid.width {
            let cent = cb.centroid(grid.get(gr, gc));
            let mut i = 0;
            for py in 0..p {
                for px in 0..p {
                    img.set_pixel(
                        gc * p + px,
                        gr * p + py,
                        [cent[i], cent[i + 1], cent[i + 2]],
                    );
                    i += 3;
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_patches(n: usize, patch_size: usize, seed: u64) -> Vec<f32> {
        let mut r = crate::rng::seeded(seed);
        (0..n * patch_size * patch_size * 3).map(|_| r.gen::<f32>()).collect()
    }

    #[test]
    fn k_equals_distinct_patches_has_zero_quantization_error() {
        let patches = random_patches(6, 2, 3);
        let cb = Codebook::build(&patches, 2, 6, 0).unwrap();
        let dim = cb.dim();
        for patch in patches.chunks_exact(dim) {
            let id = cb.quantize(patch);
            let cent = cb.centroid(id);
            let err: f32 = patch.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
            assert_eq!(err, 0.0);
        }
    }

    #[test]
    fn k1_centroid_is_mean_patch() {
        let patches = random_patches(10, 2, 4);
        let cb = Codebook::build(&patches, 2, 1, 0).unwrap();
        let dim = cb.dim();
        for j in 0..dim {
            let mean: f32 =
                (0..10).map(|i| patches[i * dim + j] as f64).sum::<f64>() as f32 / 10.0;
            assert!((cb.centroid(0)[j] - mean).abs() < 1e-6);
        }
        assert_eq!(cb.quantize(&patches[..dim]), 0);
    }

    #[test]
    fn assignments_match_nearest_centroid_scan() {
        // final assignment of every patch equals a brute-force nearest scan
        let patches = random_patches(100, 2, 8);
        let cb = Codebook::build(&patches, 2, 8, 42).unwrap();
        let dim = cb.dim();
        for patch in patches.chunks_exact(dim) {
            let id = cb.quantize(patch);
            let mut best = 0u32;
            let mut best_d = f32::INFINITY;
            for c in 0..cb.vocab_size() {
                let d: f32 = patch
                    .iter()
                    .zip(cb.centroid(c as u32))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c as u32;
                }
            }
            assert_eq!(id, best);
        }
    }

    #[test]
    fn too_few_patches_errors() {
        let patches = random_patches(3, 2, 1);
        assert!(Codebook::build(&patches, 2, 4, 0).is_err());
    }

    #[test]
    fn non_finite_pixels_error() {
        let mut patches = random_patches(4, 2, 1);
        patches[5] = f32::NAN;
        assert!(Codebook::build(&patches, 2, 4, 0).is_err());
    }

    #[test]
    fn paper_scale_resolution_mapping() {
        // 160x160 pixels at 8 px per token -> 20x20 tokens, and back.
        let patches = random_patches(40, 8, 2);
        let cb = Codebook::build(&patches, 8, 16, 0).unwrap();
        let mut img = Pixmap::new(160, 160);
        let mut r = crate::rng::seeded(5);
        for v in img.data.iter_mut() {
            *v = r.gen();
        }
        let grid = encode_image(&img, &cb).unwrap();
        assert_eq!((grid.height, grid.width), (20, 20));
        let out = decode_tokens(&grid, &cb).unwrap();
        assert_eq!((out.width, out.height), (160, 160));
    }

    #[test]
    fn non_divisible_dimensions_error() {
        let patches = random_patches(4, 8, 2);
        let cb = Codebook::build(&patches, 8, 2, 0).unwrap();
        let img = Pixmap::new(20, 16);
        assert!(encode_image(&img, &cb).is_err());
    }

    #[test]
    fn decode_is_lossless_on_codebook_images() {
        let patches = random_patches(12, 4, 7);
        let cb = Codebook::build(&patches, 4, 12, 1).unwrap();
        let grid = TokenGrid { height: 3, width: 4, ids: (0..12).collect() };
        let img = decode_tokens(&grid, &cb).unwrap();
        let back = encode_image(&img, &cb).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn decode_all_zero_grid_tiles_centroid_zero() {
        let patches = random_patches(5, 2, 9);
        let cb = Codebook::build(&patches, 2, 5, 0).unwrap();
        let grid = TokenGrid::filled(2, 2, 0);
        let img = decode_tokens(&grid, &cb).unwrap();
        let c0 = cb.centroid(0);
        for gr in 0..2 {
            for gc in 0..2 {
                for py in 0..2 {
                    for px in 0..2 {
                        let got = img.pixel(gc * 2 + px, gr * 2 + py);
                        let base = (py * 2 + px) * 3;
                        assert_eq!(got, [c0[base], c0[base + 1], c0[base + 2]]);
                    }
                }
            }
        }
    }

    #[test]
    fn decode_rejects_out_of_range_id() {
        let patches = random_patches(4, 2, 9);
        let cb = Codebook::build(&patches, 2, 4, 0).unwrap();
        let grid = TokenGrid::filled(1, 1, 4);
        assert!(decode_tokens(&grid, &cb).is_err());
    }

    #[test]
    fn encode_decode_encode_is_a_fixed_point() {
        let patches = random_patches(30, 2, 13);
        let cb = Codebook::build(&patches, 2, 6, 3).unwrap();
        let mut img = Pixmap::new(8, 8);
        let mut r = crate::rng::seeded(99);
        for v in img.data.iter_mut() {
            *v = r.gen();
        }
        let g1 = encode_image(&img, &cb).unwrap();
        let g2 = encode_image(&decode_tokens(&g1, &cb).unwrap(), &cb).unwrap();
        let g3 = encode_image(&decode_tokens(&g2, &cb).unwrap(), &cb).unwrap();
        assert_eq!(g2, g3);
    }

    #[test]
    fn singleton_clusters_when_n_equals_k() {
        let patches = random_patches(8, 2, 17);
        let cb = Codebook::build(&patches, 2, 8, 0).unwrap().cluster(8, 0).unwrap();
        let mut seen = vec![false; 8];
        for id in 0..8u32 {
            let c = cb.cluster_of(id) as usize;
            assert!(!seen[c], "cluster {c} reused");
            seen[c] = true;
        }
    }

    #[test]
    fn cluster_partition_covers_vocab_exactly_once() {
        let patches = random_patches(64, 2, 19);
        let cb = Codebook::build(&patches, 2, 64, 0).unwrap().cluster(16, 5).unwrap();
        let mut counts = vec![0usize; cb.n_clusters()];
        for id in 0..cb.vocab_size() as u32 {
            counts[cb.cluster_of(id) as usize] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 64);
    }

    #[test]
    fn cluster_rejects_more_clusters_than_tokens() {
        let patches = random_patches(4, 2, 19);
        let cb = Codebook::build(&patches, 2, 4, 0).unwrap();
        assert!(cb.cluster(5, 0).is_err());
    }
}
