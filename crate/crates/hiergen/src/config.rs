//! Run configuration and the desk-scale defaults.
//!
//! The full-scale system this mimics ran a 6B-parameter model over a
//! 20,000-token image vocabulary; everything here is sized to train and
//! test on a desktop CPU in minutes while keeping every mechanism intact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Token-grid and codebook geometry shared across all stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    /// Pixels per side of one image token patch.
    pub patch_size: usize,
    /// Image codebook size K.
    pub image_vocab: usize,
    /// Cluster count for cluster sampling.
    pub n_clusters: usize,
    /// Low-resolution grid side in tokens.
    pub low_side: usize,
    /// Super-resolution upscale factor (high side = scale * low side).
    pub scale: usize,
    /// Maximum number of text tokens in a laid-out sequence.
    pub text_budget: usize,
    /// Local-attention window extent (square, odd).
    pub window: usize,
    /// Local window size for the iterative refinement schedule.
    pub sigma: usize,
}

impl Geometry {
    pub fn desk() -> Self {
        Geometry {
            patch_size: 8,
            image_vocab: 512,
            n_clusters: 16,
            low_side: 8,
            scale: 3,
            text_budget: 12,
            window: 9,
            sigma: 6,
        }
    }

    pub fn high_side(&self) -> usize {
        self.low_side * self.scale
    }

    pub fn low_pixels(&self) -> usize {
        self.low_side * self.patch_size
    }

    pub fn high_pixels(&self) -> usize {
        self.high_side() * self.patch_size
    }
}

/// Transformer shape. The reference configuration at full scale was
/// 48 layers / hidden 3072 / 48 heads; the desk default keeps the same
/// structure at a size where finite-difference checks are practical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Combined vocabulary size (image tokens first, then text section).
    pub vocab: usize,
    /// Image codebook size; ids below this are image tokens.
    pub image_vocab: usize,
    /// Rows in the 1D text position table.
    pub text_pos_slots: usize,
    /// Rows in each of the 2D image position tables (row and column).
    pub image_side_max: usize,
    pub ln_eps: f64,
    pub init_std: f64,
}

impl ModelShape {
    pub fn desk(vocab: usize, image_vocab: usize, geom: &Geometry) -> Self {
        ModelShape {
            layers: 2,
            d_model: 64,
            heads: 4,
            ffn_mult: 4,
            vocab,
            image_vocab,
            text_pos_slots: geom.text_budget + 2,
            image_side_max: geom.high_side(),
            ln_eps: 1e-5,
            init_std: 0.02,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn text_vocab(&self) -> usize {
        self.vocab - self.image_vocab
    }
}

/// Hex digest of any serializable config, embedded in run manifests so
/// an output can be traced back to the exact settings that produced it.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
