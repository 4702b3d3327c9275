//! Windowed 2D attention kernels and their dense baseline.
//!
//! Three variants: plain 2D local attention, auto-regressive (raster
//! causal) 2D local attention, and cross-resolution local attention
//! where decoder cells also attend a window of encoder cells. The
//! windowed kernels stream one query cell at a time with a two-pass
//! max/sum softmax over a per-worker scratch buffer, never materializing
//! an S x S matrix.

mod bench;
mod cross;
mod dense;
mod windowed;

pub use bench::{benchmark, to_csv, BenchConfig, BenchRow};
pub use cross::cross_resolution_local_attention;
pub use dense::{dense_attention_2d, dense_attention_2d_masked, DensePairMask};
pub use windowed::{local_attention_2d, local_attention_2d_causal};

use crate::error::{Error, Result};

/// Window geometry for the local kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    /// Window extents in token cells; both must be odd.
    pub kh: usize,
    pub kw: usize,
    /// Raster-order causal restriction.
    pub causal: bool,
    /// Cross-resolution attachment: encoder grid shape and the integer
    /// scale factor (decoder side = scale * encoder side).
    pub cross: Option<CrossSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossSpec {
    pub enc_h: usize,
    pub enc_w: usize,
    pub scale: usize,
}

impl WindowSpec {
    pub fn square(k: usize) -> Self {
        WindowSpec { kh: k, kw: k, causal: false, cross: None }
    }

    pub fn causal(k: usize) -> Self {
        WindowSpec { kh: k, kw: k, causal: true, cross: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.kh % 2 == 0 || self.kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window extents must be odd and positive, got {}x{}",
                self.kh, self.kw
            )));
        }
        Ok(())
    }

    /// Encoder-side window extent: `ceil(k / scale)` per axis, so the
    /// encoder window covers the same image area as the decoder window.
    pub fn encoder_extent(&self, scale: usize) -> (usize, usize) {
        (self.kh.div_ceil(scale), self.kw.div_ceil(scale))
    }
}

/// Inclusive axis range of a centered window of `extent` cells around
/// `center`, clipped to `[0, len)`. Odd extents are symmetric; even
/// extents take one more cell on the high side.
#[inline]
pub(crate) fn window_range(center: usize, extent: usize, len: usize) -> (usize, usize) {
    let lo = center.saturating_sub((extent - 1) / 2);
    let hi = (center + extent / 2).min(len - 1);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_extents_rejected() {
        assert!(WindowSpec { kh: 4, kw: 9, causal: false, cross: None }.validate().is_err());
        assert!(WindowSpec::square(9).validate().is_ok());
    }

    #[test]
    fn window_range_clips_at_borders() {
        assert_eq!(window_range(0, 9, 20), (0, 4));
        assert_eq!(window_range(10, 9, 20), (6, 14));
        assert_eq!(window_range(19, 9, 20), (15, 19));
        assert_eq!(window_range(0, 1, 20), (0, 0));
    }

    #[test]
    fn encoder_extent_covers_same_area() {
        let w = WindowSpec::square(9);
        assert_eq!(w.encoder_extent(3), (3, 3));
        assert_eq!(w.encoder_extent(2), (5, 5));
    }
}
