//! Shared input builders for the attention benchmarks.

use hiergen::linalg::Mat;
use rand::Rng as _;

/// Deterministic random grid tensor, `side*side x dim`.
pub fn grid_tensor(side: usize, dim: usize, seed: u64) -> Mat<f32> {
    let mut rng = hiergen::rng::seeded(seed);
    let mut m = Mat::zeros(side * side, dim);
    m.data.iter_mut().for_each(|v| *v = rng.gen::<f32>() - 0.5);
    m
}

/// Q, K, V triple for one grid.
pub fn qkv(side: usize, dim: usize, seed: u64) -> (Mat<f32>, Mat<f32>, Mat<f32>) {
    (
        grid_tensor(side, dim, seed),
        grid_tensor(side, dim, seed.wrapping_add(1)),
        grid_tensor(side, dim, seed.wrapping_add(2)),
    )
}
