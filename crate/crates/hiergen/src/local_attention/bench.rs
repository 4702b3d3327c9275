//! Wall-time and working-set benchmark: windowed kernel vs the dense
//! masked baseline on the same inputs.
//!
//! Peak bytes come from the tracking allocator when the host binary has
//! installed it (see [`crate::memtrack`]); the minimum over repetitions
//! is reported to shed concurrent-allocation noise. Inputs are built
//! outside the measured section, so the numbers cover only what each
//! variant allocates to do its work.

use std::time::Instant;

use rand::Rng as _;

use crate::error::Result;
use crate::linalg::Mat;
use crate::memtrack;
use crate::rng;

use super::{
    dense_attention_2d_masked, local_attention_2d, DensePairMask, WindowSpec,
};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub grid_sides: Vec<usize>,
    pub window: usize,
    /// Feature dim per head; the reference point uses 64.
    pub dim: usize,
    pub repetitions: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            grid_sides: vec![16, 32, 48],
            window: 9,
            dim: 64,
            repetitions: 5,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub grid: usize,
    pub window: usize,
    pub variant: &'static str,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub peak_bytes: usize,
    pub workers: usize,
}

impl BenchRow {
    pub fn csv_header() -> &'static str {
        "grid,window,variant,mean_ms,p95_ms,peak_bytes,workers"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{},{}",
            self.grid, self.window, self.variant, self.mean_ms, self.p95_ms, self.peak_bytes,
            self.workers
        )
    }
}

fn randn(rows: usize, cols: usize, rng: &mut rng::Rng) -> Mat<f32> {
    let mut m = Mat::zeros(rows, cols);
    m.data.iter_mut().for_each(|v| *v = rng.gen::<f32>() - 0.5);
    m
}

fn measure<T>(reps: usize, mut f: impl FnMut() -> T) -> (f64, f64, usize) {
    let mut times = Vec::with_capacity(reps);
    let mut peak = usize::MAX;
    for _ in 0..reps {
        let t0 = Instant::now();
        let (_, grew) = memtrack::measure_peak_growth(&mut f);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        peak = peak.min(grew);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times.iter().sum::<f64>() / reps as f64;
    let p95 = times[((reps as f64 * 0.95).ceil() as usize).saturating_sub(1)];
    (mean, p95, peak)
}

/// Run both variants over every grid side; two rows per side.
pub fn benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let spec = WindowSpec::square(cfg.window);
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| crate::error::Error::InvalidArgument(e.to_string()))?;

    let mut rows = Vec::new();
    for &side in &cfg.grid_sides {
        let mut r = rng::seeded(rng::substream(cfg.seed, 90, side as u64));
        let q = randn(side * side, cfg.dim, &mut r);
        let k = randn(side * side, cfg.dim, &mut r);
        let v = randn(side * side, cfg.dim, &mut r);

        let (mean, p95, peak) = pool.install(|| {
            measure(cfg.repetitions, || {
                local_attention_2d(side, side, &q, &k, &v, &spec).expect("windowed kernel")
            })
        });
        rows.push(BenchRow {
            grid: side,
            window: cfg.window,
            variant: "windowed",
            mean_ms: mean,
            p95_ms: p95,
            peak_bytes: peak,
            workers: cfg.workers,
        });

        let (mean, p95, peak) = pool.install(|| {
            measure(cfg.repetitions, || {
                dense_attention_2d_masked(side, side, &q, &k, &v, DensePairMask::Window(&spec))
                    .expect("dense baseline")
            })
        });
        rows.push(BenchRow {
            grid: side,
            window: cfg.window,
            variant: "dense",
            mean_ms: mean,
            p95_ms: p95,
            peak_bytes: peak,
            workers: cfg.workers,
        });
    }
    Ok(rows)
}

/// Render rows as a CSV document.
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BenchRow::csv_header());
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}
