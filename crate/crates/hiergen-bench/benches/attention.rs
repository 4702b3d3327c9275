//! Windowed kernels vs the dense masked baseline across grid sizes.
//!
//! The reference point at full scale: a 64x64 grid (4096 tokens) with a
//! 9x9 window and 64 dims per head. Run with `cargo bench -p hiergen-bench`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use hiergen::local_attention::{
    cross_resolution_local_attention, dense_attention_2d_masked, local_attention_2d,
    local_attention_2d_causal, CrossSpec, DensePairMask, WindowSpec,
};
use hiergen_bench::{grid_tensor, qkv};

const DIM: usize = 64;
const WINDOW: usize = 9;

fn windowed_vs_dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("local_vs_dense");
    for side in [16usize, 32, 48, 64] {
        let (q, k, v) = qkv(side, DIM, side as u64);
        let spec = WindowSpec::square(WINDOW);
        group.throughput(Throughput::Elements((side * side) as u64));
        group.bench_with_input(BenchmarkId::new("windowed", side), &side, |b, &side| {
            b.iter(|| local_attention_2d(side, side, &q, &k, &v, &spec).unwrap())
        });
        // the dense baseline is quadratic; skip the largest grid to keep
        // the default run short
        if side <= 48 {
            group.bench_with_input(BenchmarkId::new("dense", side), &side, |b, &side| {
                b.iter(|| {
                    dense_attention_2d_masked(side, side, &q, &k, &v, DensePairMask::Window(&spec))
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn causal_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("causal");
    for side in [32usize, 64] {
        let (q, k, v) = qkv(side, DIM, 100 + side as u64);
        let spec = WindowSpec::causal(WINDOW);
        group.throughput(Throughput::Elements((side * side) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, &side| {
            b.iter(|| local_attention_2d_causal(side, side, &q, &k, &v, &spec).unwrap())
        });
    }
    group.finish();
}

fn cross_resolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("cross_resolution");
    // the production geometry: 60x60 decoder over a 20x20 encoder
    let (enc, dec, scale) = (20usize, 60usize, 3usize);
    let (q, k, v) = qkv(dec, DIM, 7);
    let ek = grid_tensor(enc, DIM, 8);
    let ev = grid_tensor(enc, DIM, 9);
    let spec = WindowSpec {
        kh: WINDOW,
        kw: WINDOW,
        causal: false,
        cross: Some(CrossSpec { enc_h: enc, enc_w: enc, scale }),
    };
    group.throughput(Throughput::Elements((dec * dec) as u64));
    group.bench_function("60x60_over_20x20", |b| {
        b.iter(|| {
            cross_resolution_local_attention(dec, dec, &q, &k, &v, &ek, &ev, &spec).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, windowed_vs_dense, causal_kernel, cross_resolution);
criterion_main!(benches);
