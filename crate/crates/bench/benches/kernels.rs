use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emsaformer_bench::random_tensor;
use emsaformer_core::encoder::{cosine_window_attention, AttentionWeights};
use emsaformer_core::kernels::{layer_norm, linear, naive, softmax, LN_EPS};
use std::sync::Arc;

fn gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("linear");
    for &(tokens, cin, cout) in &[(4096, 128, 384), (1200, 512, 2048)] {
        let x = random_tensor(&[tokens, cin], 1);
        let w = random_tensor(&[cout, cin], 2);
        let b = random_tensor(&[cout], 3);
        let id = format!("{tokens}x{cin}x{cout}");
        g.bench_function(BenchmarkId::new("blocked", &id), |bench| bench.iter(|| linear(&x, &w, Some(&b)).unwrap()));
        if tokens <= 1200 {
            g.bench_function(BenchmarkId::new("naive", &id), |bench| bench.iter(|| naive::linear(&x, &w, Some(&b)).unwrap()));
        }
    }
    g.finish();
}

fn norms(c: &mut Criterion) {
    let x = random_tensor(&[19200, 128], 4);
    let gamma = random_tensor(&[128], 5);
    let beta = random_tensor(&[128], 6);
    c.bench_function("layer_norm/19200x128", |b| b.iter(|| layer_norm(&x, &gamma, &beta, LN_EPS).unwrap()));
    let logits = random_tensor(&[4096, 64], 7);
    c.bench_function("softmax/4096x64", |b| b.iter(|| softmax(&logits).unwrap()));
}

fn attention(c: &mut Criterion) {
    let (heads, ch, window) = (4, 128, 8);
    let t = window * window;
    let weights = AttentionWeights {
        qkv_weight: Arc::new(random_tensor(&[3 * ch, ch], 8).map(|v| v * 0.1)),
        qkv_bias: Arc::new(random_tensor(&[3 * ch], 9)),
        logit_scale: Arc::new(random_tensor(&[heads], 10)),
        proj_weight: Arc::new(random_tensor(&[ch, ch], 11).map(|v| v * 0.1)),
        proj_bias: Arc::new(random_tensor(&[ch], 12)),
        position_bias: random_tensor(&[heads, t, t], 13),
    };
    let windows = random_tensor(&[300, t, ch], 14);
    c.bench_function("window_attention/300x64x128", |b| {
        b.iter(|| cosine_window_attention(&windows, &weights, heads, None).unwrap())
    });
}

criterion_group!(benches, gemm, norms, attention);
criterion_main!(benches);
