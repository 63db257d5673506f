use criterion::{criterion_group, criterion_main, Criterion};
use emsaformer_bench::{input_pair, reference_model};
use emsaformer_core::model_io::ModelConfig;
use emsaformer_core::panoptic::PostprocessSettings;

fn tiny_pipeline(c: &mut Criterion) {
    let model = reference_model(&ModelConfig::tiny(), 0);
    let (rgb, depth) = input_pair(&model, 96, 128, 1);
    let settings = PostprocessSettings::default();
    let mut g = c.benchmark_group("tiny_96x128");
    g.sample_size(20);
    g.bench_function("encoder", |b| b.iter(|| model.encode(&rgb, depth.as_ref()).unwrap()));
    g.bench_function("forward", |b| b.iter(|| model.forward(&rgb, depth.as_ref()).unwrap()));
    let outputs = model.forward(&rgb, depth.as_ref()).unwrap();
    g.bench_function("postprocess", |b| b.iter(|| model.postprocess(&outputs, 0, &settings, None).unwrap()));
    g.finish();
}

criterion_group!(benches, tiny_pipeline);
criterion_main!(benches);
