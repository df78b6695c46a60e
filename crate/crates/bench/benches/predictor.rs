use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vlcuav::illum::{synth_sequence, SynthConfig};
use vlcuav::predictor::{predict_next, train, window_gradient, PredictorConfig, PredictorWeights};

fn forecaster(c: &mut Criterion) {
    let cfg = PredictorConfig { init_range: 0.3, ..Default::default() };
    let seq = synth_sequence(1, &SynthConfig::default()).unwrap();
    let w = PredictorWeights::init(&cfg).unwrap();
    let frames = &seq.frames()[..cfg.seq_len];
    let target = &seq.frames()[cfg.seq_len];

    c.bench_function("predict_next 32x32 T=4", |b| b.iter(|| predict_next(black_box(frames), &w, &cfg).unwrap()));
    c.bench_function("window_gradient 32x32 T=4", |b| {
        b.iter(|| window_gradient(black_box(frames), target, &w, &cfg).unwrap())
    });

    let data: Vec<_> = (0..4).map(|s| synth_sequence(s, &SynthConfig::default()).unwrap()).collect();
    let one_epoch = PredictorConfig { epochs: 1, learn_rate: 0.1, ..cfg.clone() };
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("epoch, 4 sequences x 8 windows", |b| b.iter(|| train(black_box(&data), &one_epoch).unwrap()));
    g.finish();
}

criterion_group!(benches, forecaster);
criterion_main!(benches);
