use std::hint::black_box;

use car_core::autograd::{Graph, Tensor};
use car_core::data::{CorruptionSpec, SplitRatios, Synth};
use car_core::model::{CarModel, ModelConfig, Variant, Vocab};
use car_core::train::{train, AblationConfig, TrainConfig, TrainOutputs};
use criterion::{criterion_group, criterion_main, Criterion};

fn matmul(c: &mut Criterion) {
    for n in [32, 128] {
        let a = Tensor::new(vec![n, n], (0..n * n).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let b = Tensor::new(vec![n, n], (0..n * n).map(|i| (i % 5) as f64 * 0.2).collect()).unwrap();
        c.bench_function(&format!("matmul {n}x{n}"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
                black_box(g.matmul(x, y).unwrap())
            })
        });
    }
}

fn reference_model(variant: Variant) -> (CarModel, car_core::data::Dataset) {
    let synth = Synth::default_synth();
    let data = synth.generate_dataset(200, SplitRatios::default(), &CorruptionSpec::default(), 1).unwrap();
    let vocab = Vocab::build(&data.train);
    let mut cfg: ModelConfig = AblationConfig::reference().model;
    cfg.vocab_size = vocab.len();
    cfg.candidate_count = data.candidates.len();
    let model = CarModel::new(cfg, variant, synth.schema.clone(), vocab, 1).unwrap();
    (model, data)
}

fn forward(c: &mut Criterion) {
    for variant in [Variant::Car, Variant::Ca] {
        let (model, data) = reference_model(variant);
        let sample = &data.test[0];
        c.bench_function(&format!("predict {}", variant.name()), |bench| {
            bench.iter(|| black_box(model.predict(sample).unwrap()))
        });
        c.bench_function(&format!("loss and backward {}", variant.name()), |bench| {
            bench.iter(|| {
                let mut g = model.graph();
                let l = model.loss(&mut g, sample).unwrap();
                black_box(g.backward(l.total).unwrap())
            })
        });
    }
}

fn train_step(c: &mut Criterion) {
    let (model, data) = reference_model(Variant::Car);
    let batch = &data.train[..32];
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one batch of 32", |bench| {
        bench.iter(|| {
            let mut m = model.clone();
            black_box(train(&mut m, batch, &[], &data.candidates, &cfg, &TrainOutputs::default()).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, forward, train_step);
criterion_main!(benches);
