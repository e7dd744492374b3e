use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use zfda_bench::{desk_batch, desk_model, desk_sam};
use zfda_core::delta::DeltaPatch;
use zfda_core::nn::checkpoint;
use zfda_core::nn::{mse_grad, Graph};
use zfda_core::sam::{extract_delta, sam_gradients, sam_step, topk_mask};
use zfda_core::Prng;

fn forward_backward(c: &mut Criterion) {
    let model = desk_model();
    let x = desk_batch(32);
    c.bench_function("forward batch 32", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    c.bench_function("forward+backward batch 32", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let out = graph.forward(&model, &x).unwrap();
            let grad = mse_grad(&out.outcome, &x).unwrap();
            graph.backward(&model, &grad).unwrap()
        })
    });
}

fn masks(c: &mut Criterion) {
    let mut group = c.benchmark_group("topk_mask");
    let mut rng = Prng::new(0);
    for n in [1_000usize, 100_000] {
        let scores: Vec<f32> = (0..n).map(|_| rng.normal() as f32).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &scores, |b, s| {
            b.iter(|| topk_mask(black_box(s), n / 100).unwrap())
        });
    }
    group.finish();
}

fn sam(c: &mut Criterion) {
    let model = desk_model();
    let x = desk_batch(32);
    let state = desk_sam(&model, 0.01);
    c.bench_function("sam step batch 32", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| {
                let grads = sam_gradients(&model, &s, &x, &x, false).unwrap();
                sam_step(&mut s, &grads).unwrap()
            },
            criterion::BatchSize::LargeInput,
        )
    });
}

fn serialization(c: &mut Criterion) {
    let model = desk_model();
    let mut state = desk_sam(&model, 0.01);
    for l in &mut state.layers {
        l.values.iter_mut().for_each(|v| *v = 0.5);
    }
    let patch = DeltaPatch::from_delta(&extract_delta(&state, &model).unwrap(), &model).unwrap();
    let bytes = patch.to_bytes();
    c.bench_function("patch encode", |b| b.iter(|| black_box(&patch).to_bytes()));
    c.bench_function("patch decode", |b| b.iter(|| DeltaPatch::from_bytes(black_box(&bytes)).unwrap()));
    let ckpt = checkpoint::to_bytes(&model);
    c.bench_function("checkpoint decode", |b| b.iter(|| checkpoint::from_bytes(black_box(&ckpt)).unwrap()));
}

criterion_group!(benches, forward_backward, masks, sam, serialization);
criterion_main!(benches);
