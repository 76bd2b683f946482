use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dmad_bench::{blobs, rng, scores, unit_vector};
use dmad_core::{
    d_eer, det_curve, generate, score_pair, slerp, slerp_residue, train_dmad, train_linear_svm, DifferenceFeature,
    GroupSelection, NetworkId, PairFilter, PipelineConfig, SlerpConfig, SynthConfig, TrainConfig,
};

fn bench_slerp(c: &mut Criterion) {
    let mut r = rng(1);
    let cfg = SlerpConfig::default();
    for dim in [2048, 4096] {
        let a = unit_vector(&mut r, dim);
        let b = unit_vector(&mut r, dim);
        c.bench_function(&format!("slerp/{dim}"), |bench| {
            bench.iter(|| slerp(black_box(&a), black_box(&b), &cfg).unwrap())
        });
    }

    let g1 = [NetworkId::Alexnet, NetworkId::Vgg16, NetworkId::Vgg19];
    let dfs: Vec<DifferenceFeature> = g1
        .iter()
        .map(|&network| DifferenceFeature {
            network,
            values: unit_vector(&mut r, 4096),
        })
        .collect();
    let sel = GroupSelection::with_anchor(NetworkId::Vgg16);
    c.bench_function("slerp_residue/4096", |bench| {
        bench.iter(|| slerp_residue(black_box(&dfs), &sel, &cfg).unwrap())
    });
}

fn bench_svm(c: &mut Criterion) {
    let mut r = rng(2);
    let (x, y) = blobs(&mut r, 240, 64);
    let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
    c.bench_function("svm_train/240x64", |bench| {
        bench.iter(|| train_linear_svm(black_box(&x), &y, &cfg).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut r = rng(3);
    let s = scores(&mut r, 10_000);
    c.bench_function("det_curve/10k", |bench| bench.iter(|| det_curve(black_box(&s)).unwrap()));
    c.bench_function("d_eer/10k", |bench| bench.iter(|| d_eer(black_box(&s)).unwrap()));
}

fn bench_scoring(c: &mut Criterion) {
    let ds = generate(&SynthConfig::small(4)).unwrap();
    let filter = PairFilter::cell(None, 1, 3);
    let model = train_dmad(&ds.manifest, &ds.embeddings, &filter, &PipelineConfig::default()).unwrap();
    let doc = ds.embeddings.sample("test-m000-doc-digital").unwrap();
    let probe = ds.embeddings.sample("test-s000-c1-d3").unwrap();
    c.bench_function("score_pair/small", |bench| {
        bench.iter(|| score_pair(black_box(&model), doc, probe).unwrap())
    });
    c.bench_function("train_dmad/small_cell", |bench| {
        bench.iter_batched(
            PipelineConfig::default,
            |cfg| train_dmad(&ds.manifest, &ds.embeddings, &filter, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_slerp, bench_svm, bench_metrics, bench_scoring
}
criterion_main!(benches);
