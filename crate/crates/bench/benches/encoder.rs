use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use layoutlab::tensor::Tensor;
use layoutlab::textcodec::Batch;
use layoutlab_bench::desk_model;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64usize, 128, 256] {
        let a = Tensor::<f32>::filled(&[n, n], 0.5);
        let b = Tensor::<f32>::filled(&[n, n], 0.25);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| a.matmul(&b).unwrap()));
    }
    g.finish();
}

fn forward_by_depth(c: &mut Criterion) {
    let (model, pages) = desk_model(12, 4);
    let batch = Batch::single(&pages[0]);
    let mut g = c.benchmark_group("forward_page");
    g.sample_size(20);
    for k in [1usize, 2, 4, 6, 12] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |bench, &k| {
            bench.iter(|| model.forward(&batch, Some(k)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, forward_by_depth);
criterion_main!(benches);
