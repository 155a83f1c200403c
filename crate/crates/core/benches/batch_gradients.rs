//! Minibatch gradient throughput: sequential executor against the worker
//! pool. Both produce bit-identical gradients.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nucleonet::data::{LabelVector, ShapeClass};
use nucleonet::model::{Cnn, Mode, ModelSpec, Variant};
use nucleonet::parallel::{batch_gradients, Executor};
use nucleonet::training::cnn_sample;
use nucleonet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 32;

fn executors() -> Vec<(String, Executor)> {
    let mut out = vec![("sequential".to_string(), Executor::Sequential)];
    if cfg!(feature = "parallel") {
        let n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
        out.push((format!("pool{n}"), Executor::with_threads(n).expect("thread pool")));
    }
    out
}

fn bench(c: &mut Criterion) {
    let spec = ModelSpec::full(Variant::W, 0).with_width_divisor(4);
    let net = Cnn::<f32>::build(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images: Vec<Tensor<f32>> = (0..BATCH)
        .map(|_| Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.0..1.0)))
        .collect();
    let label = LabelVector {
        attributes: [false; 10],
        shape: ShapeClass::Oval,
    };
    let feedback = vec![0.0f32; spec.feedback_dim];
    let items: Vec<usize> = (0..BATCH).collect();

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    group.throughput(Throughput::Elements(BATCH as u64));
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| {
                batch_gradients(
                    exec,
                    &items,
                    || net.params().zeros_like(),
                    |i, g| cnn_sample(&net, &images[i], &feedback, None, &label, Mode::Eval, 0.6, g),
                )
                .unwrap()
                .loss
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
