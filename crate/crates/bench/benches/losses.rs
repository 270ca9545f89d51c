use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use metaloss::autodiff::scalar::log_sum_exp;
use metaloss::losses::{lsr_from_lse, sparse_lsr_from_lse, NoCount};
use metaloss::{LossSpec, Tape, Tensor};
use metaloss_bench::logit_batch;

// the shared log-sum-exp is precomputed, so only the smoothing term is timed
fn smoothing(c: &mut Criterion) {
    let mut group = c.benchmark_group("label-smoothing");
    for classes in [10, 100, 1000, 10_000] {
        let (logits, targets) = logit_batch(7, 100, classes);
        let lse: Vec<f64> = logits.iter().map(|z| log_sum_exp(z)).collect();
        group.bench_with_input(BenchmarkId::new("sparse", classes), &classes, |b, _| {
            b.iter(|| {
                let mut s = 0.0;
                for ((z, &t), &l) in logits.iter().zip(&targets).zip(&lse) {
                    s += sparse_lsr_from_lse(t, black_box(z), l, 0.1, &mut NoCount);
                }
                s
            })
        });
        group.bench_with_input(BenchmarkId::new("dense", classes), &classes, |b, _| {
            b.iter(|| {
                let mut s = 0.0;
                for ((z, &t), &l) in logits.iter().zip(&targets).zip(&lse) {
                    s += lsr_from_lse(t, black_box(z), l, 0.1, &mut NoCount);
                }
                s
            })
        });
    }
    group.finish();
}

fn batched_on_tape(c: &mut Criterion) {
    let mut group = c.benchmark_group("batched-loss");
    let (logits, targets) = logit_batch(8, 64, 1000);
    let flat: Vec<f64> = logits.concat();
    for spec in ["ce", "lsr:0.1", "sparse-lsr:0.1", "focal:2"] {
        let loss: LossSpec = spec.parse().unwrap();
        group.bench_function(spec, |b| {
            b.iter(|| {
                let tape = Tape::new();
                let z = tape.constant(Tensor::from_rows(64, 1000, flat.clone()));
                loss.classification(z, &targets).unwrap().item()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, smoothing, batched_on_tape);
criterion_main!(benches);
