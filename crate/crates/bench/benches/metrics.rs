use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use miaudit_bench::{smooth_logp, tied_scores};
use miaudit_core::entropy::{densify_topk, modified_renyi, renyi_entropy};
use miaudit_core::eval::{auc, roc_curve};
use miaudit_core::metrics::{self, GridSpec};
use miaudit_core::toylab::{self, LabConfig};
use miaudit_core::{Alpha, Label, Orientation, TailPolicy};

fn entropy(c: &mut Criterion) {
    let row = smooth_logp(32000, 4.0);
    let mut g = c.benchmark_group("entropy_v32000");
    for a in [0.5, 1.0, 2.0, f64::INFINITY] {
        let alpha = Alpha::new(a).unwrap();
        g.bench_function(format!("renyi_a{alpha}"), |b| {
            b.iter(|| renyi_entropy(black_box(&row), alpha).unwrap())
        });
    }
    g.bench_function("modified_a2", |b| {
        b.iter(|| modified_renyi(black_box(&row), 17, Alpha::new(2.0).unwrap()).unwrap())
    });
    let ids = [3u32, 99, 1024, 7, 31000];
    let logp = [-0.5, -1.5, -2.5, -3.0, -4.0];
    g.bench_function("densify_top5", |b| {
        b.iter(|| densify_topk(black_box(&ids), &logp, 32000, TailPolicy::Uniform).unwrap())
    });
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let scores = tied_scores(10_000);
    let (members, nonmembers): (Vec<_>, Vec<_>) =
        scores.iter().partition(|s| s.label == Label::Member);
    let m: Vec<f64> = members.iter().filter_map(|s| s.score).collect();
    let n: Vec<f64> = nonmembers.iter().filter_map(|s| s.score).collect();
    c.bench_function("auc_10k", |b| {
        b.iter(|| auc(black_box(&m), &n, Orientation::MemberLow).unwrap())
    });
    c.bench_function("roc_10k", |b| {
        b.iter(|| roc_curve(black_box(&m), &n, Orientation::MemberLow).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let cfg = LabConfig {
        n_member: 20,
        n_nonmember: 20,
        ..LabConfig::default()
    };
    let (members, nonmembers) = toylab::gen_corpus(&cfg).unwrap();
    let model = toylab::fit_ngram(
        &members,
        cfg.alphabet_size,
        cfg.ngram_order,
        cfg.smoothing_beta,
    );
    let dataset = toylab::emit_dataset(&model, &cfg, &members, &nonmembers);
    let grid = GridSpec::default().expand().unwrap();
    let sample = &dataset.samples[0];
    c.bench_function("score_sample_default_grid", |b| {
        b.iter(|| {
            for spec in &grid {
                black_box(metrics::score_sample(sample, spec).unwrap());
            }
        })
    });
    c.bench_function("score_dataset_40", |b| {
        b.iter_batched(
            || &dataset,
            |d| metrics::score_dataset(d, &grid).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, entropy, evaluation, scoring);
criterion_main!(benches);
