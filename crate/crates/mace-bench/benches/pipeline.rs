use criterion::{criterion_group, criterion_main, Criterion};

use mace_core::pipeline::{explain, Method, PipelineConfig};
use mace_core::select::build_indices;
use mace_core::synth::generate_census;
use mace_core::tabular::fit_encoders;
use mace_core::{BoostedStumps, Classifier, TargetSpec};

fn bench_explain(c: &mut Criterion) {
    let ds = generate_census(2000, 17);
    let model = BoostedStumps::train(&ds, 50, 0.5).unwrap();
    let enc = fit_encoders(&ds, 10).unwrap();
    let index = build_indices(&ds, &model, &enc).unwrap();
    let query = ds
        .rows
        .iter()
        .find(|r| model.predict(r).unwrap() == 0)
        .unwrap()
        .clone();

    let mut group = c.benchmark_group("explain");
    for (name, method) in [
        ("mace_rl", Method::MaceRl),
        ("mace_gld", Method::MaceGld),
        ("greedy_baseline", Method::GreedyBaseline),
    ] {
        let config = PipelineConfig { method, ..Default::default() };
        group.bench_function(name, |b| {
            b.iter(|| {
                explain(&query, TargetSpec::flip(0), &model, &ds, &index, &enc, &config, 7)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_candidate_selection(c: &mut Criterion) {
    let ds = generate_census(2000, 17);
    let model = BoostedStumps::train(&ds, 50, 0.5).unwrap();
    let enc = fit_encoders(&ds, 10).unwrap();
    let index = build_indices(&ds, &model, &enc).unwrap();
    let query = ds.rows[0].clone();

    c.bench_function("select_candidates", |b| {
        b.iter(|| {
            mace_core::select_candidates(
                &query,
                TargetSpec::flip(0),
                &index,
                &ds,
                &enc,
                30,
                10,
                3,
                true,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_explain, bench_candidate_selection);
criterion_main!(benches);
