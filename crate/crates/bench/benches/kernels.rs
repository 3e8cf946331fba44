use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mvlr_core::airlink::noise_cov;
use mvlr_core::clustering::{dissimilarity_matrix, pam};
use mvlr_core::estimator::{
    build_c_factors, build_projector, extract_bases, lr_filter, uml_estimate, whiten, CorrelationAccumulator,
};
use mvlr_core::numerics::stream_rng;
use mvlr_core::scenario::{build_cell, generate_dataset, DatasetOptions};
use mvlr_core::*;

fn dataset(wf: Waveform, n: usize, keep_bursts: bool) -> (Dataset, CFactors, Vec<WhitenedSeq>) {
    let sc = build_cell(&ScenarioConfig::default(), 1).unwrap();
    let noise = NoiseConfig::white(1.0);
    let mut rng = stream_rng(1, 0);
    let ds = generate_dataset(
        &sc,
        &wf,
        &ArrayConfig::user_equipment(),
        &ArrayConfig::base_station(),
        &noise,
        0.0,
        n,
        &DatasetOptions { keep_bursts },
        &mut rng,
    )
    .unwrap();
    let shape = noise_cov(&ds.noise_shape, &ds.rx).unwrap();
    let c = build_c_factors(&ds.noise, &shape.q_n, ds.waveform.pilot_power).unwrap();
    let seqs = ds.records.iter().map(|r| whiten(&r.estimate, &c).unwrap()).collect();
    (ds, c, seqs)
}

fn clustering(c: &mut Criterion) {
    let (_, _, seqs) = dataset(Waveform::flat(), 500, false);
    c.bench_function("dissimilarity_matrix n=500", |b| {
        b.iter(|| dissimilarity_matrix(black_box(&seqs)).unwrap())
    });
    let d = dissimilarity_matrix(&seqs).unwrap();
    c.bench_function("pam n=500 k=7", |b| b.iter(|| pam(black_box(&d), 7).unwrap()));
}

fn estimation(c: &mut Criterion) {
    for (name, wf) in [("flat", Waveform::flat()), ("selective", Waveform::selective())] {
        let n_taps = wf.n_taps;
        let (ds, _, _) = dataset(wf, 4, true);
        let burst = ds.records[0].burst.clone().unwrap();
        c.bench_function(&format!("uml_estimate {name}"), |b| {
            b.iter(|| uml_estimate(black_box(&burst), n_taps).unwrap())
        });
    }

    let (ds, cf, seqs) = dataset(Waveform::flat(), 300, false);
    let mut acc = CorrelationAccumulator::new(seqs[0].dims);
    for s in &seqs {
        acc.accumulate(s).unwrap();
    }
    let bases = extract_bases(&acc, &RankRule::default()).unwrap();
    c.bench_function("build_projector flat", |b| {
        b.iter(|| build_projector(black_box(&bases), &cf).unwrap())
    });
    let proj = build_projector(&bases, &cf).unwrap();
    let est = ds.records[0].estimate.clone();
    c.bench_function("lr_filter flat", |b| {
        b.iter_batched(|| est.clone(), |e| lr_filter(&proj, &e).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, clustering, estimation);
criterion_main!(benches);
