use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shapefda::basis::{build_basis, smooth};
use shapefda::classify::{fit_classifier, ClassifierKind};
use shapefda::curvetools::{arclength_reparameterise, SampledCurve};
use shapefda::landmarks::{flatten, gpa, LandmarkConfiguration};
use shapefda::pca::pca_fit;
use shapefda::pipelines::{run_pipeline, PipelineId, PipelineSettings};
use shapefda::simgen::{generate_replicate, SimConfig};
use shapefda::srvf::{estimate_warp, karcher_mean, to_srvf, KarcherOptions, SrvfCurve};

fn replicate(group_sizes: [usize; 4], n_points: usize) -> Vec<LandmarkConfiguration> {
    let config = SimConfig { group_sizes, n_points, ..SimConfig::default() };
    generate_replicate(&config, 0).expect("simulation")
}

fn srvfs(data: &[LandmarkConfiguration]) -> Vec<SrvfCurve> {
    data.iter()
        .map(|s| to_srvf(&SampledCurve::uniform(s.points.clone()).unwrap(), 1e-8).unwrap())
        .collect()
}

fn primitives(c: &mut Criterion) {
    let data = replicate(SimConfig::default().group_sizes, 30);
    c.bench_function("gpa/200x30", |b| b.iter(|| gpa(black_box(&data), 1e-10, 100).unwrap()));

    let curve = SampledCurve::uniform(data[0].points.clone()).unwrap();
    c.bench_function("arclength/30->100", |b| b.iter(|| arclength_reparameterise(black_box(&curve), 100).unwrap()));

    let basis = build_basis(10, 4).unwrap();
    c.bench_function("smooth/30 points, 10 splines", |b| b.iter(|| smooth(black_box(&curve), &basis).unwrap()));

    let flat = nalgebra::DMatrix::from_fn(data.len(), 90, |i, j| flatten(&data[i].points)[j]);
    c.bench_function("pca/200x90", |b| b.iter(|| pca_fit(black_box(&flat)).unwrap()));

    let labels: Vec<usize> = data.iter().map(|s| s.label.as_deref().unwrap()[1..].parse::<usize>().unwrap() - 1).collect();
    let x = flat.columns(0, 6).into_owned();
    for kind in [ClassifierKind::Lda, ClassifierKind::Multinomial, ClassifierKind::Svm] {
        c.bench_function(&format!("classifier/{}", kind.name()), |b| {
            b.iter(|| fit_classifier(kind, black_box(&x), &labels, 4).unwrap())
        });
    }
}

fn alignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("dp_warp");
    for m in [30, 100, 200] {
        let data = replicate([1, 1, 1, 1], m);
        let q = srvfs(&data);
        group.bench_with_input(BenchmarkId::from_parameter(m), &q, |b, q| {
            b.iter(|| estimate_warp(black_box(&q[0]), &q[1], 0.0).unwrap())
        });
    }
    group.finish();

    let q = srvfs(&replicate([4, 4, 4, 4], 30));
    c.bench_function("karcher/16x30", |b| b.iter(|| karcher_mean(black_box(&q), &KarcherOptions::default()).unwrap()));
}

fn pipelines(c: &mut Criterion) {
    let data = replicate([5, 8, 30, 6], 30);
    let settings = PipelineSettings::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for id in PipelineId::ALL {
        group.bench_function(id.name(), |b| b.iter(|| run_pipeline(id, black_box(&data), &settings).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, primitives, alignment, pipelines);
criterion_main!(benches);
