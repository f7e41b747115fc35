use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use condwalk::edgeworth::{q4, CumulantSet};
use condwalk::sampler::{sample_trajectory, trajectory_stream};
use condwalk::tilt::solve_tilt;
use condwalk::trajectory::build_step_kernel;
use condwalk::{
    ConditioningSpec, CumulantModel, GOptions, Matrix, NormalizationOptions, SamplerConfig, ScalarFamily,
    SolveOptions, Vector,
};

fn product3() -> CumulantModel {
    CumulantModel::product(vec![
        ScalarFamily::Exponential { rate: 1.0 },
        ScalarFamily::Gaussian { mean: 1.0, sd: 2.0 },
        ScalarFamily::Gamma { shape: 3.0, rate: 2.0 },
    ])
    .unwrap()
}

fn tilt_solve(c: &mut Criterion) {
    let model = product3();
    let alpha = Vector::from_column_slice(&[2.5, -1.0, 0.4]);
    c.bench_function("tilt_solve/product3", |b| {
        b.iter(|| solve_tilt(black_box(&model), black_box(&alpha), &SolveOptions::default()).unwrap())
    });
}

fn kernel_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_build");
    let gauss = CumulantModel::gaussian(
        Vector::zeros(2),
        Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
    )
    .unwrap();
    let gauss_spec = ConditioningSpec::sum(gauss, 20, 10, Vector::zeros(2)).unwrap();
    let exp_spec = ConditioningSpec::sum(CumulantModel::exponential(1.0).unwrap(), 20, 10, Vector::from_element(1, 25.0))
        .unwrap();
    let opts = GOptions {
        normalization: NormalizationOptions {
            budget: 1000,
            ..Default::default()
        },
        ..Default::default()
    };
    for (name, spec) in [("gaussian_analytic", &gauss_spec), ("exponential_mc1000", &exp_spec)] {
        let partial = spec.m0() * 3.0;
        group.bench_function(name, |b| {
            b.iter(|| build_step_kernel(black_box(spec), black_box(&partial), 3, None, &opts).unwrap())
        });
    }
    group.finish();
}

fn trajectory_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_trajectory");
    let model = CumulantModel::gaussian(Vector::zeros(2), Matrix::identity(2, 2)).unwrap();
    for k in [5, 19] {
        let spec = ConditioningSpec::sum(model.clone(), 20, k, Vector::zeros(2)).unwrap();
        let cfg = SamplerConfig::default();
        group.bench_with_input(BenchmarkId::new("gaussian_n20", k), &spec, |b, spec| {
            let mut index = 0;
            b.iter(|| {
                index += 1;
                let mut rng = trajectory_stream(1, index);
                sample_trajectory(spec, &GOptions::default(), &cfg, &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

fn edgeworth_q4(c: &mut Criterion) {
    let mut group = c.benchmark_group("q4");
    for d in [1, 2, 3] {
        let model = CumulantModel::iid(ScalarFamily::Gamma { shape: 2.0, rate: 1.0 }, d).unwrap();
        let t = Vector::zeros(d);
        let cum = CumulantSet::standardized(
            &model.covariance_map(&t).unwrap(),
            &model.third_cumulant(&t).unwrap(),
            &model.fourth_cumulant(&t).unwrap(),
        )
        .unwrap();
        let x = Vector::from_element(d, 0.3);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| b.iter(|| q4(black_box(&cum), black_box(&x))));
    }
    group.finish();
}

criterion_group!(benches, tilt_solve, kernel_build, trajectory_sampling, edgeworth_q4);
criterion_main!(benches);
