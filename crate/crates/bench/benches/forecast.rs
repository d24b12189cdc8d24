use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dglm_cli::bench_model::bench_fixture;
use dglm_core::copula::{build_copula, path_moments, sample_paths};
use dglm_core::dglm::{recursive_path_forecast, RecursiveOptions};
use dglm_core::{CopulaSpec, MarginSpec};

fn path_forecasters(c: &mut Criterion) {
    let k = 14;
    let fx = bench_fixture(k, 1);
    let mut g = c.benchmark_group("path_forecast_k14");
    g.sample_size(10);
    for samples in [1_000usize, 10_000] {
        g.bench_with_input(BenchmarkId::new("recursive", samples), &samples, |b, &s| {
            b.iter(|| recursive_path_forecast(&fx.spec, &fx.posterior, &fx.f_seq, s, 7, RecursiveOptions::default()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("copula", samples), &samples, |b, &s| {
            b.iter(|| {
                let pm = path_moments(&fx.spec, &fx.posterior, &fx.f_seq, None).unwrap();
                let margins = vec![MarginSpec::new(fx.spec.family); k];
                let model = build_copula(&pm.joint, &margins, CopulaSpec::Gaussian, &[]).unwrap();
                sample_paths(&model, s, 7).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, path_forecasters);
criterion_main!(benches);
