//! The fitted model used by `dglm benchmark`, the acceptance run and the
//! criterion benches: a daily retail-style Poisson DGLM (trend, weekly
//! harmonics 1-3, price and promo regressors; d = 10) filtered over 300
//! synthetic days.

use dglm_core::copula::{benchmark_forecasters, BenchmarkReport};
use dglm_core::dglm::{filter_step, ModelBuilder};
use dglm_core::sampling::{poisson, stream_rng};
use dglm_core::vb_table::{GridSpec, VbTable};
use dglm_core::{DglmSpec, FamilySpec, GaussianMoments, ObsSlot};
use nalgebra::DVector;

pub const FIT_STEPS: usize = 300;

#[derive(Debug, Clone)]
pub struct BenchFixture {
    pub spec: DglmSpec,
    pub posterior: GaussianMoments,
    /// Regression vectors for horizons `1..=k`.
    pub f_seq: Vec<DVector<f64>>,
}

fn price(t: usize) -> f64 {
    ((t * 37) % 5) as f64 * 0.2 - 0.4
}

fn promo(t: usize) -> f64 {
    if (t * 13) % 11 < 2 {
        1.0
    } else {
        0.0
    }
}

fn f_vec(d: usize, t: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[0] = 1.0;
    for i in [2, 4, 6] {
        v[i] = 1.0;
    }
    v[8] = price(t);
    v[9] = promo(t);
    v
}

pub fn bench_spec() -> DglmSpec {
    ModelBuilder::new(FamilySpec::poisson())
        .trend(0.98)
        .seasonal(7.0, &[1, 2, 3], 0.98)
        .regression(2, 0.995)
        .build()
        .expect("benchmark model is valid")
}

/// Fit the benchmark model (exact VB) and lay out `k` future regression
/// vectors.
pub fn bench_fixture(k: usize, seed: u64) -> BenchFixture {
    let spec = bench_spec();
    let d = spec.state_dim();
    let mut post = GaussianMoments::diffuse(d, 1.0);
    let mut rng = stream_rng(seed, 0);
    for t in 0..FIT_STEPS {
        let week = 1.0 + 0.3 * (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin();
        let mu = 5.0 * week * (-0.3 * price(t) + 0.4 * promo(t)).exp();
        let y = poisson(&mut rng, mu) as f64;
        post = filter_step(&spec, &post, &f_vec(d, t), ObsSlot::observed(y), None)
            .expect("benchmark fit")
            .posterior;
    }
    BenchFixture {
        spec,
        posterior: post,
        f_seq: (FIT_STEPS..FIT_STEPS + k).map(|t| f_vec(d, t)).collect(),
    }
}

pub fn poisson_table() -> VbTable {
    VbTable::build(&FamilySpec::poisson(), GridSpec::default()).expect("default poisson grid builds")
}

/// Time both forecasters on the fixture; with a table the recursive
/// forecaster is also timed with table lookups.
pub fn run_benchmark(k: usize, samples: usize, seed: u64, table: Option<&VbTable>) -> dglm_core::Result<BenchmarkReport> {
    let fx = bench_fixture(k, seed);
    benchmark_forecasters(&fx.spec, &fx.posterior, &fx.f_seq, samples, seed, table)
}
