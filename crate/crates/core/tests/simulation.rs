//! Monte Carlo checks of forecasters against analytic distributions.

use dglm_core::copula::{build_copula, sample_paths};
use dglm_core::dcmm::{dcmm_path_forecast, DcmmPathInputs};
use dglm_core::exp_family::{sample_mu, sample_outcome, vb_solve};
use dglm_core::predictive::one_step_predictive;
use dglm_core::sampling::stream_rng;
use dglm_core::{
    CopulaSpec, DcmmSpec, DcmmState, FamilySpec, GaussianMoments, JointPredictorMoments, LinearPredictorMoments,
    MarginSpec, ModelBuilder,
};
use nalgebra::{DMatrix, DVector};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
    cov / (va * vb).sqrt()
}

#[test]
fn conjugate_simulation_matches_predictive() {
    let s = 50_000;
    for (fam, f, q, trials) in [
        (FamilySpec::poisson(), 1.3, 0.2, None),
        (FamilySpec::bernoulli(), -0.4, 0.5, None),
        (FamilySpec::binomial(), 0.2, 0.3, Some(12)),
    ] {
        let params = vb_solve(&fam, LinearPredictorMoments::new(f, q)).unwrap();
        let dist = one_step_predictive(&fam, &params, trials).unwrap();
        let mut rng = stream_rng(11, 0);
        let mut ys: Vec<f64> = (0..s)
            .map(|_| {
                let mu = sample_mu(&mut rng, &params);
                sample_outcome(&mut rng, &fam, mu, trials)
            })
            .collect();
        ys.sort_by(f64::total_cmp);
        let top = *ys.last().unwrap() as i64;
        let ks = (0..=top)
            .map(|y| {
                let emp = ys.partition_point(|v| *v <= y as f64) as f64 / s as f64;
                (emp - dist.cdf(y as f64)).abs()
            })
            .fold(0.0, f64::max);
        assert!(ks < 4.0 / (s as f64).sqrt(), "{fam:?}: {ks}");
    }
}

#[test]
fn normal_copula_reproduces_joint_moments() {
    let s = 100_000;
    let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, -0.3, 0.6, 2.0, 0.4, -0.3, 0.4, 0.8]);
    let lam = JointPredictorMoments {
        f: DVector::from_column_slice(&[0.5, -1.0, 2.0]),
        q: q.clone(),
    };
    let fam = FamilySpec::normal(1e12).unwrap();
    let model = build_copula(&lam, &[MarginSpec::new(fam); 3], CopulaSpec::Gaussian, &[]).unwrap();
    let paths = sample_paths(&model, s, 4).unwrap();
    let draws = paths.lambda_draws.unwrap();
    let n = s as f64;
    for i in 0..3 {
        let xi = draws.column(i);
        let mi = xi.mean();
        assert!((mi - lam.f[i]).abs() < 5.0 * (q[(i, i)] / n).sqrt());
        for j in 0..=i {
            let xj = draws.column(j);
            let mj = xj.mean();
            let c = xi.iter().zip(xj.iter()).map(|(a, b)| (a - mi) * (b - mj)).sum::<f64>() / n;
            // Var of a sample covariance for Gaussians.
            let se = ((q[(i, i)] * q[(j, j)] + q[(i, j)].powi(2)) / n).sqrt();
            assert!((c - q[(i, j)]).abs() < 5.0 * se, "({i},{j}) {c}");
        }
    }
}

#[test]
fn mixture_paths_respect_support_and_gate() {
    let spec = DcmmSpec::new(
        ModelBuilder::new(FamilySpec::bernoulli()).level(0.98).build().unwrap(),
        ModelBuilder::new(FamilySpec::poisson()).level(0.98).build().unwrap(),
    )
    .unwrap();
    let scalar = |m: f64, v: f64| GaussianMoments::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
    let state = DcmmState::new(scalar(0.3, 0.4), scalar(1.2, 0.2));
    let k = 3;
    let preds = vec![vec![]; k];
    let s = 40_000;
    let paths = dcmm_path_forecast(
        &spec,
        &state,
        DcmmPathInputs {
            bern_predictors: &preds,
            pois_predictors: &preds,
            belief: None,
            bern_factors: &[],
            pois_factors: &[],
        },
        CopulaSpec::Gaussian,
        s,
        8,
        &[],
    )
    .unwrap();
    let lams = paths.lambda_draws.as_ref().unwrap();
    for h in 0..k {
        let ys = paths.column(h);
        assert!(ys.iter().all(|y| *y >= 0.0 && y.fract() == 0.0));
        // Zeros are gate closures: P(y = 0) is one minus the mean gate
        // probability.
        let zero_share = ys.iter().filter(|y| **y == 0.0).count() as f64 / s as f64;
        let gate_mean = lams.column(h).iter().map(|l| 1.0 / (1.0 + (-l).exp())).sum::<f64>() / s as f64;
        assert!((zero_share - (1.0 - gate_mean)).abs() < 4.0 / (s as f64).sqrt());
        // Without factors the two components are independent.
        let gate: Vec<f64> = lams.column(h).iter().copied().collect();
        let count: Vec<f64> = lams.column(k + h).iter().copied().collect();
        assert!(corr(&gate, &count).abs() < 4.0 / (s as f64).sqrt());
    }
}
