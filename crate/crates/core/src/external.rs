//! Top-level normal DLMs on log aggregates that supply factor beliefs to
//! the series-level models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dglm::{filter_step, state_path, DglmSpec, FilterStep, ObsSlot};
use crate::error::{Error, Result};
use crate::exp_family::{Family, FamilySpec};
use crate::latent_factor::LatentFactorBelief;
use crate::linalg::GaussianMoments;

/// A factor coordinate, always a linear functional of the state at the
/// horizon in question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum FactorCoord {
    /// The full linear predictor `F'theta`, e.g. the log-total forecast.
    LinearPredictor,
    /// Contribution of one discount block (in builder order), e.g. the
    /// current seasonal effect or a holiday regression effect.
    Block(usize),
    /// A single state coordinate.
    State(usize),
}

/// Discounted learning of the observation variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceLearning {
    /// Degrees of freedom.
    pub n: f64,
    /// Point estimate of the observation variance.
    pub s: f64,
    pub discount: f64,
}

impl VarianceLearning {
    pub fn new(n: f64, s: f64, discount: f64) -> Result<Self> {
        if !(n > 0.0 && s > 0.0 && discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "variance learning needs n > 0, s > 0, discount in (0, 1]; got {n}, {s}, {discount}"
            )));
        }
        Ok(Self { n, s, discount })
    }
}

/// Stand-in for `ln 0` when an aggregate total is zero.
pub const ZERO_TOTAL_LOG: f64 = -std::f64::consts::LN_2;
/// Observation variance multiplier for that step.
pub const ZERO_TOTAL_INFLATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDlm {
    pub spec: DglmSpec,
    pub state: GaussianMoments,
    pub factor_map: Vec<FactorCoord>,
    pub variance: Option<VarianceLearning>,
}

impl AggregateDlm {
    pub fn new(
        spec: DglmSpec,
        state: GaussianMoments,
        factor_map: Vec<FactorCoord>,
        variance: Option<VarianceLearning>,
    ) -> Result<Self> {
        if spec.family.family != Family::Normal {
            return Err(Error::InvalidParams("aggregate models must be normal".into()));
        }
        if spec.n_factors() > 0 {
            return Err(Error::InvalidParams("aggregate models cannot carry factors".into()));
        }
        if state.dim() != spec.state_dim() {
            return Err(Error::dim(format!(
                "state has dimension {}, model {}",
                state.dim(),
                spec.state_dim()
            )));
        }
        for c in &factor_map {
            let ok = match *c {
                FactorCoord::LinearPredictor => true,
                FactorCoord::Block(b) => b < spec.blocks().len(),
                FactorCoord::State(i) => i < spec.state_dim(),
            };
            if !ok {
                return Err(Error::InvalidParams(format!("factor coordinate {c:?} out of range")));
            }
        }
        Ok(Self {
            spec,
            state,
            factor_map,
            variance,
        })
    }

    pub fn r(&self) -> usize {
        self.factor_map.len()
    }

    /// Observation variance in use for the next step.
    pub fn obs_variance(&self) -> f64 {
        match self.variance {
            Some(v) => v.s,
            None => 1.0 / self.spec.family.precision,
        }
    }

    /// Rows of the map `theta -> phi` for given predictors.
    fn projection(&self, predictors: &[f64]) -> Result<DMatrix<f64>> {
        let f = self.spec.regression_vector(predictors, &[])?;
        let d = self.spec.state_dim();
        let mut l = DMatrix::zeros(self.r(), d);
        for (row, c) in self.factor_map.iter().enumerate() {
            match *c {
                FactorCoord::LinearPredictor => l.row_mut(row).copy_from(&f.transpose()),
                FactorCoord::Block(b) => {
                    let blk = self.spec.blocks()[b];
                    for i in blk.start..blk.start + blk.len {
                        l[(row, i)] = f[i];
                    }
                }
                FactorCoord::State(i) => l[(row, i)] = 1.0,
            }
        }
        Ok(l)
    }

    /// Factor belief over horizons `0..=k`: horizon 0 projects the current
    /// posterior, horizon `h` the `h`-step state path. `predictors[h]` are
    /// the predictor values at `t + h`; pass an empty slice when the model
    /// has none.
    pub fn emit_belief(&self, k: usize, predictors: &[Vec<f64>]) -> Result<LatentFactorBelief> {
        let empty = Vec::new();
        let pred = |h: usize| -> Result<&Vec<f64>> {
            if predictors.is_empty() && self.spec.n_predictors() == 0 {
                Ok(&empty)
            } else {
                predictors
                    .get(h)
                    .ok_or_else(|| Error::dim(format!("no predictors for horizon {h}")))
            }
        };
        let d = self.spec.state_dim();
        let r = self.r();
        let mut state_means = vec![self.state.mean.clone()];
        // Stacked state covariance over horizons 0..=k.
        let mut big = DMatrix::zeros((k + 1) * d, (k + 1) * d);
        big.view_mut((0, 0), (d, d)).copy_from(&self.state.cov);
        if k > 0 {
            let path = state_path(&self.spec, &self.state, k)?;
            big.view_mut((d, d), (k * d, k * d)).copy_from(&path.cov);
            // Cov(theta_{t+h}, theta_t) = G^h C_t.
            let g = self.spec.evolution();
            let mut cross = self.state.cov.clone();
            for h in 1..=k {
                cross = g * cross;
                big.view_mut((h * d, 0), (d, d)).copy_from(&cross);
                big.view_mut((0, h * d), (d, d)).copy_from(&cross.transpose());
            }
            state_means.extend(path.means);
        }
        let mut proj = DMatrix::zeros((k + 1) * r, (k + 1) * d);
        let mut means = Vec::with_capacity(k + 1);
        for (h, a) in state_means.iter().enumerate() {
            let l = self.projection(pred(h)?)?;
            means.push(&l * a);
            proj.view_mut((h * r, h * d), (r, d)).copy_from(&l);
        }
        let cov = &proj * big * proj.transpose();
        LatentFactorBelief::new(means, cov)
    }

    /// One Kalman step on the log aggregate `y`. With variance learning the
    /// current estimate is plugged in as the observation variance and the
    /// posterior rescaled by the updated estimate.
    pub fn filter_aggregate(&self, y: f64, predictors: &[f64]) -> Result<(Self, FilterStep)> {
        self.step(y, 1.0, predictors)
    }

    /// [`Self::filter_aggregate`] on a raw total; zero totals become
    /// `ln 0.5` with the observation variance inflated for the step.
    pub fn filter_total(&self, total: f64, predictors: &[f64]) -> Result<(Self, FilterStep)> {
        if !(total >= 0.0 && total.is_finite()) {
            return Err(Error::Support {
                family: Family::Normal,
                value: total,
            });
        }
        if total == 0.0 {
            self.step(ZERO_TOTAL_LOG, ZERO_TOTAL_INFLATION, predictors)
        } else {
            self.step(total.ln(), 1.0, predictors)
        }
    }

    fn step(&self, y: f64, inflation: f64, predictors: &[f64]) -> Result<(Self, FilterStep)> {
        if !y.is_finite() {
            return Err(Error::Support {
                family: Family::Normal,
                value: y,
            });
        }
        let f = self.spec.regression_vector(predictors, &[])?;
        let v = self.obs_variance() * inflation;
        let step = if self.variance.is_none() && inflation == 1.0 {
            filter_step(&self.spec, &self.state, &f, ObsSlot::observed(y), None)?
        } else {
            let mut spec = self.spec.clone();
            spec.family = FamilySpec::normal(1.0 / v)?;
            filter_step(&spec, &self.state, &f, ObsSlot::observed(y), None)?
        };
        let mut next = self.clone();
        next.state = step.posterior.clone();
        if let Some(vl) = self.variance {
            let e = y - step.prior_lambda.f;
            let q = step.prior_lambda.q + v;
            let n = vl.discount * vl.n + 1.0;
            let dsum = vl.discount * vl.n * vl.s + vl.s * e * e / q;
            let s = dsum / n;
            next.state.cov *= s / vl.s;
            next.variance = Some(VarianceLearning { n, s, ..vl });
        }
        Ok((next, step))
    }

    /// Missing aggregate: evolve only.
    pub fn skip(&self, predictors: &[f64]) -> Result<Self> {
        let f = self.spec.regression_vector(predictors, &[])?;
        let step = filter_step(&self.spec, &self.state, &f, ObsSlot::missing(), None)?;
        Ok(Self {
            state: step.posterior,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dglm::{evolve, ModelBuilder};
    use nalgebra::DVector;
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn llgm(delta: f64, tau: f64) -> DglmSpec {
        ModelBuilder::new(FamilySpec::normal(tau).unwrap())
            .trend(delta)
            .build()
            .unwrap()
    }

    #[test]
    fn horizon_zero_is_filtered_projection() {
        let spec = llgm(0.95, 2.0);
        let state = GaussianMoments::new(
            DVector::from_column_slice(&[3.0, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.01, 0.01, 0.05]),
        )
        .unwrap();
        let m = AggregateDlm::new(spec, state.clone(), vec![FactorCoord::State(0), FactorCoord::State(1)], None).unwrap();
        let b = m.emit_belief(3, &[]).unwrap();
        assert_eq!(b.mean(0), &state.mean);
        assert_eq!(b.psi(0, 0), state.cov);
    }

    #[test]
    fn llgm_level_grows_linearly() {
        let spec = llgm(0.9, 1.0);
        let state = GaussianMoments::new(
            DVector::from_column_slice(&[5.0, 0.25]),
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap();
        let m = AggregateDlm::new(spec, state, vec![FactorCoord::State(0)], None).unwrap();
        let b = m.emit_belief(6, &[]).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let mut gp: DMatrix<f64> = DMatrix::identity(2, 2);
        for h in 0..=6 {
            let want: f64 = (&gp * DVector::from_column_slice(&[5.0, 0.25]))[0];
            assert!((b.mean(h)[0] - want).abs() < 1e-12);
            assert!((b.mean(h)[0] - (5.0 + 0.25 * h as f64)).abs() < 1e-12);
            gp = &g * gp;
        }
    }

    #[test]
    fn zero_covariance_gives_zero_psi() {
        let spec = llgm(0.9, 1.0);
        let state = GaussianMoments::new(DVector::from_column_slice(&[1.0, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let m = AggregateDlm::new(spec, state, vec![FactorCoord::LinearPredictor, FactorCoord::State(1)], None).unwrap();
        let b = m.emit_belief(4, &[]).unwrap();
        assert!(b.stacked_cov().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn belief_matches_stacked_brute_force() {
        let spec = ModelBuilder::new(FamilySpec::normal(1.0).unwrap())
            .trend(0.97)
            .seasonal(7.0, &[1], 0.95)
            .regression(1, 0.99)
            .build()
            .unwrap();
        let d = spec.state_dim();
        let mut rng = stream_rng(3, 0);
        let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        let state = GaussianMoments::new(
            DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            &l * l.transpose() + DMatrix::identity(d, d) * 0.05,
        )
        .unwrap();
        let map = vec![FactorCoord::LinearPredictor, FactorCoord::Block(1), FactorCoord::Block(2)];
        let m = AggregateDlm::new(spec.clone(), state.clone(), map, None).unwrap();
        let k = 3;
        let preds: Vec<Vec<f64>> = (0..=k).map(|h| vec![if h == 2 { 1.0 } else { 0.0 }]).collect();
        let b = m.emit_belief(k, &preds).unwrap();
        // Stacked state (theta_t, theta_{t+1}, ...) from the brute-force path.
        let (mean, cov) = crate::dglm::tests::brute_force_path_with_origin(&spec, &state, k);
        let mut proj = DMatrix::zeros(3 * (k + 1), d * (k + 1));
        for h in 0..=k {
            let f = spec.regression_vector(&preds[h], &[]).unwrap();
            for i in 0..d {
                proj[(3 * h, d * h + i)] = f[i];
            }
            for blk in [1usize, 2] {
                let bl = spec.blocks()[blk];
                for i in bl.start..bl.start + bl.len {
                    proj[(3 * h + blk, d * h + i)] = f[i];
                }
            }
        }
        let want_mean = &proj * mean;
        let want_cov = &proj * cov * proj.transpose();
        for h in 0..=k {
            for c in 0..3 {
                assert!((b.mean(h)[c] - want_mean[3 * h + c]).abs() < 1e-10);
            }
        }
        assert!((b.stacked_cov() - want_cov).abs().max() < 1e-10);
        // The holiday block is only live at horizon 2.
        assert_eq!(b.mean(1)[2], 0.0);
    }

    #[test]
    fn one_step_belief_is_next_prior() {
        let spec = llgm(0.93, 4.0);
        let state = GaussianMoments::new(
            DVector::from_column_slice(&[2.0, -0.1]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.02, 0.02, 0.04]),
        )
        .unwrap();
        let m = AggregateDlm::new(spec.clone(), state, vec![FactorCoord::LinearPredictor], None).unwrap();
        let b = m.emit_belief(1, &[]).unwrap();
        let (_, step) = m.filter_aggregate(2.5, &[]).unwrap();
        assert!((b.mean(1)[0] - step.prior_lambda.f).abs() < 1e-14);
        assert!((b.psi(1, 1)[(0, 0)] - step.prior_lambda.q).abs() < 1e-14);
    }

    #[test]
    fn filter_delegates_bit_for_bit() {
        let spec = llgm(0.95, 2.0);
        let state = GaussianMoments::new(DVector::from_column_slice(&[1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let m = AggregateDlm::new(spec.clone(), state.clone(), vec![], None).unwrap();
        let (next, _) = m.filter_aggregate(1.7, &[]).unwrap();
        let f = spec.regression_vector(&[], &[]).unwrap();
        let direct = filter_step(&spec, &state, &f, ObsSlot::observed(1.7), None).unwrap();
        assert_eq!(next.state, direct.posterior);
        assert!(m.filter_aggregate(f64::NAN, &[]).is_err());
    }

    #[test]
    fn constant_stream_converges() {
        let spec = ModelBuilder::new(FamilySpec::normal(1.0).unwrap()).level(0.9).build().unwrap();
        let state = GaussianMoments::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1) * 10.0).unwrap();
        let mut m = AggregateDlm::new(spec, state, vec![], None).unwrap();
        for _ in 0..200 {
            m = m.filter_aggregate(4.2, &[]).unwrap().0;
        }
        assert!((m.state.mean[0] - 4.2).abs() < 1e-10);
        // Discounted steady state: C = R V / (R + V) with R = C / delta.
        let (delta, v) = (0.9, 1.0);
        let c_ss = v * (1.0 - delta);
        assert!((m.state.cov[(0, 0)] - c_ss).abs() < 1e-10);
    }

    #[test]
    fn uninformative_observation_leaves_state() {
        let spec = ModelBuilder::new(FamilySpec::normal(1e-14).unwrap()).level(1.0).build().unwrap();
        let state = GaussianMoments::new(DVector::from_element(1, 3.0), DMatrix::identity(1, 1)).unwrap();
        let m = AggregateDlm::new(spec, state.clone(), vec![], None).unwrap();
        let (next, _) = m.filter_aggregate(100.0, &[]).unwrap();
        assert!((next.state.mean[0] - 3.0).abs() < 1e-11);
        assert!((next.state.cov[(0, 0)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn zero_total_uses_half_and_inflation() {
        let spec = ModelBuilder::new(FamilySpec::normal(0.5).unwrap()).level(0.95).build().unwrap();
        let state = GaussianMoments::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1) * 0.3).unwrap();
        let m = AggregateDlm::new(spec.clone(), state.clone(), vec![], None).unwrap();
        let (next, _) = m.filter_total(0.0, &[]).unwrap();
        let mut inflated = spec.clone();
        inflated.family = FamilySpec::normal(0.5 / 4.0).unwrap();
        let f = spec.regression_vector(&[], &[]).unwrap();
        let want = filter_step(&inflated, &state, &f, ObsSlot::observed(0.5f64.ln()), None).unwrap();
        assert_eq!(next.state, want.posterior);
        assert!(m.filter_total(-1.0, &[]).is_err());
    }

    #[test]
    fn variance_learning_recovers_noise_level() {
        let spec = ModelBuilder::new(FamilySpec::normal(1.0).unwrap()).level(0.99).build().unwrap();
        let state = GaussianMoments::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1)).unwrap();
        let vl = VarianceLearning::new(1.0, 1.0, 0.998).unwrap();
        let mut m = AggregateDlm::new(spec, state, vec![], Some(vl)).unwrap();
        let mut rng = stream_rng(21, 0);
        let sd = 0.3;
        for _ in 0..3000 {
            let y = 2.0 + sd * crate::sampling::std_normal(&mut rng);
            m = m.filter_aggregate(y, &[]).unwrap().0;
        }
        let s = m.variance.unwrap().s;
        assert!((s / (sd * sd) - 1.0).abs() < 0.15, "s {s}");
    }

    #[test]
    fn rejects_bad_models() {
        let pois = ModelBuilder::new(FamilySpec::poisson()).level(0.9).build().unwrap();
        let st = GaussianMoments::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(AggregateDlm::new(pois, st.clone(), vec![], None).is_err());
        let spec = llgm(0.9, 1.0);
        assert!(AggregateDlm::new(spec.clone(), st, vec![], None).is_err());
        let st2 = GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(AggregateDlm::new(spec, st2, vec![FactorCoord::Block(3)], None).is_err());
        let _ = evolve;
    }
}
