//! Latent-factor recoupling of otherwise independent DGLMs.
//!
//! A series whose regression vector contains factors `φ` (paired with the
//! state subvector `β`) is filtered with `φ` replaced by its forecast mean
//! `b`; the factor uncertainty `Ψ` is folded into the linear-predictor
//! variance:
//!
//! ```text
//! q = F̃'RF̃ + a_β'Ψa_β + tr(R_β Ψ)
//! ```
//!
//! Shared factors also induce covariance between series (`a_βi'Ψ a_βj`) and,
//! along a forecast path, between horizons.

use nalgebra::{DMatrix, DVector};

use crate::dglm::{lb_update_with_rf, update_from_prior, DglmSpec, FilterStep, ObsSlot, StatePath, Q_FLOOR};
use crate::error::{Error, Result};
use crate::exp_family::LinearPredictorMoments;
use crate::linalg::{min_eigenvalue, psd_repair, symmetrize, trace, GaussianMoments};
use crate::vb_table::VbTable;

/// Factor moments at a single horizon: mean `b` and covariance `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FactorMoments {
    pub fn zero(r: usize) -> Self {
        Self {
            mean: DVector::zeros(r),
            cov: DMatrix::zeros(r, r),
        }
    }
}

/// Factor moments over horizons `0..n`, including all cross-horizon
/// covariances, stored as one stacked `(n r) x (n r)` matrix with block
/// `(h, j)` equal to `Ψ(h, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorBelief {
    r: usize,
    means: Vec<DVector<f64>>,
    cov: DMatrix<f64>,
}

impl LatentFactorBelief {
    /// Validates shapes, symmetrizes, and checks PSD within `1e-8 * trace`.
    pub fn new(means: Vec<DVector<f64>>, mut cov: DMatrix<f64>) -> Result<Self> {
        let n = means.len();
        let r = means.first().map_or(0, |m| m.len());
        if means.iter().any(|m| m.len() != r) {
            return Err(Error::dim("factor means differ in length across horizons"));
        }
        if cov.nrows() != n * r || cov.ncols() != n * r {
            return Err(Error::dim(format!(
                "stacked factor covariance must be {0}x{0}, got {1}x{2}",
                n * r,
                cov.nrows(),
                cov.ncols()
            )));
        }
        if means.iter().flat_map(|m| m.iter()).chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite factor moments".into()));
        }
        symmetrize(&mut cov);
        if n * r > 0 && min_eigenvalue(&cov) < -1e-8 * trace(&cov).abs() {
            return Err(Error::InvalidParams(
                "stacked factor covariance is not positive semidefinite".into(),
            ));
        }
        Ok(Self { r, means, cov })
    }

    /// Single-horizon belief.
    pub fn single(m: FactorMoments) -> Result<Self> {
        Self::new(vec![m.mean], m.cov)
    }

    /// Known factor values (zero uncertainty) at every horizon.
    pub fn known(values: Vec<DVector<f64>>) -> Result<Self> {
        let n = values.len() * values.first().map_or(0, |v| v.len());
        Self::new(values, DMatrix::zeros(n, n))
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn horizons(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, h: usize) -> &DVector<f64> {
        &self.means[h]
    }

    pub fn stacked_cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `Ψ(h, j) = C(φ_h, φ_j)`.
    pub fn psi(&self, h: usize, j: usize) -> DMatrix<f64> {
        self.cov
            .view((h * self.r, j * self.r), (self.r, self.r))
            .into_owned()
    }

    pub(crate) fn psi_entry(&self, h: usize, u: usize, j: usize, v: usize) -> f64 {
        self.cov[(h * self.r + u, j * self.r + v)]
    }

    pub fn at(&self, h: usize) -> FactorMoments {
        FactorMoments {
            mean: self.means[h].clone(),
            cov: self.psi(h, h),
        }
    }

    /// Belief over a subset of factor coordinates, all horizons.
    pub fn select(&self, coords: &[usize]) -> Result<Self> {
        if coords.iter().any(|&c| c >= self.r) {
            return Err(Error::dim("factor coordinate out of range"));
        }
        let n = self.horizons();
        let rr = coords.len();
        let means = self
            .means
            .iter()
            .map(|m| DVector::from_iterator(rr, coords.iter().map(|&c| m[c])))
            .collect();
        let cov = DMatrix::from_fn(n * rr, n * rr, |i, j| {
            self.psi_entry(i / rr, coords[i % rr], j / rr, coords[j % rr])
        });
        Ok(Self {
            r: rr,
            means,
            cov,
        })
    }

    /// Belief over horizons `range` (renumbered from 0).
    pub fn horizon_range(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.horizons() || range.start > range.end {
            return Err(Error::dim("horizon range out of bounds"));
        }
        let r = self.r;
        let n = range.len();
        let cov = self
            .cov
            .view((range.start * r, range.start * r), (n * r, n * r))
            .into_owned();
        Ok(Self {
            r,
            means: self.means[range].to_vec(),
            cov,
        })
    }

    /// Concatenate the coordinates of independent beliefs (zero
    /// cross-covariance between them).
    pub fn independent_union(parts: &[&LatentFactorBelief]) -> Result<Self> {
        let n = parts.first().map_or(0, |p| p.horizons());
        if parts.iter().any(|p| p.horizons() != n) {
            return Err(Error::dim("beliefs cover different horizons"));
        }
        let r: usize = parts.iter().map(|p| p.r).sum();
        let mut offsets = Vec::with_capacity(parts.len());
        let mut acc = 0;
        for p in parts {
            offsets.push(acc);
            acc += p.r;
        }
        let means = (0..n)
            .map(|h| {
                DVector::from_iterator(r, parts.iter().flat_map(|p| p.means[h].iter().copied()))
            })
            .collect();
        let mut cov = DMatrix::zeros(n * r, n * r);
        for (p, &off) in parts.iter().zip(&offsets) {
            for h in 0..n {
                for j in 0..n {
                    for u in 0..p.r {
                        for v in 0..p.r {
                            cov[(h * r + off + u, j * r + off + v)] = p.psi_entry(h, u, j, v);
                        }
                    }
                }
            }
        }
        Ok(Self { r, means, cov })
    }
}

/// `F̃` (factor entries replaced by their means) and where `β` sits.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveRegression {
    pub f_tilde: DVector<f64>,
    pub beta_slice: std::ops::Range<usize>,
}

/// Stacked linear-predictor moments `[f, Q]` for several series and/or
/// horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPredictorMoments {
    pub f: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl JointPredictorMoments {
    pub fn dim(&self) -> usize {
        self.f.len()
    }
}

/// `x' M y` summed in a fixed order.
fn bilinear(x: &[f64], m: &DMatrix<f64>, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, yj) in y.iter().enumerate() {
            row += m[(i, j)] * yj;
        }
        s += xi * row;
    }
    s
}

/// Covariance of `λ_h = F̃_h'θ_h` and `λ_j = F̃_j'θ_j` for one series:
/// `F̃_h' C F̃_j + a_β(h)' Ψ(h,j) a_β(j) + tr(C_β(h,j) Ψ(h,j)')`.
pub(crate) fn within_series_cov(
    fh: &[f64],
    fj: &[f64],
    c: &DMatrix<f64>,
    beta: &std::ops::Range<usize>,
    ah: &[f64],
    aj: &[f64],
    psi: &DMatrix<f64>,
) -> f64 {
    let mut q = bilinear(fh, c, fj);
    if !beta.is_empty() {
        q += bilinear(ah, psi, aj);
        let mut tr = 0.0;
        for (u, bu) in beta.clone().enumerate() {
            for (v, bv) in beta.clone().enumerate() {
                tr += c[(bu, bv)] * psi[(u, v)];
            }
        }
        q += tr;
    }
    q
}

fn effective(spec: &DglmSpec, predictors: &[f64], factors: &FactorMoments) -> Result<EffectiveRegression> {
    let r = spec.n_factors();
    if factors.mean.len() != r || factors.cov.nrows() != r || factors.cov.ncols() != r {
        return Err(Error::dim(format!(
            "model has {r} factors, belief has {}",
            factors.mean.len()
        )));
    }
    Ok(EffectiveRegression {
        f_tilde: spec.regression_vector(predictors, factors.mean.as_slice())?,
        beta_slice: spec.factor_slice().unwrap_or(0..0),
    })
}

/// Linear-predictor moments with factor uncertainty marginalized.
pub fn marginal_lf_moments(
    spec: &DglmSpec,
    prior: &GaussianMoments,
    predictors: &[f64],
    factors: &FactorMoments,
) -> Result<(LinearPredictorMoments, EffectiveRegression)> {
    if prior.dim() != spec.state_dim() {
        return Err(Error::dim("prior dimension differs from model"));
    }
    let eff = effective(spec, predictors, factors)?;
    let a = prior.mean.as_slice();
    let f = eff.f_tilde.dot(&prior.mean);
    let ab = &a[eff.beta_slice.clone()];
    let fs = eff.f_tilde.as_slice();
    let q = within_series_cov(fs, fs, &prior.cov, &eff.beta_slice, ab, ab, &factors.cov);
    Ok((LinearPredictorMoments::new(f, q.max(Q_FLOOR)), eff))
}

/// `a_βi' Ψ(h, j) a_βj`.
pub fn cross_covariance(
    belief: &LatentFactorBelief,
    a_beta_i: &DVector<f64>,
    a_beta_j: &DVector<f64>,
    h: usize,
    j: usize,
) -> Result<f64> {
    if a_beta_i.len() != belief.r() || a_beta_j.len() != belief.r() {
        return Err(Error::dim("β length differs from factor dimension"));
    }
    Ok(bilinear(
        a_beta_i.as_slice(),
        &belief.psi(h, j),
        a_beta_j.as_slice(),
    ))
}

/// LB update with `A = R F̃ / q`, `q` being the factor-marginalized
/// variance.
pub fn lf_lb_update(
    prior: &GaussianMoments,
    eff: &EffectiveRegression,
    prior_lam: LinearPredictorMoments,
    post_lam: LinearPredictorMoments,
) -> Result<GaussianMoments> {
    if eff.f_tilde.len() != prior.dim() {
        return Err(Error::dim("effective regression length differs from state"));
    }
    let rf = &prior.cov * &eff.f_tilde;
    Ok(lb_update_with_rf(prior, rf.as_slice(), prior_lam, post_lam))
}

/// VBLB step for a factor model. The one-step forecast uses the factor's
/// forecast moments; the state update uses `update` (e.g. the external
/// model's filtered moments for the same time).
pub fn lf_filter_step(
    spec: &DglmSpec,
    posterior: &GaussianMoments,
    predictors: &[f64],
    forecast: &FactorMoments,
    update: &FactorMoments,
    y: ObsSlot,
    table: Option<&VbTable>,
) -> Result<FilterStep> {
    let prior = crate::dglm::evolve(spec, posterior)?;
    let (lam, eff) = marginal_lf_moments(spec, &prior, predictors, forecast)?;
    let rf = &prior.cov * &eff.f_tilde;
    let mut step = update_from_prior(&spec.family, prior.clone(), rf.as_slice(), lam, ObsSlot {
        value: None,
        trials: y.trials,
    }, table)?;
    let Some(value) = y.value else {
        return Ok(step);
    };
    step.log_density = Some(step.forecast.ln_density(value));
    let (ulam, ueff) = if update == forecast {
        (lam, eff)
    } else {
        marginal_lf_moments(spec, &prior, predictors, update)?
    };
    let urf = &prior.cov * &ueff.f_tilde;
    let upd = update_from_prior(&spec.family, prior, urf.as_slice(), ulam, y, table)?;
    step.posterior = upd.posterior;
    step.post_lambda = upd.post_lambda;
    Ok(step)
}

/// One series' contribution to a joint (cross-series, multi-horizon)
/// predictor distribution.
#[derive(Debug, Clone, Copy)]
pub struct SeriesPath<'a> {
    pub spec: &'a DglmSpec,
    pub states: &'a StatePath,
    /// Known predictors at each path step.
    pub predictors: &'a [Vec<f64>],
    /// Belief coordinate of each of the series' factors.
    pub factor_index: &'a [usize],
    /// Belief horizon used at each path step.
    pub belief_horizons: &'a [usize],
}

struct Prepared {
    f_tilde: Vec<DVector<f64>>,
    a_beta: Vec<Vec<f64>>,
    beta: std::ops::Range<usize>,
}

fn prepare(s: &SeriesPath<'_>, belief: &LatentFactorBelief) -> Result<Prepared> {
    let k = s.states.horizons();
    if s.predictors.len() != k || s.belief_horizons.len() != k {
        return Err(Error::dim("predictors/horizons must match the state path length"));
    }
    if s.factor_index.len() != s.spec.n_factors() {
        return Err(Error::dim("factor index length differs from model factors"));
    }
    if s.factor_index.iter().any(|&u| u >= belief.r()) || s.belief_horizons.iter().any(|&h| h >= belief.horizons()) {
        return Err(Error::dim("series refers outside the belief"));
    }
    if s.states.dim() != s.spec.state_dim() {
        return Err(Error::dim("state path dimension differs from model"));
    }
    let beta = s.spec.factor_slice().unwrap_or(0..0);
    let mut f_tilde = Vec::with_capacity(k);
    let mut a_beta = Vec::with_capacity(k);
    for h in 0..k {
        let bh = s.belief_horizons[h];
        let means: Vec<f64> = s.factor_index.iter().map(|&u| belief.mean(bh)[u]).collect();
        f_tilde.push(s.spec.regression_vector(&s.predictors[h], &means)?);
        a_beta.push(s.states.means[h].as_slice()[beta.clone()].to_vec());
    }
    Ok(Prepared {
        f_tilde,
        a_beta,
        beta,
    })
}

fn local_psi(s: &SeriesPath<'_>, belief: &LatentFactorBelief, h: usize, j: usize) -> DMatrix<f64> {
    let r = s.factor_index.len();
    let (bh, bj) = (s.belief_horizons[h], s.belief_horizons[j]);
    DMatrix::from_fn(r, r, |u, v| {
        belief.psi_entry(bh, s.factor_index[u], bj, s.factor_index[v])
    })
}

/// Joint moments of all `(series, step)` linear predictors, ordered
/// series-major. Diagonal entries equal [`marginal_lf_moments`]; distinct
/// series interact only through the shared factors.
pub fn assemble_joint(
    series: &[SeriesPath<'_>],
    belief: &LatentFactorBelief,
) -> Result<JointPredictorMoments> {
    let prepared: Vec<Prepared> = series
        .iter()
        .map(|s| prepare(s, belief))
        .collect::<Result<_>>()?;
    let offsets: Vec<usize> = series
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.states.horizons();
            Some(o)
        })
        .collect();
    let n: usize = series.iter().map(|s| s.states.horizons()).sum();
    let mut f = DVector::zeros(n);
    let mut q = DMatrix::zeros(n, n);
    for (i, (s, p)) in series.iter().zip(&prepared).enumerate() {
        let k = s.states.horizons();
        for h in 0..k {
            f[offsets[i] + h] = p.f_tilde[h].dot(&s.states.means[h]);
            for j in 0..=h {
                let c = s.states.cross(h, j);
                let psi = local_psi(s, belief, h, j);
                let mut v = within_series_cov(
                    p.f_tilde[h].as_slice(),
                    p.f_tilde[j].as_slice(),
                    &c,
                    &p.beta,
                    &p.a_beta[h],
                    &p.a_beta[j],
                    &psi,
                );
                if h == j {
                    v = v.max(Q_FLOOR);
                }
                q[(offsets[i] + h, offsets[i] + j)] = v;
                q[(offsets[i] + j, offsets[i] + h)] = v;
            }
        }
        for (l, (t, pt)) in series.iter().zip(&prepared).enumerate().take(i) {
            if p.beta.is_empty() || pt.beta.is_empty() {
                continue;
            }
            for h in 0..k {
                for j in 0..t.states.horizons() {
                    let (bh, bj) = (s.belief_horizons[h], t.belief_horizons[j]);
                    let mut v = 0.0;
                    for (u, &gu) in s.factor_index.iter().enumerate() {
                        let mut row = 0.0;
                        for (w, &gw) in t.factor_index.iter().enumerate() {
                            row += belief.psi_entry(bh, gu, bj, gw) * pt.a_beta[j][w];
                        }
                        v += p.a_beta[h][u] * row;
                    }
                    q[(offsets[i] + h, offsets[l] + j)] = v;
                    q[(offsets[l] + j, offsets[i] + h)] = v;
                }
            }
        }
    }
    psd_repair(&mut q);
    Ok(JointPredictorMoments { f, q })
}

/// Regression for an origin-destination flow: intercept plus the origin's
/// outflow factor and the destination's inflow factor, taken as
/// independent.
pub fn network_regression(
    outflow: &LatentFactorBelief,
    inflow: &LatentFactorBelief,
) -> Result<(Vec<f64>, LatentFactorBelief)> {
    if outflow.r() != 1 || inflow.r() != 1 {
        return Err(Error::dim("network factors must be scalar"));
    }
    Ok((vec![1.0], LatentFactorBelief::independent_union(&[outflow, inflow])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dglm::{evolve, filter_step, lb_update, project_lambda, ModelBuilder};
    use crate::exp_family::FamilySpec;
    use crate::sampling::stream_rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn spec_with_factors(r: usize) -> DglmSpec {
        ModelBuilder::new(FamilySpec::poisson())
            .level(0.99)
            .factors(r, 0.99)
            .build()
            .unwrap()
    }

    fn fm(mean: &[f64], cov: &[f64]) -> FactorMoments {
        let r = mean.len();
        FactorMoments {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_row_slice(r, r, cov),
        }
    }

    #[test]
    fn scalar_product_moment_example() {
        // β only: state (β) with a=2, R=1; φ ~ [3, 4]
        let spec = ModelBuilder::new(FamilySpec::poisson()).factors(1, 1.0).build().unwrap();
        let prior = GaussianMoments::new(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (lam, eff) = marginal_lf_moments(&spec, &prior, &[], &fm(&[3.0], &[4.0])).unwrap();
        assert_eq!(lam.f, 6.0);
        assert_eq!(lam.q, 29.0);
        assert_eq!(eff.beta_slice, 0..1);
    }

    #[test]
    fn zero_psi_collapses_to_projection() {
        let spec = spec_with_factors(2);
        let prior = GaussianMoments::new(
            DVector::from_column_slice(&[0.5, 1.0, -0.3]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.5, 0.0, 0.1, 0.0, 0.3]),
        )
        .unwrap();
        let b = fm(&[0.7, -1.2], &[0.0; 4]);
        let (lam, eff) = marginal_lf_moments(&spec, &prior, &[], &b).unwrap();
        let direct = project_lambda(&eff.f_tilde, &prior).unwrap();
        assert_relative_eq!(lam.f, direct.f, epsilon = 1e-12);
        assert_relative_eq!(lam.q, direct.q, epsilon = 1e-12);
        let post = LinearPredictorMoments::new(lam.f + 0.3, lam.q * 0.6);
        let a = lf_lb_update(&prior, &eff, lam, post).unwrap();
        let b = lb_update(&prior, &eff.f_tilde, lam, post).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-12 && (a.cov - b.cov).amax() < 1e-12);
        assert_eq!(lf_lb_update(&prior, &eff, lam, lam).unwrap(), prior);
    }

    #[test]
    fn lf_update_shift_is_collinear_with_rf() {
        let spec = spec_with_factors(1);
        let prior = GaussianMoments::new(
            DVector::from_column_slice(&[0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.2]),
        )
        .unwrap();
        let (lam, eff) = marginal_lf_moments(&spec, &prior, &[], &fm(&[0.8], &[0.3])).unwrap();
        let out = lf_lb_update(&prior, &eff, lam, LinearPredictorMoments::new(lam.f + 1.0, lam.q)).unwrap();
        let shift = &out.mean - &prior.mean;
        let rf = &prior.cov * &eff.f_tilde;
        assert_relative_eq!(shift[0] * rf[1], shift[1] * rf[0], epsilon = 1e-14);
    }

    #[test]
    fn cross_covariance_examples() {
        let b = LatentFactorBelief::single(fm(&[0.0], &[3.0])).unwrap();
        let one = DVector::from_element(1, 1.0);
        let two = DVector::from_element(1, 2.0);
        assert_eq!(cross_covariance(&b, &one, &two, 0, 0).unwrap(), 6.0);
        let z = LatentFactorBelief::single(fm(&[0.0], &[0.0])).unwrap();
        assert_eq!(cross_covariance(&z, &one, &two, 0, 0).unwrap(), 0.0);
        let mut rng = stream_rng(4, 4);
        for _ in 0..20 {
            let l = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let bel = LatentFactorBelief::single(FactorMoments {
                mean: DVector::zeros(2),
                cov: &l * l.transpose(),
            })
            .unwrap();
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert_relative_eq!(
                cross_covariance(&bel, &x, &y, 0, 0).unwrap(),
                cross_covariance(&bel, &y, &x, 0, 0).unwrap(),
                epsilon = 1e-14
            );
        }
    }

    fn one_step_path(prior: &GaussianMoments) -> StatePath {
        StatePath {
            means: vec![prior.mean.clone()],
            cov: prior.cov.clone(),
        }
    }

    #[test]
    fn joint_single_series_equals_marginal() {
        let spec = spec_with_factors(2);
        let prior = GaussianMoments::new(
            DVector::from_column_slice(&[0.5, 1.0, -0.3]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.5, 0.0, 0.1, 0.0, 0.3]),
        )
        .unwrap();
        let b = fm(&[0.7, -1.2], &[0.4, 0.1, 0.1, 0.2]);
        let belief = LatentFactorBelief::single(b.clone()).unwrap();
        let sp = one_step_path(&prior);
        let preds = vec![vec![]];
        let joint = assemble_joint(
            &[SeriesPath {
                spec: &spec,
                states: &sp,
                predictors: &preds,
                factor_index: &[0, 1],
                belief_horizons: &[0],
            }],
            &belief,
        )
        .unwrap();
        let (lam, _) = marginal_lf_moments(&spec, &prior, &[], &b).unwrap();
        assert_eq!(joint.f[0], lam.f);
        assert_eq!(joint.q[(0, 0)], lam.q);
    }

    #[test]
    fn joint_without_factor_variance_is_block_diagonal() {
        let spec = spec_with_factors(1);
        let prior = GaussianMoments::new(
            DVector::from_column_slice(&[0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.2]),
        )
        .unwrap();
        let belief = LatentFactorBelief::single(fm(&[0.8], &[0.0])).unwrap();
        let sp = one_step_path(&prior);
        let preds = vec![vec![]];
        let s = SeriesPath {
            spec: &spec,
            states: &sp,
            predictors: &preds,
            factor_index: &[0],
            belief_horizons: &[0],
        };
        let joint = assemble_joint(&[s, s], &belief).unwrap();
        assert_eq!(joint.q[(0, 1)], 0.0);
        assert_eq!(joint.q[(0, 0)], joint.q[(1, 1)]);
    }

    #[test]
    fn network_pairs_share_origin_covariance() {
        let out = LatentFactorBelief::single(fm(&[0.2], &[0.5])).unwrap();
        let inn = LatentFactorBelief::single(fm(&[-0.1], &[0.3])).unwrap();
        let (h, belief) = network_regression(&out, &inn).unwrap();
        assert_eq!(h, vec![1.0]);
        assert_eq!(belief.r(), 2);
        assert_eq!(belief.psi(0, 0), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]));
        // Two flows from the same origin into different destinations: only
        // the outflow block is shared.
        let spec = ModelBuilder::new(FamilySpec::poisson())
            .level(0.99)
            .factors(2, 0.99)
            .build()
            .unwrap();
        let prior = GaussianMoments::new(
            DVector::from_column_slice(&[1.0, 0.9, 1.1]),
            DMatrix::identity(3, 3) * 0.05,
        )
        .unwrap();
        let other_in = LatentFactorBelief::single(fm(&[0.0], &[0.7])).unwrap();
        let global = LatentFactorBelief::independent_union(&[&out, &inn, &other_in]).unwrap();
        let sp = one_step_path(&prior);
        let preds = vec![vec![]];
        let s1 = SeriesPath {
            spec: &spec,
            states: &sp,
            predictors: &preds,
            factor_index: &[0, 1],
            belief_horizons: &[0],
        };
        let s2 = SeriesPath {
            factor_index: &[0, 2],
            ..s1
        };
        let joint = assemble_joint(&[s1, s2], &global).unwrap();
        let expected = cross_covariance(
            &out,
            &DVector::from_element(1, 0.9),
            &DVector::from_element(1, 0.9),
            0,
            0,
        )
        .unwrap();
        assert_relative_eq!(joint.q[(0, 1)], expected, epsilon = 1e-15);
        let bad = LatentFactorBelief::independent_union(&[&out, &inn]).unwrap();
        assert!(network_regression(&bad, &inn).is_err());
    }

    #[test]
    fn zero_variance_factor_is_plain_dglm_with_offset() {
        // Known factor value enters as a fixed regressor.
        let spec = spec_with_factors(1);
        let post = GaussianMoments::new(
            DVector::from_column_slice(&[1.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.1]),
        )
        .unwrap();
        let b = fm(&[1.3], &[0.0]);
        let step = lf_filter_step(&spec, &post, &[], &b, &b, ObsSlot::observed(4.0), None).unwrap();
        let f = spec.regression_vector(&[], &[1.3]).unwrap();
        let plain = filter_step(&spec, &post, &f, ObsSlot::observed(4.0), None).unwrap();
        assert!((step.posterior.mean - plain.posterior.mean).amax() < 1e-12);
        assert!((step.posterior.cov - plain.posterior.cov).amax() < 1e-12);
        assert!((step.log_density.unwrap() - plain.log_density.unwrap()).abs() < 1e-12);
        let _ = evolve(&spec, &post).unwrap();
    }

    #[test]
    fn belief_validation_and_views() {
        assert!(LatentFactorBelief::new(
            vec![DVector::zeros(1)],
            DMatrix::from_element(1, 1, -1.0)
        )
        .is_err());
        assert!(LatentFactorBelief::new(vec![DVector::zeros(1)], DMatrix::zeros(2, 2)).is_err());
        let cov = DMatrix::from_row_slice(4, 4, &[
            2.0, 0.5, 1.0, 0.2, //
            0.5, 1.0, 0.3, 0.4, //
            1.0, 0.3, 3.0, 0.6, //
            0.2, 0.4, 0.6, 2.0,
        ]);
        let b = LatentFactorBelief::new(
            vec![DVector::from_column_slice(&[1.0, 2.0]), DVector::from_column_slice(&[3.0, 4.0])],
            cov,
        )
        .unwrap();
        assert_eq!(b.psi(0, 1), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 0.4]));
        let s = b.select(&[1]).unwrap();
        assert_eq!(s.stacked_cov(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]));
        let h = b.horizon_range(1..2).unwrap();
        assert_eq!(h.mean(0).as_slice(), &[3.0, 4.0]);
        assert_eq!(h.psi(0, 0), DMatrix::from_row_slice(2, 2, &[3.0, 0.6, 0.6, 2.0]));
    }

    fn random_psd(rng: &mut crate::sampling::StreamRng, n: usize, scale: f64) -> DMatrix<f64> {
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale);
        &l * l.transpose()
    }

    fn draw(rng: &mut crate::sampling::StreamRng, mean: &DVector<f64>, chol: &DMatrix<f64>) -> DVector<f64> {
        let z = DVector::from_fn(mean.len(), |_, _| crate::sampling::std_normal(rng));
        mean + chol * z
    }

    #[test]
    fn joint_paths_match_monte_carlo() {
        // Two series with regressions on different factor coordinates, two
        // horizons, a factor belief with cross-horizon covariance.
        let mut rng = stream_rng(21, 0);
        let r = 2;
        let k = 2;
        let spec_a = ModelBuilder::new(FamilySpec::poisson())
            .level(0.95)
            .regression(1, 0.99)
            .factors(2, 0.98)
            .build()
            .unwrap();
        let spec_b = ModelBuilder::new(FamilySpec::poisson())
            .trend(0.95)
            .factors(1, 0.98)
            .build()
            .unwrap();
        let belief = LatentFactorBelief::new(
            (0..k).map(|_| DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0))).collect(),
            random_psd(&mut rng, k * r, 0.6),
        )
        .unwrap();
        let mk_post = |rng: &mut crate::sampling::StreamRng, d: usize| {
            GaussianMoments::new(
                DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                random_psd(rng, d, 0.5),
            )
            .unwrap()
        };
        let post_a = mk_post(&mut rng, 4);
        let post_b = mk_post(&mut rng, 3);
        let path_a = crate::dglm::state_path(&spec_a, &post_a, k).unwrap();
        let path_b = crate::dglm::state_path(&spec_b, &post_b, k).unwrap();
        let preds_a = vec![vec![0.7], vec![-0.4]];
        let preds_b = vec![vec![], vec![]];
        let series = [
            SeriesPath {
                spec: &spec_a,
                states: &path_a,
                predictors: &preds_a,
                factor_index: &[0, 1],
                belief_horizons: &[0, 1],
            },
            SeriesPath {
                spec: &spec_b,
                states: &path_b,
                predictors: &preds_b,
                factor_index: &[1],
                belief_horizons: &[0, 1],
            },
        ];
        let joint = assemble_joint(&series, &belief).unwrap();

        let stacked_mean = |m: &[DVector<f64>]| {
            DVector::from_iterator(m.iter().map(|v| v.len()).sum(), m.iter().flat_map(|v| v.iter().copied()))
        };
        let chol_phi = crate::linalg::robust_cholesky(belief.stacked_cov()).unwrap();
        let chol_a = crate::linalg::robust_cholesky(&path_a.cov).unwrap();
        let chol_b = crate::linalg::robust_cholesky(&path_b.cov).unwrap();
        let (mphi, ma, mb) = (
            stacked_mean(&(0..k).map(|h| belief.mean(h).clone()).collect::<Vec<_>>()),
            stacked_mean(&path_a.means),
            stacked_mean(&path_b.means),
        );
        let n = 200_000;
        let p = joint.dim();
        let mut draws = DMatrix::zeros(n, p);
        for s in 0..n {
            let phi = draw(&mut rng, &mphi, &chol_phi);
            let ta = draw(&mut rng, &ma, &chol_a);
            let tb = draw(&mut rng, &mb, &chol_b);
            for h in 0..k {
                let fa = spec_a.regression_vector(&preds_a[h], &[phi[h * r], phi[h * r + 1]]).unwrap();
                let fb = spec_b.regression_vector(&preds_b[h], &[phi[h * r + 1]]).unwrap();
                draws[(s, h)] = fa.dot(&ta.rows(h * 4, 4));
                draws[(s, k + h)] = fb.dot(&tb.rows(h * 3, 3));
            }
        }
        for i in 0..p {
            let xi = draws.column(i);
            let mi = xi.mean();
            let sd = xi.iter().map(|v| (v - mi).powi(2)).sum::<f64>() / n as f64;
            assert!((mi - joint.f[i]).abs() < 5.0 * (sd / n as f64).sqrt(), "mean {i}");
            for j in 0..=i {
                let xj = draws.column(j);
                let mj = xj.mean();
                let prods: Vec<f64> = xi.iter().zip(xj.iter()).map(|(a, b)| (a - mi) * (b - mj)).collect();
                let c = prods.iter().sum::<f64>() / n as f64;
                let se = (prods.iter().map(|v| (v - c).powi(2)).sum::<f64>() / n as f64 / n as f64).sqrt();
                assert!((c - joint.q[(i, j)]).abs() < 5.0 * se, "cov ({i},{j}): {c} vs {}", joint.q[(i, j)]);
            }
        }
    }
}
