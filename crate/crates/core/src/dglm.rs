//! Univariate DGLM machinery: discount evolution, projection onto the
//! linear predictor, the VBLB filter step and recursive path simulation.
//!
//! The evolution matrix is stored with its sparse row structure alongside
//! the dense form; block-diagonal trend/seasonal models then evolve in
//! O(d^2) rather than O(d^3), which matters for per-path simulation.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exp_family::{
    conjugate_moments, conjugate_update, sample_mu, sample_outcome, vb_solve, ConjugateParams,
    Family, FamilySpec, LinearPredictorMoments, Observation,
};
use crate::linalg::{clip_eigenvalues, psd_within_tol_slice, GaussianMoments};
use crate::paths::{run_chunked, ForecastPaths};
use crate::predictive::{one_step_predictive, PredictiveDist};
use crate::vb_table::VbTable;

/// Floor applied to the projected linear-predictor variance.
pub const Q_FLOOR: f64 = 1e-12;

/// What multiplies a state component in the regression vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regressor {
    Constant(f64),
    /// Known predictor column `i`.
    Predictor(usize),
    /// Latent factor coordinate `i`.
    Factor(usize),
}

/// Contiguous state block sharing one discount factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountBlock {
    pub start: usize,
    pub len: usize,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DglmSpec {
    pub family: FamilySpec,
    evolution: DMatrix<f64>,
    blocks: Vec<DiscountBlock>,
    regressors: Vec<Regressor>,
    g_rows: Vec<Vec<(usize, f64)>>,
    block_of: Vec<usize>,
    inflation: Vec<f64>,
    factor_slice: Option<Range<usize>>,
    n_predictors: usize,
}

impl DglmSpec {
    pub fn new(
        family: FamilySpec,
        evolution: DMatrix<f64>,
        blocks: Vec<DiscountBlock>,
        regressors: Vec<Regressor>,
    ) -> Result<Self> {
        let d = evolution.nrows();
        if d == 0 || evolution.ncols() != d {
            return Err(Error::dim(format!(
                "evolution matrix must be square and nonempty, got {}x{}",
                d,
                evolution.ncols()
            )));
        }
        if evolution.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite evolution matrix".into()));
        }
        if regressors.len() != d {
            return Err(Error::dim(format!(
                "{} regressors for state dimension {d}",
                regressors.len()
            )));
        }
        let mut block_of = vec![usize::MAX; d];
        let mut next = 0;
        for (b, blk) in blocks.iter().enumerate() {
            if blk.start != next || blk.len == 0 {
                return Err(Error::InvalidParams(
                    "discount blocks must partition the state in order".into(),
                ));
            }
            if !(blk.discount > 0.0 && blk.discount <= 1.0) {
                return Err(Error::InvalidParams(format!(
                    "discount {} outside (0, 1]",
                    blk.discount
                )));
            }
            for slot in &mut block_of[blk.start..(blk.start + blk.len).min(d)] {
                *slot = b;
            }
            next += blk.len;
        }
        if next != d {
            return Err(Error::InvalidParams(
                "discount blocks must partition the state in order".into(),
            ));
        }
        let factor_pos: Vec<usize> = regressors
            .iter()
            .enumerate()
            .filter_map(|(i, r)| matches!(r, Regressor::Factor(_)).then_some(i))
            .collect();
        let factor_slice = match (factor_pos.first(), factor_pos.last()) {
            (Some(&lo), Some(&hi)) => {
                let ok = regressors[lo..=hi]
                    .iter()
                    .enumerate()
                    .all(|(k, r)| *r == Regressor::Factor(k));
                if !ok {
                    return Err(Error::InvalidParams(
                        "factor regressors must be contiguous and numbered from 0".into(),
                    ));
                }
                Some(lo..hi + 1)
            }
            _ => None,
        };
        let n_predictors = regressors
            .iter()
            .filter_map(|r| match r {
                Regressor::Predictor(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let g_rows = (0..d)
            .map(|i| {
                (0..d)
                    .filter(|&j| evolution[(i, j)] != 0.0)
                    .map(|j| (j, evolution[(i, j)]))
                    .collect()
            })
            .collect();
        let inflation = blocks
            .iter()
            .map(|b| (1.0 - b.discount) / b.discount)
            .collect();
        Ok(Self {
            family,
            evolution,
            blocks,
            regressors,
            g_rows,
            block_of,
            inflation,
            factor_slice,
            n_predictors,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.evolution.nrows()
    }

    pub fn evolution(&self) -> &DMatrix<f64> {
        &self.evolution
    }

    pub fn blocks(&self) -> &[DiscountBlock] {
        &self.blocks
    }

    pub fn regressors(&self) -> &[Regressor] {
        &self.regressors
    }

    /// State indices multiplying the latent factors (the β subvector).
    pub fn factor_slice(&self) -> Option<Range<usize>> {
        self.factor_slice.clone()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_slice.as_ref().map_or(0, |r| r.len())
    }

    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    /// Regression vector for given predictor values and factor values (or
    /// factor means, giving the effective regression vector).
    pub fn regression_vector(&self, predictors: &[f64], factors: &[f64]) -> Result<DVector<f64>> {
        if predictors.len() < self.n_predictors {
            return Err(Error::dim(format!(
                "model needs {} predictors, got {}",
                self.n_predictors,
                predictors.len()
            )));
        }
        if factors.len() != self.n_factors() {
            return Err(Error::dim(format!(
                "model has {} factors, got {}",
                self.n_factors(),
                factors.len()
            )));
        }
        Ok(DVector::from_iterator(
            self.state_dim(),
            self.regressors.iter().map(|r| match *r {
                Regressor::Constant(c) => c,
                Regressor::Predictor(i) => predictors[i],
                Regressor::Factor(i) => factors[i],
            }),
        ))
    }

    /// `a = G m`, `R = G C G' + W` with blockwise discount `W`, on
    /// column-major slices. `t` is `d*d` scratch.
    pub(crate) fn evolve_raw(&self, m: &[f64], c: &[f64], a: &mut [f64], r: &mut [f64], t: &mut [f64]) {
        for (i, row) in self.g_rows.iter().enumerate() {
            a[i] = row.iter().map(|&(j, g)| g * m[j]).sum();
        }
        self.evolve_cov_raw(c, r, t);
    }

    pub(crate) fn evolve_cov_raw(&self, c: &[f64], r: &mut [f64], t: &mut [f64]) {
        let d = self.state_dim();
        // t = G C
        for l in 0..d {
            for (i, row) in self.g_rows.iter().enumerate() {
                t[i + l * d] = row.iter().map(|&(j, g)| g * c[j + l * d]).sum();
            }
        }
        // r = t G', lower triangle, then discount and mirror
        for (l, row) in self.g_rows.iter().enumerate() {
            for i in l..d {
                let p: f64 = row.iter().map(|&(j, g)| g * t[i + j * d]).sum();
                let v = if self.block_of[i] == self.block_of[l] {
                    p + p * self.inflation[self.block_of[i]]
                } else {
                    p
                };
                r[i + l * d] = v;
            }
        }
        // t G' is symmetric only up to rounding; average the two products.
        for l in 0..d {
            for i in (l + 1)..d {
                let p: f64 = self.g_rows[i].iter().map(|&(j, g)| g * t[l + j * d]).sum();
                let v = if self.block_of[i] == self.block_of[l] {
                    p + p * self.inflation[self.block_of[i]]
                } else {
                    p
                };
                let s = 0.5 * (r[i + l * d] + v);
                r[i + l * d] = s;
                r[l + i * d] = s;
            }
        }
    }

    fn check_dim(&self, m: &GaussianMoments) -> Result<()> {
        if m.dim() != self.state_dim() {
            return Err(Error::dim(format!(
                "state has dimension {}, model expects {}",
                m.dim(),
                self.state_dim()
            )));
        }
        Ok(())
    }
}

/// Builds block-diagonal DGLMs from standard components, one discount
/// block per component.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    family: FamilySpec,
    blocks: Vec<(DMatrix<f64>, Vec<Regressor>, f64)>,
    next_predictor: usize,
    n_factors: usize,
}

impl ModelBuilder {
    pub fn new(family: FamilySpec) -> Self {
        Self {
            family,
            blocks: Vec::new(),
            next_predictor: 0,
            n_factors: 0,
        }
    }

    pub fn level(mut self, discount: f64) -> Self {
        self.blocks.push((
            DMatrix::from_element(1, 1, 1.0),
            vec![Regressor::Constant(1.0)],
            discount,
        ));
        self
    }

    /// Local linear growth: level and slope.
    pub fn trend(mut self, discount: f64) -> Self {
        self.blocks.push((
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            vec![Regressor::Constant(1.0), Regressor::Constant(0.0)],
            discount,
        ));
        self
    }

    /// Fourier seasonal with the given harmonics of `period`.
    pub fn seasonal(mut self, period: f64, harmonics: &[usize], discount: f64) -> Self {
        let mut dim = 0;
        let mut parts = Vec::new();
        for &h in harmonics {
            if 2.0 * h as f64 == period {
                parts.push(DMatrix::from_element(1, 1, -1.0));
                dim += 1;
            } else {
                let w = 2.0 * std::f64::consts::PI * h as f64 / period;
                let (s, c) = w.sin_cos();
                parts.push(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]));
                dim += 2;
            }
        }
        let mut g = DMatrix::zeros(dim, dim);
        let mut f = Vec::with_capacity(dim);
        let mut at = 0;
        for p in parts {
            let n = p.nrows();
            g.view_mut((at, at), (n, n)).copy_from(&p);
            f.push(Regressor::Constant(1.0));
            if n == 2 {
                f.push(Regressor::Constant(0.0));
            }
            at += n;
        }
        self.blocks.push((g, f, discount));
        self
    }

    /// `n` static-evolution coefficients on the next `n` predictor columns.
    pub fn regression(mut self, n: usize, discount: f64) -> Self {
        let f = (0..n).map(|k| Regressor::Predictor(self.next_predictor + k)).collect();
        self.next_predictor += n;
        self.blocks.push((DMatrix::identity(n, n), f, discount));
        self
    }

    /// `r` coefficients on latent factors.
    pub fn factors(mut self, r: usize, discount: f64) -> Self {
        let f = (0..r).map(|k| Regressor::Factor(self.n_factors + k)).collect();
        self.n_factors += r;
        self.blocks.push((DMatrix::identity(r, r), f, discount));
        self
    }

    pub fn build(self) -> Result<DglmSpec> {
        let d: usize = self.blocks.iter().map(|b| b.0.nrows()).sum();
        let mut g = DMatrix::zeros(d, d);
        let mut regs = Vec::with_capacity(d);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for (gb, f, discount) in self.blocks {
            let n = gb.nrows();
            g.view_mut((at, at), (n, n)).copy_from(&gb);
            regs.extend(f);
            blocks.push(DiscountBlock {
                start: at,
                len: n,
                discount,
            });
            at += n;
        }
        DglmSpec::new(self.family, g, blocks, regs)
    }
}

/// Prior moments for time `t` from the posterior at `t - 1`.
pub fn evolve(spec: &DglmSpec, posterior: &GaussianMoments) -> Result<GaussianMoments> {
    spec.check_dim(posterior)?;
    let d = spec.state_dim();
    let mut a = DVector::zeros(d);
    let mut r = DMatrix::zeros(d, d);
    let mut t = vec![0.0; d * d];
    spec.evolve_raw(
        posterior.mean.as_slice(),
        posterior.cov.as_slice(),
        a.as_mut_slice(),
        r.as_mut_slice(),
        &mut t,
    );
    Ok(GaussianMoments { mean: a, cov: r })
}

fn project_raw(f_vec: &[f64], a: &[f64], r: &[f64], rf: &mut [f64]) -> LinearPredictorMoments {
    let d = a.len();
    let mut f = 0.0;
    for j in 0..d {
        f += f_vec[j] * a[j];
    }
    rf.iter_mut().for_each(|v| *v = 0.0);
    for (j, &fj) in f_vec.iter().enumerate() {
        if fj != 0.0 {
            for i in 0..d {
                rf[i] += r[i + j * d] * fj;
            }
        }
    }
    let q: f64 = f_vec.iter().zip(rf.iter()).map(|(x, y)| x * y).sum();
    LinearPredictorMoments::new(f, q.max(Q_FLOOR))
}

/// `f = F'a`, `q = F'RF` (floored at `Q_FLOOR`).
pub fn project_lambda(f_vec: &DVector<f64>, prior: &GaussianMoments) -> Result<LinearPredictorMoments> {
    if f_vec.len() != prior.dim() {
        return Err(Error::dim(format!(
            "regression vector has length {}, state {}",
            f_vec.len(),
            prior.dim()
        )));
    }
    let mut rf = vec![0.0; prior.dim()];
    Ok(project_raw(
        f_vec.as_slice(),
        prior.mean.as_slice(),
        prior.cov.as_slice(),
        &mut rf,
    ))
}

/// Linear Bayes update given `rf = R F`; writes `m`, `C` and returns
/// whether the covariance needed eigenvalue repair.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lb_update_raw(
    a: &[f64],
    r: &[f64],
    rf: &[f64],
    prior: LinearPredictorMoments,
    post: LinearPredictorMoments,
    m: &mut [f64],
    c: &mut [f64],
    adapt: &mut [f64],
    scratch: &mut Vec<f64>,
) -> bool {
    let d = a.len();
    let shift = post.f - prior.f;
    let shrink = prior.q - post.q;
    for i in 0..d {
        adapt[i] = rf[i] / prior.q;
        m[i] = a[i] + adapt[i] * shift;
    }
    for j in 0..d {
        for i in 0..d {
            c[i + j * d] = r[i + j * d] - adapt[i] * adapt[j] * shrink;
        }
    }
    if psd_within_tol_slice(c, d, scratch) {
        return false;
    }
    let fixed = clip_eigenvalues(&DMatrix::from_column_slice(d, d, c));
    c.copy_from_slice(fixed.as_slice());
    true
}

/// `m = a + A(g - f)`, `C = R - AA'(q - p)` with `A = RF/q`, followed by
/// PSD repair.
pub fn lb_update(
    prior: &GaussianMoments,
    f_vec: &DVector<f64>,
    prior_lam: LinearPredictorMoments,
    post_lam: LinearPredictorMoments,
) -> Result<GaussianMoments> {
    let d = prior.dim();
    if f_vec.len() != d {
        return Err(Error::dim(format!(
            "regression vector has length {}, state {d}",
            f_vec.len()
        )));
    }
    let mut rf = vec![0.0; d];
    project_raw(f_vec.as_slice(), prior.mean.as_slice(), prior.cov.as_slice(), &mut rf);
    Ok(lb_update_with_rf(prior, &rf, prior_lam, post_lam))
}

pub(crate) fn lb_update_with_rf(
    prior: &GaussianMoments,
    rf: &[f64],
    prior_lam: LinearPredictorMoments,
    post_lam: LinearPredictorMoments,
) -> GaussianMoments {
    let d = prior.dim();
    let mut m = DVector::zeros(d);
    let mut c = DMatrix::zeros(d, d);
    let mut adapt = vec![0.0; d];
    let mut scratch = Vec::new();
    lb_update_raw(
        prior.mean.as_slice(),
        prior.cov.as_slice(),
        rf,
        prior_lam,
        post_lam,
        m.as_mut_slice(),
        c.as_mut_slice(),
        &mut adapt,
        &mut scratch,
    );
    GaussianMoments { mean: m, cov: c }
}

/// VB step, through the table when one for this family is supplied.
pub fn vb_params(
    family: &FamilySpec,
    m: LinearPredictorMoments,
    table: Option<&VbTable>,
) -> Result<ConjugateParams> {
    match table {
        Some(t) if t.family() == family => t.lookup(m),
        _ => vb_solve(family, m),
    }
}

/// Everything one VBLB cycle produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// `[a, R]`.
    pub prior: GaussianMoments,
    pub prior_lambda: LinearPredictorMoments,
    pub prior_params: ConjugateParams,
    /// One-step forecast made before seeing `y`.
    pub forecast: PredictiveDist,
    /// `[m, C]`; equals the prior when the observation is missing.
    pub posterior: GaussianMoments,
    pub post_lambda: Option<LinearPredictorMoments>,
    pub log_density: Option<f64>,
}

/// Observation at one time point; `value = None` is a missing observation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObsSlot {
    pub value: Option<f64>,
    pub trials: Option<u64>,
}

impl ObsSlot {
    pub fn observed(value: f64) -> Self {
        Self {
            value: Some(value),
            trials: None,
        }
    }

    pub fn missing() -> Self {
        Self::default()
    }
}

/// One VBLB cycle on an already-evolved prior and a given `(f, q)`.
pub(crate) fn update_from_prior(
    family: &FamilySpec,
    prior: GaussianMoments,
    rf: &[f64],
    prior_lambda: LinearPredictorMoments,
    y: ObsSlot,
    table: Option<&VbTable>,
) -> Result<FilterStep> {
    let prior_params = vb_params(family, prior_lambda, table)?;
    let forecast = one_step_predictive(family, &prior_params, y.trials)?;
    let Some(value) = y.value else {
        return Ok(FilterStep {
            posterior: prior.clone(),
            prior,
            prior_lambda,
            prior_params,
            forecast,
            post_lambda: None,
            log_density: None,
        });
    };
    let obs = Observation {
        value,
        trials: y.trials,
    };
    let post_params = conjugate_update(family, &prior_params, &obs)?;
    let post_lambda = conjugate_moments(family, &post_params)?;
    let posterior = lb_update_with_rf(&prior, rf, prior_lambda, post_lambda);
    Ok(FilterStep {
        log_density: Some(forecast.ln_density(value)),
        prior,
        prior_lambda,
        prior_params,
        forecast,
        posterior,
        post_lambda: Some(post_lambda),
    })
}

/// evolve → project → VB → predictive → conjugate update → LB update.
pub fn filter_step(
    spec: &DglmSpec,
    posterior: &GaussianMoments,
    f_vec: &DVector<f64>,
    y: ObsSlot,
    table: Option<&VbTable>,
) -> Result<FilterStep> {
    let prior = evolve(spec, posterior)?;
    if f_vec.len() != prior.dim() {
        return Err(Error::dim(format!(
            "regression vector has length {}, state {}",
            f_vec.len(),
            prior.dim()
        )));
    }
    let mut rf = vec![0.0; prior.dim()];
    let lam = project_raw(f_vec.as_slice(), prior.mean.as_slice(), prior.cov.as_slice(), &mut rf);
    update_from_prior(&spec.family, prior, &rf, lam, y, table)
}

/// Joint state moments along horizons `1..=k` from a time-`t` posterior:
/// `a(h) = G a(h-1)`, `R(h) = G R(h-1) G' + W(h)` with the discount rule
/// applied to the propagated covariance, and `C(h, j) = G^(h-j) R(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub means: Vec<DVector<f64>>,
    /// `(k d) x (k d)`; block `(h, j)` (0-based) is `C(h+1, j+1)`.
    pub cov: DMatrix<f64>,
}

impl StatePath {
    pub fn horizons(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Cross-covariance block between 0-based steps `h` and `j`.
    pub fn cross(&self, h: usize, j: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.cov.view((h * d, j * d), (d, d)).into_owned()
    }

    pub fn marginal(&self, h: usize) -> GaussianMoments {
        GaussianMoments {
            mean: self.means[h].clone(),
            cov: self.cross(h, h),
        }
    }
}

pub fn state_path(spec: &DglmSpec, posterior: &GaussianMoments, k: usize) -> Result<StatePath> {
    spec.check_dim(posterior)?;
    if k == 0 {
        return Err(Error::Precondition("need at least one horizon".into()));
    }
    let d = spec.state_dim();
    let g = spec.evolution();
    let mut means = Vec::with_capacity(k);
    let mut cov = DMatrix::zeros(k * d, k * d);
    let mut prev_m = posterior.mean.clone();
    let mut prev_r = posterior.cov.clone();
    let mut t = vec![0.0; d * d];
    for h in 0..k {
        let mut a = DVector::zeros(d);
        let mut r = DMatrix::zeros(d, d);
        spec.evolve_raw(prev_m.as_slice(), prev_r.as_slice(), a.as_mut_slice(), r.as_mut_slice(), &mut t);
        cov.view_mut((h * d, h * d), (d, d)).copy_from(&r);
        for j in 0..h {
            let c = g * cov.view(((h - 1) * d, j * d), (d, d));
            cov.view_mut((h * d, j * d), (d, d)).copy_from(&c);
            cov.view_mut((j * d, h * d), (d, d)).copy_from(&c.transpose());
        }
        means.push(a.clone());
        prev_m = a;
        prev_r = r;
    }
    Ok(StatePath { means, cov })
}

/// Options for [`recursive_path_forecast`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RecursiveOptions<'a> {
    pub table: Option<&'a VbTable>,
    /// Future binomial trial counts, one per horizon.
    pub trials: Option<&'a [u64]>,
}

/// Multi-step forecasting by direct simulation: each path samples an
/// outcome, updates on it as if observed, evolves, and repeats.
pub fn recursive_path_forecast(
    spec: &DglmSpec,
    posterior: &GaussianMoments,
    f_seq: &[DVector<f64>],
    samples: usize,
    seed: u64,
    opts: RecursiveOptions<'_>,
) -> Result<ForecastPaths> {
    let k = f_seq.len();
    let d = spec.state_dim();
    if k == 0 || samples == 0 {
        return Err(Error::Precondition(
            "need at least one horizon and one sample".into(),
        ));
    }
    spec.check_dim(posterior)?;
    if f_seq.iter().any(|f| f.len() != d) {
        return Err(Error::dim("regression vector length differs from state dimension"));
    }
    if spec.family.family == Family::Binomial && opts.trials.map(|t| t.len()) != Some(k) {
        return Err(Error::Precondition(
            "binomial path forecasts need one trial count per horizon".into(),
        ));
    }
    let family = spec.family;
    let (ys, _) = run_chunked(samples, k, 0, seed, |rng, rows, out, _| {
        let mut m = vec![0.0; d];
        let mut c = vec![0.0; d * d];
        let mut a = vec![0.0; d];
        let mut r = vec![0.0; d * d];
        let mut t = vec![0.0; d * d];
        let mut rf = vec![0.0; d];
        let mut adapt = vec![0.0; d];
        let mut scratch = Vec::with_capacity(d * d);
        for row in 0..rows {
            m.copy_from_slice(posterior.mean.as_slice());
            c.copy_from_slice(posterior.cov.as_slice());
            for h in 0..k {
                spec.evolve_raw(&m, &c, &mut a, &mut r, &mut t);
                let lam = project_raw(f_seq[h].as_slice(), &a, &r, &mut rf);
                let params = vb_params(&family, lam, opts.table)?;
                let trials = opts.trials.map(|t| t[h]);
                let mu = sample_mu(rng, &params);
                let y = sample_outcome(rng, &family, mu, trials);
                out[row * k + h] = y;
                if h + 1 < k {
                    let obs = Observation { value: y, trials };
                    let post = conjugate_update(&family, &params, &obs)?;
                    let post_lam = conjugate_moments(&family, &post)?;
                    lb_update_raw(&a, &r, &rf, lam, post_lam, &mut m, &mut c, &mut adapt, &mut scratch);
                }
            }
        }
        Ok(())
    })?;
    Ok(ForecastPaths {
        samples: ys,
        lambda_draws: None,
        seed,
    })
}
