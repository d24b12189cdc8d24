//! Path forecasting through a copula over conjugate margins.
//!
//! The joint law of the linear predictors `λ ~ [f, Q]` (over horizons and/or
//! series) is taken as Gaussian or Student-t; each coordinate is pushed
//! through its own cdf to a uniform and then through the conjugate quantile
//! `H_j^-` to the natural parameter, so the margins are exactly the
//! conjugate ones while the dependence comes from `Q`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dglm::{recursive_path_forecast, state_path, vb_params, DglmSpec, RecursiveOptions, StatePath, Q_FLOOR};
use crate::error::{Error, Result};
use crate::exp_family::{sample_outcome, ConjugateParams, Family, FamilySpec, LinearPredictorMoments};
use crate::latent_factor::{within_series_cov, JointPredictorMoments, LatentFactorBelief};
use crate::linalg::{psd_repair, robust_cholesky, GaussianMoments};
use crate::metrics::ks_two_sample;
use crate::paths::{run_chunked, ForecastPaths};
use crate::sampling::{self, std_normal};
use crate::special::{beta_quantile, beta_reg, gamma_p, gamma_q, gamma_quantile, ln_beta, ln_gamma, norm_cdf, norm_ln_pdf, norm_quantile};
use crate::vb_table::VbTable;

/// Uniforms are clamped to `[U_CLAMP, 1 - U_CLAMP]` before inversion.
pub const U_CLAMP: f64 = 1e-12;

/// Below this many samples margins are inverted exactly; above it each
/// margin first tabulates its quantile function as a spline in the normal
/// score.
pub const SPLINE_MIN_SAMPLES: usize = 1024;

const SPLINE_NODES: usize = 513;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CopulaSpec {
    #[default]
    Gaussian,
    StudentT { dof: f64 },
}

impl CopulaSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CopulaSpec::Gaussian => Ok(()),
            CopulaSpec::StudentT { dof } if dof > 2.0 && dof.is_finite() => Ok(()),
            CopulaSpec::StudentT { dof } => Err(Error::InvalidParams(format!(
                "student-t copula needs dof > 2, got {dof}"
            ))),
        }
    }
}

/// Joint state moments along a path plus the assembled `(f, Q)` of the
/// linear predictors at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMoments {
    pub states: StatePath,
    pub joint: JointPredictorMoments,
}

impl PathMoments {
    pub fn horizons(&self) -> usize {
        self.states.horizons()
    }

    /// `R(h)` for 1-based horizon `h`.
    pub fn state_cov(&self, h: usize) -> DMatrix<f64> {
        self.states.cross(h - 1, h - 1)
    }

    pub fn state_mean(&self, h: usize) -> &DVector<f64> {
        &self.states.means[h - 1]
    }
}

/// Path moments for horizons `1..=k` with `k = f_seq.len()`. With a
/// belief, its horizon `h - 1` describes the factors at step `h`, the
/// factor entries of `f_seq` are replaced by the belief means, and factor
/// uncertainty enters `Q` through the latent-factor terms.
pub fn path_moments(
    spec: &DglmSpec,
    posterior: &GaussianMoments,
    f_seq: &[DVector<f64>],
    belief: Option<&LatentFactorBelief>,
) -> Result<PathMoments> {
    let k = f_seq.len();
    let states = state_path(spec, posterior, k)?;
    let d = spec.state_dim();
    if f_seq.iter().any(|f| f.len() != d) {
        return Err(Error::dim("regression vector length differs from state dimension"));
    }
    let beta = spec.factor_slice().unwrap_or(0..0);
    let mut f_tilde: Vec<DVector<f64>> = f_seq.to_vec();
    if let Some(b) = belief {
        if b.r() != beta.len() || b.horizons() < k {
            return Err(Error::dim(format!(
                "belief has r={} over {} horizons; model needs r={} over {k}",
                b.r(),
                b.horizons(),
                beta.len()
            )));
        }
        for (h, f) in f_tilde.iter_mut().enumerate() {
            for (u, i) in beta.clone().enumerate() {
                f[i] = b.mean(h)[u];
            }
        }
    }
    let no_factors = DMatrix::zeros(beta.len(), beta.len());
    let mut f = DVector::zeros(k);
    let mut q = DMatrix::zeros(k, k);
    for h in 0..k {
        f[h] = f_tilde[h].dot(&states.means[h]);
        let ah = &states.means[h].as_slice()[beta.clone()];
        for j in 0..=h {
            let aj = &states.means[j].as_slice()[beta.clone()];
            let mut v = within_series_cov(
                f_tilde[h].as_slice(),
                f_tilde[j].as_slice(),
                &states.cross(h, j),
                &beta,
                ah,
                aj,
                &belief.map_or_else(|| no_factors.clone(), |b| b.psi(h, j)),
            );
            if h == j {
                v = v.max(Q_FLOOR);
            }
            q[(h, j)] = v;
            q[(j, h)] = v;
        }
    }
    psd_repair(&mut q);
    Ok(PathMoments {
        states,
        joint: JointPredictorMoments { f, q },
    })
}

/// Family and (binomial) trial count of one copula coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSpec {
    pub family: FamilySpec,
    pub trials: Option<u64>,
}

impl MarginSpec {
    pub fn new(family: FamilySpec) -> Self {
        Self {
            family,
            trials: None,
        }
    }
}

/// Cubic Hermite interpolant of `t(z) = g(H^-(Φ(z)))` on a uniform grid,
/// `g` being ln (gamma) or logit (beta), stored as per-interval cubic
/// coefficients in the local coordinate `s ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
struct QuantileSpline {
    z0: f64,
    inv_step: f64,
    coef: Vec<[f64; 4]>,
}

impl QuantileSpline {
    fn new(z0: f64, step: f64, t: &[f64], dt: &[f64]) -> Self {
        let coef = (0..t.len() - 1)
            .map(|i| {
                let (t0, t1) = (t[i], t[i + 1]);
                let (m0, m1) = (dt[i] * step, dt[i + 1] * step);
                [
                    t0,
                    m0,
                    3.0 * (t1 - t0) - 2.0 * m0 - m1,
                    2.0 * (t0 - t1) + m0 + m1,
                ]
            })
            .collect();
        Self {
            z0,
            inv_step: 1.0 / step,
            coef,
        }
    }

    #[inline]
    fn eval(&self, z: f64) -> f64 {
        let n = self.coef.len();
        let pos = ((z - self.z0) * self.inv_step).clamp(0.0, n as f64);
        let i = (pos as usize).min(n - 1);
        let s = pos - i as f64;
        let c = &self.coef[i];
        c[0] + s * (c[1] + s * (c[2] + s * c[3]))
    }
}

/// `-Φ^{-1}(U_CLAMP)`: normal scores are clamped to `±Z_MAX`.
pub const Z_MAX: f64 = 7.034_483_825_301_132;

fn z_max() -> f64 {
    Z_MAX
}

/// One conjugate margin `H_j` with its quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct Margin {
    pub spec: MarginSpec,
    pub params: ConjugateParams,
    spline: Option<QuantileSpline>,
}

/// `(x, 1 - x)` for the gamma/beta quantile at normal score `z`, each
/// computed in the tail where it keeps relative precision. Gamma returns
/// the unit-rate quantile and `NaN` as complement.
fn exact_at_score(params: &ConjugateParams, z: f64) -> (f64, f64) {
    let (p, q) = (norm_cdf(z), norm_cdf(-z));
    match *params {
        ConjugateParams::Gamma { shape, .. } => (gamma_quantile(shape, p, q), f64::NAN),
        ConjugateParams::Beta { alpha, beta } => {
            if z <= 0.0 {
                let x = beta_quantile(alpha, beta, p);
                (x, 1.0 - x)
            } else {
                let c = beta_quantile(beta, alpha, q);
                (1.0 - c, c)
            }
        }
        ConjugateParams::Normal { mean, variance } => (mean + variance.sqrt() * z, f64::NAN),
    }
}

impl Margin {
    pub fn new(spec: MarginSpec, params: ConjugateParams) -> Result<Self> {
        params.validate()?;
        let ok = matches!(
            (spec.family.family, params),
            (Family::Poisson, ConjugateParams::Gamma { .. })
                | (Family::Bernoulli | Family::Binomial, ConjugateParams::Beta { .. })
                | (Family::Normal, ConjugateParams::Normal { .. })
        );
        if !ok {
            return Err(Error::FamilyMismatch {
                family: spec.family.family,
                params,
            });
        }
        if spec.family.family == Family::Binomial && spec.trials.is_none() {
            return Err(Error::Precondition("binomial margin needs a trial count".into()));
        }
        Ok(Self {
            spec,
            params,
            spline: None,
        })
    }

    /// Tabulate the quantile function; kept only if it reproduces the exact
    /// values at interval midpoints.
    fn with_spline(mut self) -> Self {
        if matches!(self.params, ConjugateParams::Normal { .. }) {
            return self;
        }
        let zm = z_max();
        let step = 2.0 * zm / (SPLINE_NODES - 1) as f64;
        let mut t = Vec::with_capacity(SPLINE_NODES);
        let mut dt = Vec::with_capacity(SPLINE_NODES);
        for i in 0..SPLINE_NODES {
            let z = -zm + step * i as f64;
            let (tv, dv) = self.transformed_with_slope(z);
            if !tv.is_finite() || !dv.is_finite() {
                return self;
            }
            t.push(tv);
            dt.push(dv);
        }
        let spline = QuantileSpline::new(-zm, step, &t, &dt);
        for i in (0..SPLINE_NODES - 1).step_by(SPLINE_NODES / 32) {
            let z = -zm + step * (i as f64 + 0.5);
            let exact = self.transformed_with_slope(z).0;
            if (spline.eval(z) - exact).abs() > 1e-9 * (1.0 + exact.abs()) {
                return self;
            }
        }
        self.spline = Some(spline);
        self
    }

    /// `(g(x), dg(x)/dz)` at normal score `z`.
    fn transformed_with_slope(&self, z: f64) -> (f64, f64) {
        let (x, c) = exact_at_score(&self.params, z);
        let ln_phi = norm_ln_pdf(z);
        match self.params {
            ConjugateParams::Gamma { shape, rate } => {
                // d ln x / dz = φ(z) / (y g_a(y)) with y = rate x unit-rate.
                let ly = x.ln();
                let slope = (ln_phi - (shape * ly - x - ln_gamma(shape))).exp();
                (ly - rate.ln(), slope)
            }
            ConjugateParams::Beta { alpha, beta } => {
                let (lx, lc) = if x <= 0.5 { (x.ln(), (-x).ln_1p()) } else { ((-c).ln_1p(), c.ln()) };
                let slope = (ln_phi - (alpha * lx + beta * lc - ln_beta(alpha, beta))).exp();
                (lx - lc, slope)
            }
            ConjugateParams::Normal { .. } => (x, f64::NAN),
        }
    }

    /// `H^-(Φ(z))` with `z` clamped to the uniform clamp.
    pub fn quantile_at_score(&self, z: f64) -> f64 {
        let zm = z_max();
        let z = z.clamp(-zm, zm);
        if let Some(s) = &self.spline {
            let t = s.eval(z);
            return match self.params {
                ConjugateParams::Gamma { .. } => t.exp(),
                _ => 1.0 / (1.0 + (-t).exp()),
            };
        }
        let (x, _) = exact_at_score(&self.params, z);
        match self.params {
            ConjugateParams::Gamma { rate, .. } => x / rate,
            _ => x,
        }
    }

    /// `(g(μ), μ)` at normal score `z`, taking `g(μ)` straight from the
    /// spline when there is one.
    fn draw_at_score(&self, z: f64) -> (f64, f64) {
        if let Some(s) = &self.spline {
            let t = s.eval(z.clamp(-Z_MAX, Z_MAX));
            let mu = match self.params {
                ConjugateParams::Gamma { .. } => t.exp(),
                _ => 1.0 / (1.0 + (-t).exp()),
            };
            return (t, mu);
        }
        let mu = self.quantile_at_score(z);
        (self.link(mu), mu)
    }

    /// `H^-(u)` for `u` in (0, 1), clamped.
    pub fn quantile(&self, u: f64) -> f64 {
        self.quantile_at_score(norm_quantile(u.clamp(U_CLAMP, 1.0 - U_CLAMP)))
    }

    /// `H(μ)`.
    pub fn cdf(&self, mu: f64) -> f64 {
        match self.params {
            ConjugateParams::Gamma { shape, rate } => gamma_p(shape, rate * mu),
            ConjugateParams::Beta { alpha, beta } => beta_reg(alpha, beta, mu),
            ConjugateParams::Normal { mean, variance } => norm_cdf((mu - mean) / variance.sqrt()),
        }
    }

    /// Upper tail `1 - H(μ)`.
    pub fn sf(&self, mu: f64) -> f64 {
        match self.params {
            ConjugateParams::Gamma { shape, rate } => gamma_q(shape, rate * mu),
            ConjugateParams::Beta { alpha, beta } => beta_reg(beta, alpha, 1.0 - mu),
            ConjugateParams::Normal { mean, variance } => norm_cdf((mean - mu) / variance.sqrt()),
        }
    }

    /// The linear predictor `g(μ)`.
    pub fn link(&self, mu: f64) -> f64 {
        match self.spec.family.family {
            Family::Poisson => mu.ln(),
            Family::Bernoulli | Family::Binomial => (mu / (1.0 - mu)).ln(),
            Family::Normal => mu,
        }
    }

    pub fn is_tabulated(&self) -> bool {
        self.spline.is_some()
    }
}

/// A built copula: location `f`, lower Cholesky factor of the Gaussian
/// covariance (or Student-t scale), per-coordinate score scales and
/// conjugate margins.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaModel {
    pub copula: CopulaSpec,
    pub location: DVector<f64>,
    pub chol: DMatrix<f64>,
    /// Row norms of `chol`: the marginal scale of each coordinate.
    pub scale: Vec<f64>,
    /// Lower triangle of `chol`, packed by rows.
    packed: Vec<f64>,
    pub margins: Vec<Margin>,
}

impl CopulaModel {
    pub fn dim(&self) -> usize {
        self.location.len()
    }
}

/// Conjugate margins from the diagonal of `Q` (through a matching table
/// when one is supplied) and the factorized dependence.
pub fn build_copula(
    moments: &JointPredictorMoments,
    margins: &[MarginSpec],
    copula: CopulaSpec,
    tables: &[&VbTable],
) -> Result<CopulaModel> {
    copula.validate()?;
    let p = moments.dim();
    if margins.len() != p || moments.q.nrows() != p || moments.q.ncols() != p {
        return Err(Error::dim(format!(
            "{p} linear predictors but {} margins and a {}x{} covariance",
            margins.len(),
            moments.q.nrows(),
            moments.q.ncols()
        )));
    }
    if let Some(j) = (0..p).find(|&j| !(moments.q[(j, j)] > 0.0)) {
        return Err(Error::Precondition(format!(
            "non-positive variance for coordinate {j}"
        )));
    }
    let mut q = moments.q.clone();
    if let CopulaSpec::StudentT { dof } = copula {
        q *= (dof - 2.0) / dof;
    }
    let chol = robust_cholesky(&q)?;
    let scale: Vec<f64> = (0..p).map(|j| chol.row(j).norm()).collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Cholesky);
    }
    let built = margins
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let lam = LinearPredictorMoments::new(moments.f[j], moments.q[(j, j)]);
            let table = tables.iter().copied().find(|t| t.family() == &m.family);
            Margin::new(*m, vb_params(&m.family, lam, table)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let packed = (0..p).flat_map(|j| (0..=j).map(move |i| (j, i))).map(|ji| chol[ji]).collect();
    Ok(CopulaModel {
        copula,
        location: moments.f.clone(),
        packed,
        chol,
        scale,
        margins: built,
    })
}

/// Upper tail of the standard Student-t.
fn t_sf(x: f64, dof: f64) -> f64 {
    let tail = 0.5 * beta_reg(0.5 * dof, 0.5, dof / (dof + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Normal score with the same tail probability as a Student-t score.
fn t_to_normal_score(x: f64, dof: f64) -> f64 {
    let tail = t_sf(x.abs(), dof);
    let z = -norm_quantile(tail.max(f64::MIN_POSITIVE));
    if x >= 0.0 {
        z
    } else {
        -z
    }
}

/// Joint samples: `λ` from the copula's joint law, each coordinate mapped
/// to its margin, then the outcome drawn. `lambda_draws` holds `g(μ)`.
pub fn sample_paths(model: &CopulaModel, samples: usize, seed: u64) -> Result<ForecastPaths> {
    if samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let p = model.dim();
    let tabulated;
    let model = if samples >= SPLINE_MIN_SAMPLES {
        tabulated = CopulaModel {
            margins: model.margins.iter().cloned().map(Margin::with_spline).collect(),
            ..model.clone()
        };
        &tabulated
    } else {
        model
    };
    let dof = match model.copula {
        CopulaSpec::StudentT { dof } => Some(dof),
        CopulaSpec::Gaussian => None,
    };
    let (ys, lams) = run_chunked(samples, p, p, seed, |rng, rows, out, lam_out| {
        let mut z = vec![0.0; p];
        for row in 0..rows {
            for zi in z.iter_mut() {
                *zi = std_normal(rng);
            }
            let mix = dof.map(|nu| (nu / (2.0 * sampling::gamma(rng, 0.5 * nu))).sqrt());
            let mut row_start = 0;
            for j in 0..p {
                let l = &model.packed[row_start..row_start + j + 1];
                row_start += j + 1;
                let s: f64 = l.iter().zip(&z).map(|(a, b)| a * b).sum();
                let mut score = s / model.scale[j];
                if let (Some(nu), Some(w)) = (dof, mix) {
                    score = t_to_normal_score(score * w, nu);
                }
                let margin = &model.margins[j];
                let (lam, mu) = margin.draw_at_score(score);
                if !mu.is_finite() {
                    return Err(Error::Quantile {
                        coordinate: j,
                        reason: format!("non-finite quantile at score {score}"),
                    });
                }
                lam_out[row * p + j] = lam;
                out[row * p + j] = sample_outcome(rng, &margin.spec.family, mu, margin.spec.trials);
            }
        }
        Ok(())
    })?;
    Ok(ForecastPaths {
        samples: ys,
        lambda_draws: lams,
        seed,
    })
}

/// Wall-clock comparison of the two path forecasters on one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub samples: usize,
    pub horizons: usize,
    pub recursive_exact_secs: f64,
    pub recursive_table_secs: Option<f64>,
    pub copula_secs: f64,
    /// Max gap between the empirical cdfs of the path sum.
    pub cdf_gap: f64,
}

impl BenchmarkReport {
    /// Recursive (table when available) over copula time.
    pub fn copula_speedup(&self) -> f64 {
        self.recursive_table_secs.unwrap_or(self.recursive_exact_secs) / self.copula_secs
    }

    pub fn table_speedup(&self) -> Option<f64> {
        self.recursive_table_secs.map(|t| self.recursive_exact_secs / t)
    }
}

/// Time the recursive forecaster (exact VB, and with `table` if given)
/// against the copula forecaster, and compare their path-sum cdfs. The
/// comparison uses the table-driven recursive run when available.
pub fn benchmark_forecasters(
    spec: &DglmSpec,
    posterior: &GaussianMoments,
    f_seq: &[DVector<f64>],
    samples: usize,
    seed: u64,
    table: Option<&VbTable>,
) -> Result<BenchmarkReport> {
    let start = Instant::now();
    let exact = recursive_path_forecast(spec, posterior, f_seq, samples, seed, RecursiveOptions::default())?;
    let recursive_exact_secs = start.elapsed().as_secs_f64();
    let (reference, recursive_table_secs) = match table {
        Some(t) => {
            let start = Instant::now();
            let paths = recursive_path_forecast(
                spec,
                posterior,
                f_seq,
                samples,
                seed,
                RecursiveOptions {
                    table: Some(t),
                    trials: None,
                },
            )?;
            (paths, Some(start.elapsed().as_secs_f64()))
        }
        None => (exact, None),
    };
    let start = Instant::now();
    let moments = path_moments(spec, posterior, f_seq, None)?;
    let margins = vec![MarginSpec::new(spec.family); f_seq.len()];
    let tables: Vec<&VbTable> = table.into_iter().collect();
    let model = build_copula(&moments.joint, &margins, CopulaSpec::Gaussian, &tables)?;
    let copula = sample_paths(&model, samples, seed.wrapping_add(1))?;
    let copula_secs = start.elapsed().as_secs_f64();
    Ok(BenchmarkReport {
        samples,
        horizons: f_seq.len(),
        recursive_exact_secs,
        recursive_table_secs,
        copula_secs,
        cdf_gap: ks_two_sample(&reference.path_sums(), &copula.path_sums()),
    })
}
