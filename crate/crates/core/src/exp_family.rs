//! Exponential-family observation models with their conjugate priors.
//!
//! A DGLM only carries first and second moments of the linear predictor
//! `λ = g(μ)`. The variational step turns those moments `(f, q)` into the
//! unique conjugate prior for `μ` whose `λ`-moments match exactly; after an
//! observation the conjugate posterior is mapped back to `(g, p)`.
//!
//! | family    | link     | conjugate | f                | q                  |
//! |-----------|----------|-----------|------------------|--------------------|
//! | poisson   | log      | Gamma     | ψ(a) − ln b      | ψ′(a)              |
//! | bernoulli | logit    | Beta      | ψ(α) − ψ(β)      | ψ′(α) + ψ′(β)      |
//! | binomial  | logit    | Beta      | ψ(α) − ψ(β)      | ψ′(α) + ψ′(β)      |
//! | normal    | identity | Normal    | mean             | variance           |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;
use crate::special::{digamma, inv_digamma, tetragamma, trigamma};

/// Moment residual tolerance for the Newton-Raphson VB solve.
pub const VB_TOLERANCE: f64 = 1e-10;
pub const VB_MAX_ITER: usize = 50;
const MIN_SHAPE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Bernoulli,
    Binomial,
    Normal,
}

impl Family {
    pub fn natural_link(self) -> Link {
        match self {
            Family::Poisson => Link::Log,
            Family::Bernoulli | Family::Binomial => Link::Logit,
            Family::Normal => Link::Identity,
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, Family::Normal)
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Family::Poisson => 0,
            Family::Bernoulli => 1,
            Family::Binomial => 2,
            Family::Normal => 3,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Family::Poisson,
            1 => Family::Bernoulli,
            2 => Family::Binomial,
            3 => Family::Normal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Log,
    Logit,
    Identity,
}

/// Observation family, its (natural) link and the precision `τ`.
///
/// `τ` is 1 for the count/binary families; for the normal family it is the
/// observation precision. Binomial trial counts travel with observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub link: Link,
    pub precision: f64,
}

impl FamilySpec {
    pub fn new(family: Family, link: Link, precision: f64) -> Result<Self> {
        if link != family.natural_link() {
            return Err(Error::InvalidParams(format!(
                "{link:?} is not the natural link of {family:?}"
            )));
        }
        if !(precision > 0.0) || !precision.is_finite() {
            return Err(Error::InvalidParams(format!(
                "precision must be positive and finite, got {precision}"
            )));
        }
        if family != Family::Normal && precision != 1.0 {
            return Err(Error::InvalidParams(format!(
                "precision is fixed at 1 for {family:?}"
            )));
        }
        Ok(Self {
            family,
            link,
            precision,
        })
    }

    pub fn poisson() -> Self {
        Self {
            family: Family::Poisson,
            link: Link::Log,
            precision: 1.0,
        }
    }

    pub fn bernoulli() -> Self {
        Self {
            family: Family::Bernoulli,
            link: Link::Logit,
            precision: 1.0,
        }
    }

    pub fn binomial() -> Self {
        Self {
            family: Family::Binomial,
            link: Link::Logit,
            precision: 1.0,
        }
    }

    /// Normal observations with known precision `tau`.
    pub fn normal(tau: f64) -> Result<Self> {
        Self::new(Family::Normal, Link::Identity, tau)
    }
}

/// Conjugate-prior hyperparameters, tagged by distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConjugateParams {
    Gamma { shape: f64, rate: f64 },
    Beta { alpha: f64, beta: f64 },
    Normal { mean: f64, variance: f64 },
}

impl ConjugateParams {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ConjugateParams::Gamma { shape, rate } => pos(shape) && pos(rate),
            ConjugateParams::Beta { alpha, beta } => pos(alpha) && pos(beta),
            ConjugateParams::Normal { mean, variance } => mean.is_finite() && pos(variance),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }

    pub fn as_pair(&self) -> [f64; 2] {
        match *self {
            ConjugateParams::Gamma { shape, rate } => [shape, rate],
            ConjugateParams::Beta { alpha, beta } => [alpha, beta],
            ConjugateParams::Normal { mean, variance } => [mean, variance],
        }
    }

    pub(crate) fn from_pair(family: Family, v: [f64; 2]) -> Self {
        match family {
            Family::Poisson => ConjugateParams::Gamma {
                shape: v[0],
                rate: v[1],
            },
            Family::Bernoulli | Family::Binomial => ConjugateParams::Beta {
                alpha: v[0],
                beta: v[1],
            },
            Family::Normal => ConjugateParams::Normal {
                mean: v[0],
                variance: v[1],
            },
        }
    }

    fn matches(&self, family: Family) -> bool {
        matches!(
            (self, family),
            (ConjugateParams::Gamma { .. }, Family::Poisson)
                | (ConjugateParams::Beta { .. }, Family::Bernoulli | Family::Binomial)
                | (ConjugateParams::Normal { .. }, Family::Normal)
        )
    }
}

fn pos(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Mean and variance of a linear predictor; used for both the prior `(f, q)`
/// and the posterior `(g, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPredictorMoments {
    pub f: f64,
    pub q: f64,
}

impl LinearPredictorMoments {
    pub fn new(f: f64, q: f64) -> Self {
        Self { f, q }
    }
}

/// One observed value. `trials` is required for binomial data only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub trials: Option<u64>,
}

impl Observation {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            trials: None,
        }
    }

    pub fn binomial(successes: u64, trials: u64) -> Self {
        Self {
            value: successes as f64,
            trials: Some(trials),
        }
    }

    /// Checks the value lies in the family support.
    pub fn check(&self, family: Family) -> Result<()> {
        let y = self.value;
        let int = y.is_finite() && y >= 0.0 && y.fract() == 0.0;
        let ok = match family {
            Family::Poisson => int,
            Family::Bernoulli => y == 0.0 || y == 1.0,
            Family::Binomial => match self.trials {
                Some(n) => int && y <= n as f64,
                None => false,
            },
            Family::Normal => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Support { family, value: y })
        }
    }
}

fn check_pairing(family: &FamilySpec, params: &ConjugateParams) -> Result<()> {
    if !params.matches(family.family) {
        return Err(Error::FamilyMismatch {
            family: family.family,
            params: *params,
        });
    }
    params.validate()
}

/// Exact mean and variance of the linear predictor under the conjugate law.
pub fn conjugate_moments(
    family: &FamilySpec,
    params: &ConjugateParams,
) -> Result<LinearPredictorMoments> {
    check_pairing(family, params)?;
    Ok(match *params {
        ConjugateParams::Gamma { shape, rate } => {
            LinearPredictorMoments::new(digamma(shape) - rate.ln(), trigamma(shape))
        }
        ConjugateParams::Beta { alpha, beta } => LinearPredictorMoments::new(
            digamma(alpha) - digamma(beta),
            trigamma(alpha) + trigamma(beta),
        ),
        ConjugateParams::Normal { mean, variance } => LinearPredictorMoments::new(mean, variance),
    })
}

/// Solve for the conjugate hyperparameters whose linear-predictor moments
/// equal `moments` (the VB step).
pub fn vb_solve(family: &FamilySpec, moments: LinearPredictorMoments) -> Result<ConjugateParams> {
    let LinearPredictorMoments { f, q } = moments;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Precondition(format!(
            "linear predictor variance must be positive, got {q}"
        )));
    }
    if !f.is_finite() {
        return Err(Error::Precondition(format!(
            "linear predictor mean must be finite, got {f}"
        )));
    }
    match family.family {
        Family::Poisson => solve_gamma(f, q),
        Family::Bernoulli | Family::Binomial => solve_beta(f, q),
        Family::Normal => Ok(ConjugateParams::Normal {
            mean: f,
            variance: q,
        }),
    }
}

/// Newton-Raphson on `1/ψ′(a) = 1/q`, which is close to linear in `a`
/// (≈ a + 1/2 for large a). The rate then follows in closed form.
fn solve_gamma(f: f64, q: f64) -> Result<ConjugateParams> {
    // ψ′(a) ≈ 1/a + 1/(2a²) inverted.
    let mut shape = ((1.0 + (1.0 + 2.0 * q).sqrt()) / (2.0 * q)).max(MIN_SHAPE);
    let target = 1.0 / q;
    for _ in 0..VB_MAX_ITER {
        let tri = trigamma(shape);
        if ((tri - q) / q).abs() <= VB_TOLERANCE * 1e-2 {
            break;
        }
        let tetra = tetragamma(shape);
        let h = 1.0 / tri - target;
        let dh = -tetra / (tri * tri);
        let next = (shape - h / dh).max(MIN_SHAPE);
        let converged = ((next - shape) / shape).abs() <= 1e-15;
        shape = next;
        if converged {
            break;
        }
    }
    let rate = (digamma(shape) - f).exp();
    let params = ConjugateParams::Gamma { shape, rate };
    let tri = trigamma(shape);
    if ((tri - q) / q).abs() > VB_TOLERANCE || !pos(rate) {
        return Err(Error::NoConvergence {
            iterations: VB_MAX_ITER,
            last: params,
        });
    }
    Ok(params)
}

/// With the mean fixed, the smaller shape `a` determines the other through
/// `ψ(b) = ψ(a) - f`, and `ψ′(a) + ψ′(b)` falls strictly as `a` grows, so
/// a bracketed Newton iteration in `ln a` converges from anywhere. `f > 0`
/// is solved as `-f` with the shapes swapped.
fn solve_beta(f: f64, q: f64) -> Result<ConjugateParams> {
    let fm = -f.abs();
    let other = |a: f64| inv_digamma(digamma(a) - fm);
    // g(ln a) = (ψ′(a) + ψ′(b)) / q - 1, decreasing.
    let g = |la: f64| {
        let a = la.exp();
        let b = other(a);
        ((trigamma(a) + trigamma(b)) / q - 1.0, a, b)
    };
    // Large-shape start: ψ′(x) ≈ 1/x.
    let mut la = ((1.0 + fm.exp()) / q).max(MIN_SHAPE).ln();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut val, mut a, mut b) = g(la);
    for _ in 0..4 * VB_MAX_ITER {
        if val.abs() <= VB_TOLERANCE * 1e-2 {
            break;
        }
        if val > 0.0 {
            lo = la;
        } else {
            hi = la;
        }
        // dg/d(ln a), using db/da = ψ′(a)/ψ′(b).
        let (ta, tb) = (trigamma(a), trigamma(b));
        let slope = (tetragamma(a) * a + tetragamma(b) * b * (ta * a / (tb * b))) / q;
        let mut next = la - val / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0,
                (false, _) => hi - 2.0,
            };
        }
        if next < MIN_SHAPE.ln() {
            next = MIN_SHAPE.ln();
            if lo >= next {
                break;
            }
        }
        if (next - la).abs() <= 1e-15 * la.abs().max(1.0) {
            (_, a, b) = g(next);
            break;
        }
        la = next;
        (val, a, b) = g(la);
    }
    let (alpha, beta) = if f > 0.0 { (b, a) } else { (a, b) };
    let params = ConjugateParams::Beta { alpha, beta };
    let r1 = digamma(alpha) - digamma(beta) - f;
    let r2 = (trigamma(alpha) + trigamma(beta)) / q - 1.0;
    if !(r1.abs() <= VB_TOLERANCE * f.abs().max(1.0)) || !(r2.abs() <= VB_TOLERANCE) {
        return Err(Error::NoConvergence {
            iterations: VB_MAX_ITER,
            last: params,
        });
    }
    Ok(params)
}

/// Conjugate posterior after observing `obs`.
pub fn conjugate_update(
    family: &FamilySpec,
    params: &ConjugateParams,
    obs: &Observation,
) -> Result<ConjugateParams> {
    check_pairing(family, params)?;
    obs.check(family.family)?;
    let y = obs.value;
    Ok(match (*params, family.family) {
        (ConjugateParams::Gamma { shape, rate }, _) => ConjugateParams::Gamma {
            shape: shape + y,
            rate: rate + 1.0,
        },
        (ConjugateParams::Beta { alpha, beta }, Family::Bernoulli) => ConjugateParams::Beta {
            alpha: alpha + y,
            beta: beta + 1.0 - y,
        },
        (ConjugateParams::Beta { alpha, beta }, _) => {
            let n = obs.trials.unwrap_or(0) as f64;
            ConjugateParams::Beta {
                alpha: alpha + y,
                beta: beta + n - y,
            }
        }
        (ConjugateParams::Normal { mean, variance }, _) => {
            let tau = family.precision;
            let post_prec = 1.0 / variance + tau;
            let post_var = 1.0 / post_prec;
            ConjugateParams::Normal {
                mean: post_var * (mean / variance + tau * y),
                variance: post_var,
            }
        }
    })
}

/// Draw the natural parameter `μ` from its conjugate law.
pub fn sample_mu<R: rand::Rng + ?Sized>(rng: &mut R, params: &ConjugateParams) -> f64 {
    match *params {
        ConjugateParams::Gamma { shape, rate } => sampling::gamma(rng, shape) / rate,
        ConjugateParams::Beta { alpha, beta } => sampling::beta(rng, alpha, beta),
        ConjugateParams::Normal { mean, variance } => {
            mean + variance.sqrt() * sampling::std_normal(rng)
        }
    }
}

/// Draw an outcome given the natural parameter (`trials` for binomial).
pub fn sample_outcome<R: rand::Rng + ?Sized>(
    rng: &mut R,
    family: &FamilySpec,
    mu: f64,
    trials: Option<u64>,
) -> f64 {
    match family.family {
        Family::Poisson => sampling::poisson(rng, mu) as f64,
        Family::Bernoulli => {
            if rng.random::<f64>() < mu {
                1.0
            } else {
                0.0
            }
        }
        Family::Binomial => sampling::binomial(rng, trials.unwrap_or(1), mu) as f64,
        Family::Normal => mu + sampling::std_normal(rng) / family.precision.sqrt(),
    }
}
