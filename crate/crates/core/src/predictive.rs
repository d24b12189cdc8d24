//! Forecast distributions for a single outcome.
//!
//! The conjugate predictives are analytic: Poisson-Gamma gives a negative
//! binomial, (Bernoulli|Binomial)-Beta a beta-binomial, Normal-Normal a
//! normal. The count mixture is the one-step forecast of a DCMM and the
//! empirical variant wraps Monte Carlo draws (e.g. of a k-step sum).

use rand::Rng;

use crate::error::{Error, Result};
use crate::exp_family::{ConjugateParams, Family, FamilySpec};
use crate::sampling;
use crate::special::{beta_reg, ln_beta, ln_gamma, norm_cdf, norm_quantile};

#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDist {
    /// P(y) = C(a+y-1, y) (b/(b+1))^a (1/(b+1))^y.
    NegBinomial { shape: f64, rate: f64 },
    BetaBinomial { alpha: f64, beta: f64, trials: u64 },
    Normal { mean: f64, variance: f64 },
    /// P(0) = 1 - p_nonzero; P(n) = p_nonzero NB(n - 1 | shape, rate).
    CountMixture {
        p_nonzero: f64,
        shape: f64,
        rate: f64,
    },
    /// Sorted sample values.
    Empirical { values: Vec<f64>, discrete: bool },
}

/// Analytic predictive of the next observation given the conjugate prior.
/// `trials` is required for the binomial family and ignored otherwise.
pub fn one_step_predictive(
    family: &FamilySpec,
    params: &ConjugateParams,
    trials: Option<u64>,
) -> Result<PredictiveDist> {
    params.validate()?;
    Ok(match (family.family, *params) {
        (Family::Poisson, ConjugateParams::Gamma { shape, rate }) => {
            PredictiveDist::NegBinomial { shape, rate }
        }
        (Family::Bernoulli, ConjugateParams::Beta { alpha, beta }) => PredictiveDist::BetaBinomial {
            alpha,
            beta,
            trials: 1,
        },
        (Family::Binomial, ConjugateParams::Beta { alpha, beta }) => {
            let trials = trials.ok_or_else(|| {
                Error::Precondition("binomial predictive needs a trial count".into())
            })?;
            PredictiveDist::BetaBinomial {
                alpha,
                beta,
                trials,
            }
        }
        (Family::Normal, ConjugateParams::Normal { mean, variance }) => PredictiveDist::Normal {
            mean,
            variance: variance + 1.0 / family.precision,
        },
        (family, params) => return Err(Error::FamilyMismatch { family, params }),
    })
}

fn nb_ln_pmf(shape: f64, rate: f64, k: f64) -> f64 {
    ln_gamma(shape + k) - ln_gamma(k + 1.0) - ln_gamma(shape) + shape * (rate / (rate + 1.0)).ln()
        - k * (rate + 1.0).ln()
}

fn nb_cdf(shape: f64, rate: f64, k: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    beta_reg(shape, k + 1.0, rate / (rate + 1.0))
}

/// Smallest integer k >= 0 with `cdf(k) >= p`, by exponential bracketing then
/// bisection. The comparison allows `CDF_SLACK` for rounding in the
/// incomplete beta so exact ties (e.g. a median at cdf = 1/2) resolve low.
fn integer_quantile(p: f64, start: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    let p = p - CDF_SLACK;
    if cdf(0.0) >= p {
        return 0.0;
    }
    let mut lo = 0.0f64; // cdf(lo) < p
    let mut hi = start.ceil().max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1.0 {
        let mid = (0.5 * (lo + hi)).floor();
        if cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

const CDF_SLACK: f64 = 1e-12;

fn is_count(y: f64) -> bool {
    y >= 0.0 && y.fract() == 0.0 && y.is_finite()
}

impl PredictiveDist {
    pub fn is_discrete(&self) -> bool {
        match self {
            PredictiveDist::Normal { .. } => false,
            PredictiveDist::Empirical { discrete, .. } => *discrete,
            _ => true,
        }
    }

    /// Empirical distribution of the given draws.
    pub fn empirical(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let discrete = values.iter().all(|v| v.fract() == 0.0);
        PredictiveDist::Empirical { values, discrete }
    }

    /// Log pmf (discrete) or log pdf (continuous) at `y`.
    pub fn ln_density(&self, y: f64) -> f64 {
        match *self {
            PredictiveDist::NegBinomial { shape, rate } => {
                if !is_count(y) {
                    return f64::NEG_INFINITY;
                }
                nb_ln_pmf(shape, rate, y)
            }
            PredictiveDist::BetaBinomial {
                alpha,
                beta,
                trials,
            } => {
                let n = trials as f64;
                if !is_count(y) || y > n {
                    return f64::NEG_INFINITY;
                }
                ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0)
                    + ln_beta(y + alpha, n - y + beta)
                    - ln_beta(alpha, beta)
            }
            PredictiveDist::Normal { mean, variance } => {
                let z = y - mean;
                -0.5 * (z * z / variance + (2.0 * std::f64::consts::PI * variance).ln())
            }
            PredictiveDist::CountMixture {
                p_nonzero,
                shape,
                rate,
            } => {
                if !is_count(y) {
                    f64::NEG_INFINITY
                } else if y == 0.0 {
                    (-p_nonzero).ln_1p()
                } else {
                    p_nonzero.ln() + nb_ln_pmf(shape, rate, y - 1.0)
                }
            }
            PredictiveDist::Empirical { .. } => self.density(y).ln(),
        }
    }

    /// pmf (discrete) or pdf (continuous) at `y`. The empirical variant is
    /// treated as discrete with mass 1/S per draw.
    pub fn density(&self, y: f64) -> f64 {
        match self {
            PredictiveDist::Empirical { values, .. } => {
                let lo = values.partition_point(|v| *v < y);
                let hi = values.partition_point(|v| *v <= y);
                (hi - lo) as f64 / values.len().max(1) as f64
            }
            _ => self.ln_density(y).exp(),
        }
    }

    /// P(Y <= y).
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            PredictiveDist::NegBinomial { shape, rate } => nb_cdf(shape, rate, y.floor()),
            PredictiveDist::BetaBinomial { trials, .. } => {
                if y < 0.0 {
                    return 0.0;
                }
                let top = y.floor().min(trials as f64) as u64;
                if top == trials {
                    return 1.0;
                }
                let s: f64 = (0..=top).map(|k| self.ln_density(k as f64).exp()).sum();
                s.min(1.0)
            }
            PredictiveDist::Normal { mean, variance } => norm_cdf((y - mean) / variance.sqrt()),
            PredictiveDist::CountMixture {
                p_nonzero,
                shape,
                rate,
            } => {
                if y < 0.0 {
                    0.0
                } else {
                    1.0 - p_nonzero + p_nonzero * nb_cdf(shape, rate, y.floor() - 1.0)
                }
            }
            PredictiveDist::Empirical { ref values, .. } => {
                values.partition_point(|v| *v <= y) as f64 / values.len().max(1) as f64
            }
        }
    }

    /// Smallest y with cdf(y) >= p (the usual generalized inverse).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            PredictiveDist::NegBinomial { shape, rate } => {
                integer_quantile(p, shape / rate, |k| nb_cdf(shape, rate, k))
            }
            PredictiveDist::BetaBinomial { trials, .. } => {
                let mut acc = 0.0;
                for k in 0..trials {
                    acc += self.ln_density(k as f64).exp();
                    if acc >= p - CDF_SLACK {
                        return k as f64;
                    }
                }
                trials as f64
            }
            PredictiveDist::Normal { mean, variance } => mean + variance.sqrt() * norm_quantile(p),
            PredictiveDist::CountMixture {
                p_nonzero,
                shape,
                rate,
            } => {
                let p0 = 1.0 - p_nonzero;
                if p <= p0 {
                    0.0
                } else {
                    let target = (p - p0) / p_nonzero;
                    1.0 + integer_quantile(target, shape / rate, |k| nb_cdf(shape, rate, k))
                }
            }
            PredictiveDist::Empirical { ref values, .. } => {
                if values.is_empty() {
                    return f64::NAN;
                }
                let n = values.len();
                let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
                values[idx]
            }
        }
    }

    /// Point forecast used throughout: smallest y with cdf(y) >= 1/2.
    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PredictiveDist::NegBinomial { shape, rate } => shape / rate,
            PredictiveDist::BetaBinomial {
                alpha,
                beta,
                trials,
            } => trials as f64 * alpha / (alpha + beta),
            PredictiveDist::Normal { mean, .. } => mean,
            PredictiveDist::CountMixture {
                p_nonzero,
                shape,
                rate,
            } => p_nonzero * (1.0 + shape / rate),
            PredictiveDist::Empirical { ref values, .. } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PredictiveDist::NegBinomial { shape, rate } => {
                let mu = sampling::gamma(rng, shape) / rate;
                sampling::poisson(rng, mu) as f64
            }
            PredictiveDist::BetaBinomial {
                alpha,
                beta,
                trials,
            } => {
                let p = sampling::beta(rng, alpha, beta);
                sampling::binomial(rng, trials, p) as f64
            }
            PredictiveDist::Normal { mean, variance } => {
                mean + variance.sqrt() * sampling::std_normal(rng)
            }
            PredictiveDist::CountMixture {
                p_nonzero,
                shape,
                rate,
            } => {
                if rng.random::<f64>() < p_nonzero {
                    let mu = sampling::gamma(rng, shape) / rate;
                    1.0 + sampling::poisson(rng, mu) as f64
                } else {
                    0.0
                }
            }
            PredictiveDist::Empirical { ref values, .. } => {
                values[rng.random_range(0..values.len())]
            }
        }
    }
}
