//! Dynamic count mixture: a Bernoulli DGLM gates whether `y > 0`, and a
//! Poisson DGLM models `y - 1` given that it is.

use nalgebra::{DMatrix, DVector};

use crate::copula::{build_copula, sample_paths, CopulaSpec, MarginSpec};
use crate::dglm::{evolve, filter_step, state_path, DglmSpec, FilterStep, ObsSlot};
use crate::error::{Error, Result};
use crate::exp_family::{ConjugateParams, Family, FamilySpec};
use crate::latent_factor::{assemble_joint, lf_filter_step, FactorMoments, LatentFactorBelief, SeriesPath};
use crate::linalg::GaussianMoments;
use crate::paths::ForecastPaths;
use crate::predictive::PredictiveDist;
use crate::vb_table::VbTable;

/// The two component models.
#[derive(Debug, Clone, PartialEq)]
pub struct DcmmSpec {
    pub bern: DglmSpec,
    pub pois: DglmSpec,
}

impl DcmmSpec {
    pub fn new(bern: DglmSpec, pois: DglmSpec) -> Result<Self> {
        if bern.family.family != Family::Bernoulli || pois.family.family != Family::Poisson {
            return Err(Error::InvalidParams(
                "a count mixture needs a bernoulli gate and a poisson count model".into(),
            ));
        }
        Ok(Self { bern, pois })
    }
}

/// Component posteriors. The Poisson posterior is kept exactly as of its
/// last update; `pois_pending` counts the evolutions (one per `y = 0`
/// step) still to be applied before it is next used.
#[derive(Debug, Clone, PartialEq)]
pub struct DcmmState {
    pub bern: GaussianMoments,
    pub pois: GaussianMoments,
    pub pois_pending: usize,
}

impl DcmmState {
    pub fn new(bern: GaussianMoments, pois: GaussianMoments) -> Self {
        Self {
            bern,
            pois,
            pois_pending: 0,
        }
    }
}

/// Result of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct DcmmStep {
    pub state: DcmmState,
    pub forecast: PredictiveDist,
    pub log_density: f64,
}

fn table_for<'a>(tables: &[&'a VbTable], family: &FamilySpec) -> Option<&'a VbTable> {
    tables.iter().copied().find(|t| t.family() == family)
}

fn check_count(y: f64) -> Result<()> {
    if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
        Ok(())
    } else {
        Err(Error::Support {
            family: Family::Poisson,
            value: y,
        })
    }
}

/// Poisson posterior at the previous time point, pending evolutions applied.
pub fn pois_current(spec: &DcmmSpec, state: &DcmmState) -> Result<GaussianMoments> {
    let mut m = state.pois.clone();
    for _ in 0..state.pois_pending {
        m = evolve(&spec.pois, &m)?;
    }
    Ok(m)
}

fn mixture(gate: &FilterStep, count: &FilterStep) -> Result<PredictiveDist> {
    match (gate.prior_params, count.prior_params) {
        (ConjugateParams::Beta { alpha, beta }, ConjugateParams::Gamma { shape, rate }) => {
            Ok(PredictiveDist::CountMixture {
                p_nonzero: alpha / (alpha + beta),
                shape,
                rate,
            })
        }
        _ => Err(Error::InvalidParams("unexpected component priors".into())),
    }
}

fn combine(state: &DcmmState, y: f64, gate: FilterStep, count: FilterStep) -> Result<DcmmStep> {
    let forecast = mixture(&gate, &count)?;
    let next = if y > 0.0 {
        DcmmState::new(gate.posterior, count.posterior)
    } else {
        DcmmState {
            bern: gate.posterior,
            pois: state.pois.clone(),
            pois_pending: state.pois_pending + 1,
        }
    };
    Ok(DcmmStep {
        log_density: forecast.ln_density(y),
        state: next,
        forecast,
    })
}

/// Gate on `z = 1{y > 0}`; update the count model on `y - 1` only when
/// `y > 0`.
pub fn dcmm_filter_step(
    spec: &DcmmSpec,
    state: &DcmmState,
    f_bern: &DVector<f64>,
    f_pois: &DVector<f64>,
    y: f64,
    tables: &[&VbTable],
) -> Result<DcmmStep> {
    check_count(y)?;
    let z = if y > 0.0 { 1.0 } else { 0.0 };
    let gate = filter_step(
        &spec.bern,
        &state.bern,
        f_bern,
        ObsSlot::observed(z),
        table_for(tables, &spec.bern.family),
    )?;
    let x = if y > 0.0 {
        ObsSlot::observed(y - 1.0)
    } else {
        ObsSlot::missing()
    };
    let count = filter_step(
        &spec.pois,
        &pois_current(spec, state)?,
        f_pois,
        x,
        table_for(tables, &spec.pois.family),
    )?;
    combine(state, y, gate, count)
}

/// Factor inputs for one step: forecast moments drive the prediction,
/// `update` moments the state update.
#[derive(Debug, Clone, Copy)]
pub struct FactorInputs<'a> {
    pub forecast: &'a FactorMoments,
    pub update: &'a FactorMoments,
}

/// [`dcmm_filter_step`] for components whose regressions carry latent
/// factors; each component sees the factor coordinates listed in its
/// `*_factors` index slice.
#[allow(clippy::too_many_arguments)]
pub fn dcmm_lf_filter_step(
    spec: &DcmmSpec,
    state: &DcmmState,
    bern_predictors: &[f64],
    pois_predictors: &[f64],
    factors: FactorInputs<'_>,
    bern_factors: &[usize],
    pois_factors: &[usize],
    y: f64,
    tables: &[&VbTable],
) -> Result<DcmmStep> {
    check_count(y)?;
    let pick = |m: &FactorMoments, idx: &[usize]| -> Result<FactorMoments> {
        if idx.iter().any(|&i| i >= m.mean.len()) {
            return Err(Error::dim("factor index out of range"));
        }
        Ok(FactorMoments {
            mean: DVector::from_iterator(idx.len(), idx.iter().map(|&i| m.mean[i])),
            cov: DMatrix::from_fn(idx.len(), idx.len(), |a, b| m.cov[(idx[a], idx[b])]),
        })
    };
    let z = if y > 0.0 { 1.0 } else { 0.0 };
    let gate = lf_filter_step(
        &spec.bern,
        &state.bern,
        bern_predictors,
        &pick(factors.forecast, bern_factors)?,
        &pick(factors.update, bern_factors)?,
        ObsSlot::observed(z),
        table_for(tables, &spec.bern.family),
    )?;
    let x = if y > 0.0 {
        ObsSlot::observed(y - 1.0)
    } else {
        ObsSlot::missing()
    };
    let count = lf_filter_step(
        &spec.pois,
        &pois_current(spec, state)?,
        pois_predictors,
        &pick(factors.forecast, pois_factors)?,
        &pick(factors.update, pois_factors)?,
        x,
        table_for(tables, &spec.pois.family),
    )?;
    combine(state, y, gate, count)
}

/// Inputs to a mixture path forecast over horizons `1..=k`.
#[derive(Debug, Clone, Copy)]
pub struct DcmmPathInputs<'a> {
    pub bern_predictors: &'a [Vec<f64>],
    pub pois_predictors: &'a [Vec<f64>],
    /// Factor belief whose horizon `h - 1` describes step `h`.
    pub belief: Option<&'a LatentFactorBelief>,
    pub bern_factors: &'a [usize],
    pub pois_factors: &'a [usize],
}

/// Joint copula over the `k` gate and `k` count linear predictors, then
/// `y = z (1 + x)`. Gate and count states are independent; they interact
/// only through shared factors. `lambda_draws` holds the `2k` sampled
/// linear predictors, gate first.
#[allow(clippy::too_many_arguments)]
pub fn dcmm_path_forecast(
    spec: &DcmmSpec,
    state: &DcmmState,
    inputs: DcmmPathInputs<'_>,
    copula: CopulaSpec,
    samples: usize,
    seed: u64,
    tables: &[&VbTable],
) -> Result<ForecastPaths> {
    let k = inputs.bern_predictors.len();
    if k == 0 || inputs.pois_predictors.len() != k {
        return Err(Error::Precondition(
            "need the same positive number of gate and count horizons".into(),
        ));
    }
    let empty;
    let belief = match inputs.belief {
        Some(b) => b,
        None => {
            empty = LatentFactorBelief::known(vec![DVector::zeros(0); k])?;
            &empty
        }
    };
    let bern_path = state_path(&spec.bern, &state.bern, k)?;
    let pois_path = state_path(&spec.pois, &pois_current(spec, state)?, k)?;
    let horizons: Vec<usize> = (0..k).collect();
    let joint = assemble_joint(
        &[
            SeriesPath {
                spec: &spec.bern,
                states: &bern_path,
                predictors: inputs.bern_predictors,
                factor_index: inputs.bern_factors,
                belief_horizons: &horizons,
            },
            SeriesPath {
                spec: &spec.pois,
                states: &pois_path,
                predictors: inputs.pois_predictors,
                factor_index: inputs.pois_factors,
                belief_horizons: &horizons,
            },
        ],
        belief,
    )?;
    let mut margins = vec![MarginSpec::new(spec.bern.family); k];
    margins.extend(vec![MarginSpec::new(spec.pois.family); k]);
    let model = build_copula(&joint, &margins, copula, tables)?;
    let raw = sample_paths(&model, samples, seed)?;
    let y = DMatrix::from_fn(samples, k, |s, h| raw.samples[(s, h)] * (1.0 + raw.samples[(s, k + h)]));
    Ok(ForecastPaths {
        samples: y,
        lambda_draws: raw.lambda_draws,
        seed,
    })
}
