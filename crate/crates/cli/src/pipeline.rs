//! The per-time-step loop: external models, then every series (in
//! parallel), then joint path forecasts and metrics at each origin in the
//! evaluation window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use dglm_core::copula::{build_copula, sample_paths};
use dglm_core::dcmm::{dcmm_filter_step, dcmm_lf_filter_step, pois_current, FactorInputs};
use dglm_core::dglm::{filter_step, state_path};
use dglm_core::exp_family::Family;
use dglm_core::latent_factor::{assemble_joint, lf_filter_step, SeriesPath};
use dglm_core::metrics::{ks_uniform, lpdr_accumulate, max_pairwise_correlation, randomized_pit, zape};
use dglm_core::sampling::{derive_seed, open01, stream_rng};
use dglm_core::vb_table::GridSpec;
use dglm_core::{
    AggregateDlm, DcmmSpec, DcmmState, DglmSpec, FactorMoments, FamilySpec, GaussianMoments, LatentFactorBelief,
    MarginSpec, MetricSeries, ObsSlot, PredictiveDist, StatePath, VbTable,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FamilyDecl, ModelDecl, PriorDecl, RunConfig, SamplePolicy, SeriesDecl, Window};
use crate::data::{ObservationTable, SeriesData};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Filtered states only.
    Filter,
    /// Plus path forecasts (quantiles, samples).
    Forecast,
    /// Plus metrics and cumulative LPDR.
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Forecast => "forecast",
            Stage::Evaluate => "evaluate",
        }
    }
}

// RNG stream tags; the sample streams use the origin time directly.
const PIT_ONE_STREAM: u64 = 1 << 40;
const PIT_SUM_STREAM: u64 = 2 << 40;

/// Everything a run produces, before it is written.
#[derive(Debug, Clone, Default)]
pub struct RunResult {
    /// Output file name to contents.
    pub files: BTreeMap<String, String>,
    pub metrics: Vec<MetricSeries>,
    /// Cumulative LPDR (baseline over model) per series and `"all"`.
    pub lpdr: Vec<(String, MetricSeries)>,
    pub summary: Summary,
    pub timings: BTreeMap<String, f64>,
    pub window: Option<Window>,
}

impl RunResult {
    pub fn metric(&self, name: &str, series: &str, horizon: usize) -> Option<&MetricSeries> {
        self.metrics
            .iter()
            .find(|m| m.name == format!("{name}:{series}") && m.horizon == horizon)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KsSummary {
    pub metric: String,
    pub horizon: usize,
    pub n: usize,
    pub ks_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// KS uniformity of each PIT series.
    pub pit: Vec<KsSummary>,
    pub lpdr_terminal: BTreeMap<String, f64>,
    pub mean_zape: BTreeMap<String, f64>,
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
struct Part {
    spec: DglmSpec,
    preds: Vec<usize>,
    factors: Vec<usize>,
}

// One per series; the size difference does not matter.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Model {
    Single(Part),
    Mixture { gate: Part, count: Part, spec: DcmmSpec },
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Single(GaussianMoments),
    Mixture(DcmmState),
}

#[derive(Debug, Clone)]
struct Track {
    model: Model,
    state: State,
}

struct SeriesRun<'a> {
    name: String,
    data: &'a SeriesData,
    family: Family,
    main: Track,
    base: Option<Track>,
}

struct ExternalRun<'a> {
    name: String,
    data: &'a SeriesData,
    preds: Vec<usize>,
    model: AggregateDlm,
}

fn predictors(data: &SeriesData, cols: &[usize], time: i64, who: &str) -> Result<Vec<f64>> {
    let i = time - data.start;
    if cols.is_empty() {
        return Ok(Vec::new());
    }
    if i < 0 || i >= data.len() as i64 {
        return Err(CliError::Data(format!("{who}: no predictors at time {time}")));
    }
    cols.iter()
        .map(|&c| {
            let v = data.predictors[c][i as usize];
            if v.is_nan() {
                Err(CliError::Data(format!("{who}: predictor column {c} is empty at time {time}")))
            } else {
                Ok(v)
            }
        })
        .collect()
}

fn pick(m: &FactorMoments, idx: &[usize]) -> FactorMoments {
    FactorMoments {
        mean: DVector::from_iterator(idx.len(), idx.iter().map(|&i| m.mean[i])),
        cov: DMatrix::from_fn(idx.len(), idx.len(), |a, b| m.cov[(idx[a], idx[b])]),
    }
}

fn table_for<'a>(tables: &[&'a VbTable], family: &FamilySpec) -> Option<&'a VbTable> {
    tables.iter().copied().find(|t| t.family() == family)
}

struct StepCtx<'a, 'b> {
    series: &'a SeriesRun<'b>,
    time: i64,
    forecast: Option<&'a FactorMoments>,
    update: Option<&'a FactorMoments>,
    tables: &'a [&'a VbTable],
}

struct StepOut {
    state: State,
    forecast: Option<PredictiveDist>,
    log_density: Option<f64>,
}

impl StepCtx<'_, '_> {
    fn ctx(&self) -> String {
        format!("series {}, time {}, stage filter", self.series.name, self.time)
    }

    fn slot(&self) -> Result<ObsSlot> {
        let slot = self.series.data.slot(self.time);
        if self.series.family == Family::Binomial && slot.trials.is_none() {
            return Err(CliError::Data(format!("{}: binomial row has no trial count", self.ctx())));
        }
        Ok(slot)
    }

    fn part(&self, part: &Part, state: &GaussianMoments, slot: ObsSlot) -> Result<dglm_core::FilterStep> {
        let preds = predictors(self.series.data, &part.preds, self.time, &self.series.name)?;
        let table = table_for(self.tables, &part.spec.family);
        let step = if part.factors.is_empty() {
            part.spec
                .regression_vector(&preds, &[])
                .and_then(|f| filter_step(&part.spec, state, &f, slot, table))
        } else {
            let (fc, up) = self.factor_pair(&part.factors)?;
            lf_filter_step(&part.spec, state, &preds, &fc, &up, slot, table)
        };
        step.map_err(CliError::numerical(self.ctx()))
    }

    fn factor_pair(&self, idx: &[usize]) -> Result<(FactorMoments, FactorMoments)> {
        match (self.forecast, self.update) {
            (Some(f), Some(u)) => Ok((pick(f, idx), pick(u, idx))),
            _ => Err(CliError::Config(format!("{}: factors without external models", self.ctx()))),
        }
    }

    fn run(&self, track: &Track) -> Result<StepOut> {
        let slot = self.slot()?;
        match (&track.model, &track.state) {
            (Model::Single(part), State::Single(st)) => {
                let step = self.part(part, st, slot)?;
                Ok(StepOut {
                    state: State::Single(step.posterior),
                    forecast: Some(step.forecast),
                    log_density: step.log_density,
                })
            }
            (Model::Mixture { gate, count, spec }, State::Mixture(st)) => {
                let Some(y) = slot.value else {
                    let g = self.part(gate, &st.bern, ObsSlot::missing())?;
                    return Ok(StepOut {
                        state: State::Mixture(DcmmState {
                            bern: g.posterior,
                            pois: st.pois.clone(),
                            pois_pending: st.pois_pending + 1,
                        }),
                        forecast: None,
                        log_density: None,
                    });
                };
                let data = self.series.data;
                let name = &self.series.name;
                let bp = predictors(data, &gate.preds, self.time, name)?;
                let cp = predictors(data, &count.preds, self.time, name)?;
                let step = if gate.factors.is_empty() && count.factors.is_empty() {
                    gate.spec.regression_vector(&bp, &[]).and_then(|fb| {
                        let fc = count.spec.regression_vector(&cp, &[])?;
                        dcmm_filter_step(spec, st, &fb, &fc, y, self.tables)
                    })
                } else {
                    let (Some(forecast), Some(update)) = (self.forecast, self.update) else {
                        return Err(CliError::Config(format!("{}: factors without external models", self.ctx())));
                    };
                    dcmm_lf_filter_step(
                        spec,
                        st,
                        &bp,
                        &cp,
                        FactorInputs { forecast, update },
                        &gate.factors,
                        &count.factors,
                        y,
                        self.tables,
                    )
                }
                .map_err(CliError::numerical(self.ctx()))?;
                Ok(StepOut {
                    state: State::Mixture(step.state),
                    forecast: Some(step.forecast),
                    log_density: Some(step.log_density),
                })
            }
            _ => unreachable!("model and state kinds always agree"),
        }
    }
}

/// One copula coordinate block: a component's path over `k` steps.
struct Component {
    spec: DglmSpec,
    states: StatePath,
    predictors: Vec<Vec<f64>>,
    factors: Vec<usize>,
    margins: Vec<MarginSpec>,
}

fn components(s: &SeriesRun<'_>, origin: i64, k: usize) -> Result<Vec<Component>> {
    let ctx = || format!("series {}, origin {origin}, stage forecast", s.name);
    let build = |part: &Part, state: &GaussianMoments| -> Result<Component> {
        let states = state_path(&part.spec, state, k).map_err(CliError::numerical(ctx()))?;
        let mut preds = Vec::with_capacity(k);
        let mut margins = Vec::with_capacity(k);
        for h in 1..=k as i64 {
            let time = origin + h;
            preds.push(predictors(s.data, &part.preds, time, &s.name)?);
            let trials = if part.spec.family.family == Family::Binomial {
                Some(s.data.slot(time).trials.ok_or_else(|| {
                    CliError::Data(format!("{}: no trial count at time {time}", ctx()))
                })?)
            } else {
                None
            };
            margins.push(MarginSpec {
                family: part.spec.family,
                trials,
            });
        }
        Ok(Component {
            spec: part.spec.clone(),
            states,
            predictors: preds,
            factors: part.factors.clone(),
            margins,
        })
    };
    match (&s.main.model, &s.main.state) {
        (Model::Single(p), State::Single(st)) => Ok(vec![build(p, st)?]),
        (Model::Mixture { gate, count, spec }, State::Mixture(st)) => {
            let pois = pois_current(spec, st).map_err(CliError::numerical(ctx()))?;
            Ok(vec![build(gate, &st.bern)?, build(count, &pois)?])
        }
        _ => unreachable!("model and state kinds always agree"),
    }
}

fn make_part(decl_model: &ModelDecl, family: FamilySpec, cols: &[usize], factors: &[usize], what: &str, with_factors: bool) -> Result<Part> {
    let n_pred = if decl_model.regression.is_some() { cols.len() } else { 0 };
    let model = if with_factors {
        decl_model.clone()
    } else {
        decl_model.without_factors()
    };
    let n_fac = if model.factors.is_some() { factors.len() } else { 0 };
    let spec = model.build(family, n_pred, n_fac, what)?;
    Ok(Part {
        spec,
        preds: if n_pred > 0 { cols.to_vec() } else { Vec::new() },
        factors: if n_fac > 0 { factors.to_vec() } else { Vec::new() },
    })
}

fn make_track(cfg: &RunConfig, decl: &SeriesDecl, cols: &[usize], with_factors: bool) -> Result<Track> {
    let factors = cfg.global_factor_index(decl);
    let what = format!("series {}", decl.name);
    // The factor model uses the declared prior; the baseline its own, or
    // the declared one with the factor entries dropped.
    let prior_for = |model: &ModelDecl,
                     family: FamilySpec,
                     declared: &PriorDecl,
                     baseline: Option<&PriorDecl>,
                     part: &Part,
                     label: &str|
     -> Result<GaussianMoments> {
        let p = match (with_factors, baseline) {
            (true, _) => declared.clone(),
            (false, Some(b)) => b.clone(),
            (false, None) => {
                let full = make_part(model, family, cols, &factors, label, true)?.spec;
                declared.without_factors(&full)
            }
        };
        p.moments(&part.spec, label)
    };
    let (model, count_model) = if with_factors {
        (&decl.model, decl.count_model.as_ref())
    } else {
        (
            decl.baseline_model.as_ref().unwrap_or(&decl.model),
            decl.baseline_count_model.as_ref().or(decl.count_model.as_ref()),
        )
    };
    if !decl.dcmm {
        let family = decl.family.spec(decl.precision)?;
        let part = make_part(model, family, cols, &factors, &what, with_factors)?;
        let st = prior_for(&decl.model, family, &decl.prior, decl.baseline_prior.as_ref(), &part, &what)?;
        return Ok(Track {
            model: Model::Single(part),
            state: State::Single(st),
        });
    }
    let (gate_what, count_what) = (format!("{what} gate"), format!("{what} count"));
    let bern = FamilySpec::bernoulli();
    let pois = FamilySpec::poisson();
    let gate = make_part(model, bern, cols, &factors, &gate_what, with_factors)?;
    let count_decl = count_model.unwrap_or(model);
    let count = make_part(count_decl, pois, cols, &factors, &count_what, with_factors)?;
    let gate_st = prior_for(&decl.model, bern, &decl.prior, decl.baseline_prior.as_ref(), &gate, &gate_what)?;
    let count_prior = decl.count_prior.as_ref().unwrap_or(&decl.prior);
    let count_st = prior_for(
        decl.count_model.as_ref().unwrap_or(&decl.model),
        pois,
        count_prior,
        decl.baseline_count_prior.as_ref(),
        &count,
        &count_what,
    )?;
    let spec = DcmmSpec::new(gate.spec.clone(), count.spec.clone())
        .map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    Ok(Track {
        model: Model::Mixture { gate, count, spec },
        state: State::Mixture(DcmmState::new(gate_st, count_st)),
    })
}

pub fn load_tables(cfg: &RunConfig) -> Result<Vec<VbTable>> {
    let Some(tc) = &cfg.vb_table else {
        return Ok(Vec::new());
    };
    let mut tables = Vec::new();
    for p in &tc.paths {
        let bytes = std::fs::read(p).map_err(|e| CliError::Config(format!("cannot read table {}: {e}", p.display())))?;
        tables.push(
            VbTable::from_bytes(&bytes)
                .map_err(|e| CliError::Config(format!("table {}: {e}", p.display())))?,
        );
    }
    let mut needed: Vec<FamilySpec> = Vec::new();
    for s in &cfg.series {
        let fams = if s.dcmm {
            vec![FamilySpec::bernoulli(), FamilySpec::poisson()]
        } else {
            vec![s.family.spec(s.precision)?]
        };
        for f in fams {
            if f.family != Family::Normal && !needed.contains(&f) {
                needed.push(f);
            }
        }
    }
    for f in needed {
        if tables.iter().all(|t| t.family() != &f) {
            let grid = GridSpec {
                f_points: tc.f_points,
                q_points: tc.q_points,
                ..GridSpec::default()
            };
            tables.push(VbTable::build(&f, grid).map_err(CliError::numerical("table build"))?);
        }
    }
    Ok(tables)
}

/// Times shared by every series the run touches.
fn time_range(cfg: &RunConfig, data: &ObservationTable) -> Result<(i64, i64)> {
    let names = cfg
        .series
        .iter()
        .map(|s| s.name.as_str())
        .chain(cfg.external.iter().map(|e| e.series.as_str()));
    let mut range: Option<(i64, i64, &str)> = None;
    for n in names {
        let s = data.get(n)?;
        match range {
            None => range = Some((s.start, s.end(), n)),
            Some((a, b, first)) if (a, b) != (s.start, s.end()) => {
                return Err(CliError::Data(format!(
                    "series {n} covers times {}..{} but {first} covers {a}..{b}; series must be aligned",
                    s.start,
                    s.end()
                )))
            }
            _ => {}
        }
    }
    let (a, b, _) = range.expect("config has at least one series");
    Ok((a, b))
}

struct Evaluation {
    pit: Vec<MetricSeries>,
    log_density: Vec<MetricSeries>,
    base_log_density: Vec<MetricSeries>,
    zape: Vec<Vec<MetricSeries>>,
    pit_sum: Vec<MetricSeries>,
    max_corr: MetricSeries,
}

pub fn run_pipeline(cfg: &RunConfig, data: &ObservationTable, stage: Stage) -> Result<RunResult> {
    let tables = load_tables(cfg)?;
    run_with_tables(cfg, data, stage, &tables)
}

/// [`run_pipeline`] on a dedicated pool of `threads` workers (default:
/// rayon's global pool).
pub fn run_pipeline_with_threads(
    cfg: &RunConfig,
    data: &ObservationTable,
    stage: Stage,
    threads: Option<usize>,
) -> Result<RunResult> {
    match threads {
        None => run_pipeline(cfg, data, stage),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| run_pipeline(cfg, data, stage))
        }
    }
}

pub fn run_with_tables(cfg: &RunConfig, data: &ObservationTable, stage: Stage, tables: &[VbTable]) -> Result<RunResult> {
    cfg.validate()?;
    let total_start = Instant::now();
    let tables: Vec<&VbTable> = tables.iter().collect();
    let (t0, t_end) = time_range(cfg, data)?;
    let w = cfg.window.unwrap_or(Window { start: t0, end: t_end });
    let w = Window {
        start: w.start.max(t0),
        end: w.end.min(t_end),
    };
    let mut result = RunResult::default();
    if w.start >= w.end {
        result.timings.insert("total".into(), total_start.elapsed().as_secs_f64());
        return Ok(result);
    }
    result.window = Some(w);
    let k = cfg.horizons;
    let loop_end = t_end.min(w.end + 1);
    let col = |names: &[String]| -> Result<Vec<usize>> { names.iter().map(|n| data.predictor_index(n)).collect() };

    let mut externals = Vec::with_capacity(cfg.external.len());
    for e in &cfg.external {
        let what = format!("external {}", e.name);
        let spec = e.model.build(
            FamilySpec::normal(1.0 / e.obs_variance).map_err(|err| CliError::Config(format!("{what}: {err}")))?,
            e.predictors.len(),
            0,
            &what,
        )?;
        let state = e.prior.moments(&spec, &what)?;
        let model = AggregateDlm::new(spec, state, e.factors.clone(), e.variance_learning)
            .map_err(|err| CliError::Config(format!("{what}: {err}")))?;
        externals.push(ExternalRun {
            name: e.name.clone(),
            data: data.get(&e.series)?,
            preds: col(&e.predictors)?,
            model,
        });
    }
    let mut runs = Vec::with_capacity(cfg.series.len());
    for s in &cfg.series {
        let cols = col(&s.predictors)?;
        runs.push(SeriesRun {
            name: s.name.clone(),
            data: data.get(&s.name)?,
            family: match s.family {
                FamilyDecl::Poisson => Family::Poisson,
                FamilyDecl::Bernoulli => Family::Bernoulli,
                FamilyDecl::Binomial => Family::Binomial,
                FamilyDecl::Normal => Family::Normal,
            },
            main: make_track(cfg, s, &cols, true)?,
            base: if cfg.baseline {
                Some(make_track(cfg, s, &cols, false)?)
            } else {
                None
            },
        });
    }

    // Beliefs from the current external states over horizons 0..=kk,
    // horizon h describing time `origin + h`.
    let emit = |externals: &[ExternalRun<'_>], origin: i64, kk: usize| -> Result<Option<LatentFactorBelief>> {
        if externals.is_empty() {
            return Ok(None);
        }
        let parts = externals
            .iter()
            .map(|e| {
                let preds = (0..=kk as i64)
                    .map(|h| predictors(e.data, &e.preds, (origin + h).max(t0), &e.name))
                    .collect::<Result<Vec<_>>>()?;
                e.model
                    .emit_belief(kk, &preds)
                    .map_err(CliError::numerical(format!("external {}, time {origin}, stage belief", e.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&LatentFactorBelief> = parts.iter().collect();
        LatentFactorBelief::independent_union(&refs)
            .map(Some)
            .map_err(CliError::numerical(format!("time {origin}, stage belief")))
    };

    let mut ev = Evaluation {
        pit: runs.iter().map(|r| MetricSeries::new(format!("pit:{}", r.name), 1, "per-step")).collect(),
        log_density: runs
            .iter()
            .map(|r| MetricSeries::new(format!("log_density:{}", r.name), 1, "per-step"))
            .collect(),
        base_log_density: runs
            .iter()
            .map(|r| MetricSeries::new(format!("baseline_log_density:{}", r.name), 1, "per-step"))
            .collect(),
        zape: runs
            .iter()
            .map(|r| {
                (1..=k)
                    .map(|h| MetricSeries::new(format!("zape:{}", r.name), h, "sample median"))
                    .collect()
            })
            .collect(),
        pit_sum: runs
            .iter()
            .map(|r| MetricSeries::new(format!("pit_sum:{}", r.name), k, format!("{k}-step sum")))
            .collect(),
        max_corr: MetricSeries::new("max_corr:all", 1, "one-step predictors"),
    };
    let levels = &cfg.output.quantiles;
    let mut filtered = String::from("series,time,component,coord,mean,variance\n");
    let mut quantiles = String::from("series,origin,horizon,time,mean");
    for p in levels {
        let _ = write!(quantiles, ",q{p}");
    }
    quantiles.push('\n');
    let mut samples_all = String::from("series,origin,sample,horizon,value\n");
    let mut samples_last = String::new();

    let mut prev = emit(&externals, t0 - 1, k.min((t_end - t0) as usize))?;
    let (mut t_filter, mut t_forecast) = (0.0, 0.0);
    for t in t0..loop_end {
        let start = Instant::now();
        for e in externals.iter_mut() {
            let preds = predictors(e.data, &e.preds, t, &e.name)?;
            let ctx = format!("external {}, time {t}, stage filter", e.name);
            e.model = match e.data.slot(t).value {
                Some(total) => e.model.filter_total(total, &preds).map_err(CliError::numerical(ctx))?.0,
                None => e.model.skip(&preds).map_err(CliError::numerical(ctx))?,
            };
        }
        let kk = k.min((t_end - 1 - t) as usize);
        let cur = emit(&externals, t, kk)?;
        let fc = prev.as_ref().map(|b| b.at(1));
        let up = cur.as_ref().map(|b| b.at(0));
        let outs = runs
            .par_iter()
            .map(|s| {
                let ctx = StepCtx {
                    series: s,
                    time: t,
                    forecast: fc.as_ref(),
                    update: up.as_ref(),
                    tables: &tables,
                };
                let main = ctx.run(&s.main)?;
                let base = s.base.as_ref().map(|b| ctx.run(b)).transpose()?;
                Ok((main, base))
            })
            .collect::<Result<Vec<_>>>()?;
        // The 1-step forecast for t was made at origin t - 1.
        let target_scored = t > w.start && t <= w.end;
        for (i, (s, (main, base))) in runs.iter_mut().zip(outs).enumerate() {
            if target_scored {
                if let (Some(dist), Some(y)) = (&main.forecast, s.data.slot(t).value) {
                    let u = open01(&mut stream_rng(derive_seed(cfg.seed, PIT_ONE_STREAM + i as u64), t as u64));
                    ev.pit[i].push(t, randomized_pit(dist, y, u));
                    if let Some(ld) = main.log_density {
                        ev.log_density[i].push(t, ld);
                    }
                    if let Some(ld) = base.as_ref().and_then(|b| b.log_density) {
                        ev.base_log_density[i].push(t, ld);
                    }
                }
            }
            s.main.state = main.state;
            if let (Some(b), Some(bo)) = (s.base.as_mut(), base) {
                b.state = bo.state;
            }
            if t >= w.start && t < w.end {
                write_filtered(&mut filtered, &s.name, t, &s.main)
                    .map_err(CliError::numerical(format!("series {}, time {t}, stage filter", s.name)))?;
            }
        }
        t_filter += start.elapsed().as_secs_f64();

        if stage != Stage::Filter && t >= w.start && t < w.end && kk >= 1 {
            let start = Instant::now();
            let fcst = forecast_origin(cfg, &runs, cur.as_ref(), t, kk, &tables)?;
            if let Some(c) = fcst.max_corr {
                ev.max_corr.push(t, c);
            }
            let mut block = String::new();
            for (i, s) in runs.iter().enumerate() {
                for h in 0..kk {
                    let mut col = fcst.columns[i][h].clone();
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    col.sort_by(f64::total_cmp);
                    let dist = PredictiveDist::Empirical {
                        discrete: col.iter().all(|v| v.fract() == 0.0),
                        values: col,
                    };
                    let time = t + h as i64 + 1;
                    let _ = write!(quantiles, "{},{t},{},{time},{}", s.name, h + 1, fmt_real(mean));
                    for p in levels {
                        let _ = write!(quantiles, ",{}", fmt_num(dist.quantile(*p)));
                    }
                    quantiles.push('\n');
                    if let Some(y) = s.data.slot(time).value {
                        ev.zape[i][h].push(time, zape(y, dist.median()));
                    }
                }
                if cfg.output.samples != SamplePolicy::None {
                    for sample in 0..cfg.samples {
                        for h in 0..kk {
                            let _ = writeln!(
                                block,
                                "{},{t},{sample},{},{}",
                                s.name,
                                h + 1,
                                fmt_num(fcst.columns[i][h][sample])
                            );
                        }
                    }
                }
                if kk == k && (t - w.start) % k as i64 == 0 {
                    let ys: Option<Vec<f64>> = (1..=k as i64).map(|h| s.data.slot(t + h).value).collect();
                    if let Some(ys) = ys {
                        let sums: Vec<f64> = (0..cfg.samples)
                            .map(|j| (0..k).map(|h| fcst.columns[i][h][j]).sum())
                            .collect();
                        let u = open01(&mut stream_rng(derive_seed(cfg.seed, PIT_SUM_STREAM + i as u64), t as u64));
                        ev.pit_sum[i].push(t, randomized_pit(&PredictiveDist::empirical(sums), ys.iter().sum(), u));
                    }
                }
            }
            match cfg.output.samples {
                SamplePolicy::All => samples_all.push_str(&block),
                SamplePolicy::Last => samples_last = block,
                SamplePolicy::None => {}
            }
            t_forecast += start.elapsed().as_secs_f64();
        }
        prev = cur;
    }

    let start = Instant::now();
    result.files.insert("filtered.csv".into(), filtered);
    if stage != Stage::Filter {
        result.files.insert("quantiles.csv".into(), quantiles);
        if cfg.output.samples != SamplePolicy::None {
            if cfg.output.samples == SamplePolicy::Last {
                samples_all.push_str(&samples_last);
            }
            result.files.insert("samples.csv".into(), samples_all);
        }
    }
    if stage == Stage::Evaluate {
        evaluate(cfg, &runs, ev, &mut result)?;
    }
    result.timings.insert("filter".into(), t_filter);
    result.timings.insert("forecast".into(), t_forecast);
    result.timings.insert("evaluate".into(), start.elapsed().as_secs_f64());
    result.timings.insert("total".into(), total_start.elapsed().as_secs_f64());
    Ok(result)
}

fn write_filtered(out: &mut String, name: &str, t: i64, track: &Track) -> dglm_core::Result<()> {
    let mut row = |component: &str, m: &GaussianMoments| {
        for i in 0..m.dim() {
            let _ = writeln!(
                out,
                "{name},{t},{component},{i},{},{}",
                fmt_real(m.mean[i]),
                fmt_real(m.cov[(i, i)])
            );
        }
    };
    match (&track.model, &track.state) {
        (Model::Single(_), State::Single(st)) => row("state", st),
        (Model::Mixture { spec, .. }, State::Mixture(st)) => {
            row("gate", &st.bern);
            row("count", &pois_current(spec, st)?);
        }
        _ => unreachable!("model and state kinds always agree"),
    }
    Ok(())
}

struct OriginForecast {
    /// `columns[series][h]` holds the S draws of `y_{t+h+1}`.
    columns: Vec<Vec<Vec<f64>>>,
    max_corr: Option<f64>,
}

fn forecast_origin(
    cfg: &RunConfig,
    runs: &[SeriesRun<'_>],
    belief: Option<&LatentFactorBelief>,
    t: i64,
    k: usize,
    tables: &[&VbTable],
) -> Result<OriginForecast> {
    let ctx = || format!("time {t}, stage forecast");
    let comps: Vec<Vec<Component>> = runs
        .par_iter()
        .map(|s| components(s, t, k))
        .collect::<Result<_>>()?;
    let belief = match belief {
        Some(b) => b.horizon_range(1..k + 1).map_err(CliError::numerical(ctx()))?,
        None => LatentFactorBelief::known(vec![DVector::zeros(0); k]).map_err(CliError::numerical(ctx()))?,
    };
    let horizons: Vec<usize> = (0..k).collect();
    let flat: Vec<&Component> = comps.iter().flatten().collect();
    let paths: Vec<SeriesPath<'_>> = flat
        .iter()
        .map(|c| SeriesPath {
            spec: &c.spec,
            states: &c.states,
            predictors: &c.predictors,
            factor_index: &c.factors,
            belief_horizons: &horizons,
        })
        .collect();
    let joint = assemble_joint(&paths, &belief).map_err(CliError::numerical(ctx()))?;
    let margins: Vec<MarginSpec> = flat.iter().flat_map(|c| c.margins.iter().copied()).collect();
    let model = build_copula(&joint, &margins, cfg.copula, tables).map_err(CliError::numerical(ctx()))?;
    let draws = sample_paths(&model, cfg.samples, derive_seed(cfg.seed, t as u64)).map_err(CliError::numerical(ctx()))?;

    let max_corr = if flat.len() > 1 {
        let idx: Vec<usize> = (0..flat.len()).map(|c| c * k).collect();
        let q = DMatrix::from_fn(idx.len(), idx.len(), |a, b| joint.q[(idx[a], idx[b])]);
        max_pairwise_correlation(&q).ok().map(|(c, _)| c)
    } else {
        None
    };
    let mut columns = Vec::with_capacity(runs.len());
    let mut off = 0;
    for c in &comps {
        let col = |j: usize| draws.samples.column(j).iter().copied().collect::<Vec<f64>>();
        let cols: Vec<Vec<f64>> = if c.len() == 1 {
            (0..k).map(|h| col(off + h)).collect()
        } else {
            (0..k)
                .map(|h| {
                    let z = draws.samples.column(off + h);
                    let x = draws.samples.column(off + k + h);
                    z.iter().zip(x.iter()).map(|(z, x)| z * (1.0 + x)).collect()
                })
                .collect()
        };
        off += c.len() * k;
        columns.push(cols);
    }
    Ok(OriginForecast { columns, max_corr })
}

fn evaluate(cfg: &RunConfig, runs: &[SeriesRun<'_>], ev: Evaluation, result: &mut RunResult) -> Result<()> {
    let mut metrics = String::from("metric,series,horizon,aggregation,time,value\n");
    let mut all: Vec<MetricSeries> = Vec::new();
    for (i, s) in runs.iter().enumerate() {
        all.push(ev.pit[i].clone());
        all.push(ev.log_density[i].clone());
        if cfg.baseline {
            all.push(ev.base_log_density[i].clone());
        }
        all.extend(ev.zape[i].iter().cloned());
        all.push(ev.pit_sum[i].clone());
        for h in 0..cfg.horizons {
            let z = &ev.zape[i][h];
            if !z.is_empty() {
                result.summary.mean_zape.insert(format!("{}:h{}", s.name, h + 1), z.mean());
            }
        }
    }
    if !ev.max_corr.is_empty() {
        all.push(ev.max_corr.clone());
    }
    for m in &all {
        let (metric, series) = m.name.split_once(':').unwrap_or((&m.name, ""));
        for (t, v) in m.times.iter().zip(&m.values) {
            let _ = writeln!(metrics, "{metric},{series},{},{},{t},{}", m.horizon, m.aggregation, fmt_real(*v));
        }
        if metric.starts_with("pit") && !m.is_empty() {
            let (d, p) = ks_uniform(&m.values);
            result.summary.pit.push(KsSummary {
                metric: m.name.clone(),
                horizon: m.horizon,
                n: m.len(),
                ks_stat: d,
                p_value: p,
            });
        }
    }
    result.files.insert("metrics.csv".into(), metrics);

    if cfg.baseline {
        let mut lpdr = String::from("series,time,value\n");
        let mut total: BTreeMap<i64, f64> = BTreeMap::new();
        for (i, s) in runs.iter().enumerate() {
            let (a, b) = (&ev.base_log_density[i], &ev.log_density[i]);
            if a.times != b.times {
                return Err(CliError::Data(format!(
                    "series {}: baseline and model scored different times",
                    s.name
                )));
            }
            let cum = lpdr_accumulate(&a.values, &b.values).map_err(CliError::numerical("lpdr"))?;
            let mut m = MetricSeries::new(format!("lpdr:{}", s.name), 1, "cumulative");
            for ((t, c), (x, y)) in a.times.iter().zip(&cum).zip(a.values.iter().zip(&b.values)) {
                m.push(*t, *c);
                *total.entry(*t).or_default() += x - y;
            }
            if let Some(last) = m.values.last() {
                result.summary.lpdr_terminal.insert(s.name.clone(), *last);
            }
            result.lpdr.push((s.name.clone(), m));
        }
        let mut m = MetricSeries::new("lpdr:all", 1, "cumulative");
        let mut acc = 0.0;
        for (t, v) in total {
            acc += v;
            m.push(t, acc);
        }
        if let Some(last) = m.values.last() {
            result.summary.lpdr_terminal.insert("all".into(), *last);
        }
        result.lpdr.push(("all".into(), m));
        for (name, m) in &result.lpdr {
            for (t, v) in m.times.iter().zip(&m.values) {
                let _ = writeln!(lpdr, "{name},{t},{}", fmt_real(*v));
            }
        }
        result.files.insert("lpdr.csv".into(), lpdr);
    }
    result.metrics = all;
    Ok(())
}
