//! Synthetic data from known multiscale generative models, each with a
//! matching default run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use dglm_core::sampling::{open01, poisson, std_normal, stream_rng, StreamRng};
use dglm_core::{CopulaSpec, FactorCoord, VarianceLearning};
use serde::{Deserialize, Serialize};

use crate::config::{
    ExternalDecl, FactorRef, FamilyDecl, ModelDecl, OutputConfig, PriorDecl, RunConfig, SeasonalDecl, SeriesDecl,
    SCHEMA_VERSION,
};
use crate::data::{ObservationTable, SeriesData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Two zero-inflated items plus a store total sharing a weekly,
    /// holiday-driven factor.
    RetailDcmm,
    /// Origin-destination flows into one node with shared inflow and
    /// per-origin outflow factors.
    NetworkFlows,
    /// Independent Poisson series with a random-walk level and a weekly
    /// cycle.
    PlainPoisson,
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "retail_dcmm" => Ok(Self::RetailDcmm),
            "network_flows" => Ok(Self::NetworkFlows),
            "plain_poisson" => Ok(Self::PlainPoisson),
            _ => Err(format!(
                "unknown scenario {s:?} (retail_dcmm, network_flows, plain_poisson)"
            )),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RetailDcmm => "retail_dcmm",
            Self::NetworkFlows => "network_flows",
            Self::PlainPoisson => "plain_poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub steps: usize,
    /// Retail: probability an item sells at all on a day.
    pub gate_prob: f64,
    /// Retail: scale of the shared factor (0 makes items independent).
    pub factor_sd: f64,
    /// Network: number of origins flowing into the destination.
    pub origins: usize,
    /// Network: smallest and largest mean flow into the destination.
    pub flow_rates: (f64, f64),
    /// Plain: number of series.
    pub series: usize,
    /// Plain: mean count.
    pub base_rate: f64,
    /// Plain: random-walk innovation sd of the log level.
    pub level_sd: f64,
    pub horizons: usize,
    pub samples: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            steps: 365,
            gate_prob: 0.85,
            factor_sd: 1.0,
            origins: 11,
            flow_rates: (1.5, 9.0),
            series: 1,
            base_rate: 20.0,
            level_sd: 0.03,
            horizons: 7,
            samples: 2000,
        }
    }
}

/// Generated data, the run configuration that matches the generator, and
/// the latent factor paths.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub table: ObservationTable,
    pub config: RunConfig,
    pub factors: BTreeMap<String, Vec<f64>>,
}

pub fn synth_generate(scenario: Scenario, params: &SynthParams, seed: u64) -> Synthetic {
    match scenario {
        Scenario::RetailDcmm => retail(params, seed),
        Scenario::NetworkFlows => network(params, seed),
        Scenario::PlainPoisson => plain(params, seed),
    }
}

struct Builder {
    n_pred: usize,
    series: BTreeMap<String, SeriesData>,
}

impl Builder {
    fn new(n_pred: usize) -> Self {
        Self {
            n_pred,
            series: BTreeMap::new(),
        }
    }

    fn push(&mut self, name: &str, value: f64, predictors: &[f64]) {
        let n = self.n_pred;
        let s = self.series.entry(name.to_string()).or_insert_with(|| SeriesData {
            start: 0,
            values: Vec::new(),
            trials: Vec::new(),
            predictors: vec![Vec::new(); n],
        });
        s.values.push(Some(value));
        s.trials.push(None);
        for (col, v) in s.predictors.iter_mut().zip(predictors) {
            col.push(*v);
        }
    }

    fn finish(self, names: &[&str]) -> ObservationTable {
        ObservationTable {
            predictor_names: names.iter().map(|s| s.to_string()).collect(),
            series: self.series,
        }
    }
}

/// Stationary AR(1) path.
fn ar1(rng: &mut StreamRng, n: usize, rho: f64, sd: f64) -> Vec<f64> {
    let mut x = sd / (1.0 - rho * rho).sqrt() * std_normal(rng);
    (0..n)
        .map(|_| {
            x = rho * x + sd * std_normal(rng);
            x
        })
        .collect()
}

fn base_config(seed: u64, params: &SynthParams) -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        horizons: params.horizons,
        samples: params.samples,
        copula: CopulaSpec::Gaussian,
        vb_table: None,
        window: None,
        baseline: false,
        output: OutputConfig::default(),
        external: Vec::new(),
        series: Vec::new(),
    }
}

fn prior(mean: Vec<f64>, variance: f64, factor_variance: Option<f64>) -> PriorDecl {
    PriorDecl {
        mean: Some(mean),
        variance,
        factor_mean: 1.0,
        factor_variance,
    }
}

const RETAIL_WEEK: [f64; 7] = [0.2, 0.05, -0.05, -0.15, -0.1, 0.1, 0.25];
const RETAIL_ITEMS: [f64; 2] = [3.0, 1.5];
const RETAIL_REST: f64 = 300.0;

fn retail(params: &SynthParams, seed: u64) -> Synthetic {
    let n = params.steps;
    let mut rng = stream_rng(seed, 0);
    let week_mean = RETAIL_WEEK.iter().sum::<f64>() / 7.0;
    let u = ar1(&mut rng, n, 0.95, 0.05);
    let mut phi = Vec::with_capacity(n);
    let mut b = Builder::new(2);
    for t in 0..n {
        let holiday = if open01(&mut rng) < 1.0 / 30.0 { 1.0 } else { 0.0 };
        let f = params.factor_sd * (RETAIL_WEEK[t % 7] - week_mean + u[t] + 0.4 * holiday);
        phi.push(f);
        let mut total = poisson(&mut rng, RETAIL_REST * f.exp()) as f64;
        for (i, c) in RETAIL_ITEMS.iter().enumerate() {
            let promo = if open01(&mut rng) < 0.15 { 1.0 } else { 0.0 };
            let open = open01(&mut rng) < params.gate_prob;
            let x = poisson(&mut rng, c * (f + 0.4 * promo).exp()) as f64;
            let y = if open { 1.0 + x } else { 0.0 };
            total += y;
            b.push(&format!("item_{}", i + 1), y, &[promo, holiday]);
        }
        b.push("total", total, &[0.0, holiday]);
    }

    let total_mean = RETAIL_REST + RETAIL_ITEMS.iter().sum::<f64>();
    let mut config = base_config(seed, params);
    config.baseline = true;
    config.external.push(ExternalDecl {
        name: "store".into(),
        series: "total".into(),
        model: ModelDecl {
            level: Some(0.99),
            seasonal: vec![SeasonalDecl {
                period: 7.0,
                harmonics: vec![1, 2, 3],
                discount: 0.995,
            }],
            regression: Some(0.995),
            ..Default::default()
        },
        obs_variance: 0.005,
        variance_learning: Some(VarianceLearning {
            n: 5.0,
            s: 0.005,
            discount: 0.99,
        }),
        predictors: vec!["holiday".into()],
        // Log-total forecast, current day-of-week effect, holiday effect.
        factors: vec![FactorCoord::LinearPredictor, FactorCoord::Block(1), FactorCoord::Block(2)],
        prior: prior(
            std::iter::once(total_mean.ln()).chain([0.0; 7]).collect(),
            0.1,
            None,
        ),
    });
    let gate = params.gate_prob.clamp(0.02, 0.98);
    for (i, c) in RETAIL_ITEMS.iter().enumerate() {
        config.series.push(SeriesDecl {
            name: format!("item_{}", i + 1),
            family: FamilyDecl::Poisson,
            precision: None,
            dcmm: true,
            model: ModelDecl {
                level: Some(0.995),
                ..Default::default()
            },
            count_model: Some(ModelDecl {
                level: Some(0.99),
                regression: Some(0.995),
                factors: Some(0.999),
                ..Default::default()
            }),
            predictors: vec!["promo".into()],
            factors: vec![FactorRef {
                external: "store".into(),
                coord: 0,
            }],
            prior: prior(vec![(gate / (1.0 - gate)).ln()], 1.0, None),
            count_prior: Some(prior(vec![(c / total_mean).ln(), 0.0, 1.0], 0.25, Some(0.05))),
            baseline_model: None,
            baseline_count_model: None,
            baseline_prior: None,
            baseline_count_prior: Some(prior(vec![c.ln(), 0.0], 0.25, None)),
        });
    }
    Synthetic {
        table: b.finish(&["promo", "holiday"]),
        config,
        factors: BTreeMap::from([("store".to_string(), phi)]),
    }
}

const OTHER_OUT: f64 = 40.0;
const OTHER_IN: f64 = 100.0;

/// Local linear growth model on a log total with mean `exp(level)` whose
/// log level moves with innovation variance `w`.
fn llgm(name: &str, level: f64, w: f64) -> ExternalDecl {
    ExternalDecl {
        name: name.into(),
        series: name.into(),
        model: ModelDecl {
            trend: Some(matched_discount(w, (-level).exp())),
            ..Default::default()
        },
        obs_variance: 0.01,
        variance_learning: Some(VarianceLearning {
            n: 5.0,
            s: 0.01,
            discount: 0.99,
        }),
        predictors: Vec::new(),
        factors: vec![FactorCoord::LinearPredictor],
        prior: prior(vec![level, 0.0], 0.05, None),
    }
}

fn network(params: &SynthParams, seed: u64) -> Synthetic {
    let n = params.steps;
    let m = params.origins.max(1);
    let (lo, hi) = params.flow_rates;
    let rates: Vec<f64> = (0..m)
        .map(|i| if m == 1 { lo } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 })
        .collect();
    let mut rng = stream_rng(seed, 1);
    let phi = ar1(&mut rng, n, 0.98, 0.1);
    let omega: Vec<Vec<f64>> = (0..m).map(|_| ar1(&mut rng, n, 0.98, 0.05)).collect();
    let mut b = Builder::new(0);
    for t in 0..n {
        let mut into = poisson(&mut rng, OTHER_IN * phi[t].exp()) as f64;
        for i in 0..m {
            let flow = poisson(&mut rng, rates[i] * (phi[t] + omega[i][t]).exp()) as f64;
            let other = poisson(&mut rng, OTHER_OUT * omega[i][t].exp()) as f64;
            into += flow;
            b.push(&format!("flow_{}", i + 1), flow, &[]);
            b.push(&format!("out_{}", i + 1), flow + other, &[]);
        }
        b.push("in_news", into, &[]);
    }

    let c_in = (OTHER_IN + rates.iter().sum::<f64>()).ln();
    let mut config = base_config(seed, params);
    config.baseline = true;
    config.external.push(llgm("in_news", c_in, 0.1f64.powi(2)));
    for (i, r) in rates.iter().enumerate() {
        let c_out = (OTHER_OUT + r).ln();
        config.external.push(llgm(&format!("out_{}", i + 1), c_out, 0.05f64.powi(2)));
        config.series.push(SeriesDecl {
            name: format!("flow_{}", i + 1),
            family: FamilyDecl::Poisson,
            precision: None,
            dcmm: false,
            model: ModelDecl {
                level: Some(0.999),
                factors: Some(1.0),
                ..Default::default()
            },
            count_model: None,
            predictors: Vec::new(),
            factors: vec![
                FactorRef {
                    external: format!("out_{}", i + 1),
                    coord: 0,
                },
                FactorRef {
                    external: "in_news".into(),
                    coord: 0,
                },
            ],
            prior: prior(vec![r.ln() - c_in - c_out, 1.0, 1.0], 0.25, Some(0.03)),
            count_prior: None,
            // The decoupled model has to track the shared drift with its
            // level alone, so it gets the discount matched to it.
            baseline_model: Some(ModelDecl {
                level: Some(matched_discount(0.1f64.powi(2) + 0.05f64.powi(2), 1.0 / r)),
                ..Default::default()
            }),
            baseline_count_model: None,
            baseline_prior: Some(prior(vec![r.ln()], 0.25, None)),
            baseline_count_prior: None,
        });
    }
    let mut factors = BTreeMap::from([("in_news".to_string(), phi)]);
    for (i, w) in omega.into_iter().enumerate() {
        factors.insert(format!("out_{}", i + 1), w);
    }
    Synthetic {
        table: b.finish(&[]),
        config,
        factors,
    }
}

/// Discount matching the steady-state Kalman gain of a local level with
/// innovation variance `w` observed with variance `v`.
pub fn matched_discount(w: f64, v: f64) -> f64 {
    let c = 0.5 * (-w + (w * w + 4.0 * w * v).sqrt());
    c / (c + w)
}

fn plain(params: &SynthParams, seed: u64) -> Synthetic {
    let n = params.steps;
    let mut b = Builder::new(0);
    let mut rng = stream_rng(seed, 2);
    let levels: Vec<Vec<f64>> = (0..params.series)
        .map(|_| {
            let mut l = params.base_rate.ln();
            (0..n)
                .map(|_| {
                    l += params.level_sd * std_normal(&mut rng);
                    l
                })
                .collect()
        })
        .collect();
    for t in 0..n {
        let season = 0.3 * (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin();
        for (i, l) in levels.iter().enumerate() {
            let y = poisson(&mut rng, (l[t] + season).exp()) as f64;
            b.push(&format!("y_{}", i + 1), y, &[]);
        }
    }
    let delta = matched_discount(params.level_sd.powi(2), 1.0 / params.base_rate);
    let mut config = base_config(seed, params);
    for i in 0..params.series {
        config.series.push(SeriesDecl {
            name: format!("y_{}", i + 1),
            family: FamilyDecl::Poisson,
            precision: None,
            dcmm: false,
            model: ModelDecl {
                level: Some(delta),
                seasonal: vec![SeasonalDecl {
                    period: 7.0,
                    harmonics: vec![1, 2, 3],
                    discount: 0.999,
                }],
                ..Default::default()
            },
            count_model: None,
            predictors: Vec::new(),
            factors: Vec::new(),
            prior: prior(
                std::iter::once(params.base_rate.ln()).chain([0.0; 6]).collect(),
                0.1,
                None,
            ),
            count_prior: None,
            baseline_model: None,
            baseline_count_model: None,
            baseline_prior: None,
            baseline_count_prior: None,
        });
    }
    let factors = levels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (format!("y_{}", i + 1), l))
        .collect();
    Synthetic {
        table: b.finish(&[]),
        config,
        factors,
    }
}
