//! Run configuration: one TOML file with an explicit schema version.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dglm_core::dglm::ModelBuilder;
use dglm_core::{CopulaSpec, DglmSpec, FactorCoord, FamilySpec, GaussianMoments, VarianceLearning};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Forecast horizons `k`.
    pub horizons: usize,
    /// Monte Carlo sample count `S` per forecast origin.
    pub samples: usize,
    #[serde(default)]
    pub copula: CopulaSpec,
    #[serde(default)]
    pub vb_table: Option<TableConfig>,
    #[serde(default)]
    pub window: Option<Window>,
    /// Also run factor-free copies of every series and report the
    /// cumulative log predictive density ratio against them.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub external: Vec<ExternalDecl>,
    pub series: Vec<SeriesDecl>,
}

/// Forecast origins `start <= t < end` (data time indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    /// Prebuilt tables (from `table-gen`); families not covered are built.
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_points")]
    pub f_points: usize,
    #[serde(default = "default_points")]
    pub q_points: usize,
}

fn default_points() -> usize {
    257
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePolicy {
    /// Every origin's sample paths.
    All,
    /// Only the last origin's.
    #[default]
    Last,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub samples: SamplePolicy,
    #[serde(default = "default_levels")]
    pub quantiles: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            samples: SamplePolicy::default(),
            quantiles: default_levels(),
        }
    }
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyDecl {
    #[default]
    Poisson,
    Bernoulli,
    Binomial,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonalDecl {
    pub period: f64,
    pub harmonics: Vec<usize>,
    pub discount: f64,
}

/// State components in builder order: level, trend, seasonal blocks,
/// regression, factors. Values are discount factors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDecl {
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default)]
    pub trend: Option<f64>,
    #[serde(default)]
    pub seasonal: Vec<SeasonalDecl>,
    #[serde(default)]
    pub regression: Option<f64>,
    #[serde(default)]
    pub factors: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDecl {
    /// Full prior mean; zeros (factor coefficients `factor_mean`) if absent.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub variance: f64,
    #[serde(default)]
    pub factor_mean: f64,
    #[serde(default)]
    pub factor_variance: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for PriorDecl {
    fn default() -> Self {
        Self {
            mean: None,
            variance: 1.0,
            factor_mean: 0.0,
            factor_variance: None,
        }
    }
}

/// Factor coordinate `coord` of external model `external`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorRef {
    pub external: String,
    pub coord: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesDecl {
    pub name: String,
    #[serde(default)]
    pub family: FamilyDecl,
    /// Observation precision for normal series.
    #[serde(default)]
    pub precision: Option<f64>,
    /// Count mixture: `model` is the gate, `count_model` (default `model`)
    /// the shifted Poisson.
    #[serde(default)]
    pub dcmm: bool,
    pub model: ModelDecl,
    #[serde(default)]
    pub count_model: Option<ModelDecl>,
    #[serde(default)]
    pub predictors: Vec<String>,
    #[serde(default)]
    pub factors: Vec<FactorRef>,
    #[serde(default)]
    pub prior: PriorDecl,
    #[serde(default)]
    pub count_prior: Option<PriorDecl>,
    /// Models and priors for the factor-free baseline copies. Default:
    /// the factor model's, with the factor block dropped.
    #[serde(default)]
    pub baseline_model: Option<ModelDecl>,
    #[serde(default)]
    pub baseline_count_model: Option<ModelDecl>,
    #[serde(default)]
    pub baseline_prior: Option<PriorDecl>,
    #[serde(default)]
    pub baseline_count_prior: Option<PriorDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDecl {
    pub name: String,
    /// Data series holding the raw aggregate total.
    pub series: String,
    pub model: ModelDecl,
    pub obs_variance: f64,
    #[serde(default)]
    pub variance_learning: Option<VarianceLearning>,
    #[serde(default)]
    pub predictors: Vec<String>,
    pub factors: Vec<FactorCoord>,
    #[serde(default)]
    pub prior: PriorDecl,
}

impl FamilyDecl {
    pub fn spec(self, precision: Option<f64>) -> Result<FamilySpec> {
        let fam = match self {
            FamilyDecl::Poisson => FamilySpec::poisson(),
            FamilyDecl::Bernoulli => FamilySpec::bernoulli(),
            FamilyDecl::Binomial => FamilySpec::binomial(),
            FamilyDecl::Normal => FamilySpec::normal(precision.unwrap_or(1.0))
                .map_err(|e| CliError::Config(format!("normal precision: {e}")))?,
        };
        if precision.is_some() && self != FamilyDecl::Normal {
            return Err(CliError::Config("precision only applies to normal series".into()));
        }
        Ok(fam)
    }
}

impl ModelDecl {
    pub fn build(&self, family: FamilySpec, n_predictors: usize, n_factors: usize, what: &str) -> Result<DglmSpec> {
        let mut b = ModelBuilder::new(family);
        if let Some(d) = self.level {
            b = b.level(d);
        }
        if let Some(d) = self.trend {
            b = b.trend(d);
        }
        for s in &self.seasonal {
            b = b.seasonal(s.period, &s.harmonics, s.discount);
        }
        // Predictors and factors go to components that declare a discount
        // for them; `validate` checks each series uses what it lists.
        match (n_predictors, self.regression) {
            (0, Some(_)) => return Err(CliError::Config(format!("{what}: regression discount without predictors"))),
            (n, Some(d)) => b = b.regression(n, d),
            (_, None) => {}
        }
        match (n_factors, self.factors) {
            (0, Some(_)) => return Err(CliError::Config(format!("{what}: factor discount without factors"))),
            (n, Some(d)) => b = b.factors(n, d),
            (_, None) => {}
        }
        b.build().map_err(|e| CliError::Config(format!("{what}: {e}")))
    }

    /// The same model with the factor block dropped.
    pub fn without_factors(&self) -> Self {
        Self {
            factors: None,
            ..self.clone()
        }
    }
}

impl PriorDecl {
    pub fn moments(&self, spec: &DglmSpec, what: &str) -> Result<GaussianMoments> {
        let d = spec.state_dim();
        let beta = spec.factor_slice().unwrap_or(0..0);
        let mean = match &self.mean {
            Some(m) if m.len() == d => DVector::from_column_slice(m),
            Some(m) => {
                return Err(CliError::Config(format!(
                    "{what}: prior mean has {} entries, state has {d}",
                    m.len()
                )))
            }
            None => DVector::from_fn(d, |i, _| if beta.contains(&i) { self.factor_mean } else { 0.0 }),
        };
        if !(self.variance > 0.0) || self.factor_variance.is_some_and(|v| !(v > 0.0)) {
            return Err(CliError::Config(format!("{what}: prior variances must be positive")));
        }
        let fv = self.factor_variance.unwrap_or(self.variance);
        let cov = DMatrix::from_fn(d, d, |i, j| match (i == j, beta.contains(&i)) {
            (false, _) => 0.0,
            (true, true) => fv,
            (true, false) => self.variance,
        });
        GaussianMoments::new(mean, cov).map_err(|e| CliError::Config(format!("{what}: {e}")))
    }

    /// Same prior restricted to the factor-free model.
    pub fn without_factors(&self, spec: &DglmSpec) -> Self {
        let beta = spec.factor_slice().unwrap_or(0..0);
        Self {
            mean: self.mean.as_ref().map(|m| {
                m.iter()
                    .enumerate()
                    .filter(|(i, _)| !beta.contains(i))
                    .map(|(_, v)| *v)
                    .collect()
            }),
            ..self.clone()
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.horizons == 0 {
            return bad("horizons must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if let Err(e) = self.copula.validate() {
            return bad(e.to_string());
        }
        if self.output.quantiles.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("quantile levels must lie in (0, 1)".into());
        }
        if self.series.is_empty() {
            return bad("no series declared".into());
        }
        let mut names = BTreeSet::new();
        for e in &self.external {
            if !names.insert(e.name.as_str()) {
                return bad(format!("external model name {} is repeated", e.name));
            }
            if !(e.obs_variance > 0.0) {
                return bad(format!("external {}: obs_variance must be positive", e.name));
            }
            if e.model.factors.is_some() {
                return bad(format!("external {}: aggregate models take no factors", e.name));
            }
        }
        let mut series = BTreeSet::new();
        for s in &self.series {
            if !series.insert(s.name.as_str()) {
                return bad(format!("series {} is declared twice", s.name));
            }
            if s.dcmm && s.family != FamilyDecl::Poisson {
                return bad(format!("series {}: a count mixture is declared with family poisson", s.name));
            }
            if !s.dcmm && (s.count_model.is_some() || s.count_prior.is_some()) {
                return bad(format!("series {}: count_model needs dcmm = true", s.name));
            }
            let parts: Vec<&ModelDecl> = std::iter::once(&s.model).chain(s.count_model.as_ref()).collect();
            let parts = if s.dcmm && s.count_model.is_none() { vec![&s.model, &s.model] } else { parts };
            if !s.predictors.is_empty() && parts.iter().all(|m| m.regression.is_none()) {
                return bad(format!("series {}: predictors need a regression discount", s.name));
            }
            if !s.factors.is_empty() && parts.iter().all(|m| m.factors.is_none()) {
                return bad(format!("series {}: factors need a factor discount", s.name));
            }
            for f in &s.factors {
                let Some(ext) = self.external.iter().find(|e| e.name == f.external) else {
                    return bad(format!("series {}: unknown external model {}", s.name, f.external));
                };
                if f.coord >= ext.factors.len() {
                    return bad(format!(
                        "series {}: external {} has {} factor coordinates, asked for {}",
                        s.name,
                        ext.name,
                        ext.factors.len(),
                        f.coord
                    ));
                }
            }
        }
        if let Some(w) = self.window {
            if w.end < w.start {
                return bad(format!("window end {} precedes start {}", w.end, w.start));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Global belief coordinate of each external's first factor.
    pub fn factor_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.external.len());
        let mut acc = 0;
        for e in &self.external {
            off.push(acc);
            acc += e.factors.len();
        }
        off
    }

    pub fn global_factor_index(&self, s: &SeriesDecl) -> Vec<usize> {
        let off = self.factor_offsets();
        s.factors
            .iter()
            .map(|f| {
                let e = self.external.iter().position(|e| e.name == f.external).expect("validated");
                off[e] + f.coord
            })
            .collect()
    }
}
