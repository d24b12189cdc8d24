//! Forecast evaluation: ZAPE, randomized PIT, cumulative log predictive
//! density ratios, correlation scans and Kolmogorov-Smirnov statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::PredictiveDist;

/// Zero-adjusted absolute percent error: `f` when `y = 0`, else `|y - f| / y`.
pub fn zape(y: f64, f: f64) -> f64 {
    if y == 0.0 {
        f
    } else {
        (y - f).abs() / y
    }
}

/// `cdf(y-1) + u (cdf(y) - cdf(y-1))` for discrete forecasts, `cdf(y)`
/// otherwise.
pub fn randomized_pit(dist: &PredictiveDist, y: f64, u: f64) -> f64 {
    if !dist.is_discrete() {
        return dist.cdf(y).clamp(0.0, 1.0);
    }
    let hi = dist.cdf(y);
    let lo = if y - 1.0 < 0.0 { 0.0 } else { dist.cdf(y - 1.0) };
    (lo + u * (hi - lo)).clamp(0.0, 1.0)
}

/// Partial sums of `ln p_a - ln p_b`; negative values favor `b`.
pub fn lpdr_accumulate(log_dens_a: &[f64], log_dens_b: &[f64]) -> Result<Vec<f64>> {
    if log_dens_a.len() != log_dens_b.len() {
        return Err(Error::dim(format!(
            "log densities have lengths {} and {}",
            log_dens_a.len(),
            log_dens_b.len()
        )));
    }
    let mut acc = 0.0;
    Ok(log_dens_a
        .iter()
        .zip(log_dens_b)
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect())
}

/// Largest off-diagonal correlation implied by a covariance matrix, with
/// its index pair (row < column). Ties keep the first pair in row-major
/// order; a 1x1 matrix gives `(0, (0, 0))`.
pub fn max_pairwise_correlation(q: &DMatrix<f64>) -> Result<(f64, (usize, usize))> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(Error::dim("covariance matrix is not square"));
    }
    if let Some(i) = (0..n).find(|&i| !(q[(i, i)] > 0.0)) {
        return Err(Error::InvalidParams(format!(
            "variance at index {i} is not positive"
        )));
    }
    let sd: Vec<f64> = (0..n).map(|i| q[(i, i)].sqrt()).collect();
    let mut best = (0.0, (0, 0));
    let mut found = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = q[(i, j)] / (sd[i] * sd[j]);
            if !found || c > best.0 {
                best = (c, (i, j));
                found = true;
            }
        }
    }
    Ok(best)
}

/// One-sample KS statistic of `values` against Uniform(0, 1) and its
/// asymptotic p-value.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / nf - x).max(x - i as f64 / nf);
    }
    (d, kolmogorov_pvalue(d, nf))
}

/// `P(D_n > d)` via the Kolmogorov limit with Stephens' small-sample
/// correction.
pub fn kolmogorov_pvalue(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Maximum absolute difference between the empirical cdfs of two samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One named metric over an evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub horizon: usize,
    /// How values were aggregated, e.g. "per-step" or "7-step sum".
    pub aggregation: String,
    pub times: Vec<i64>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, horizon: usize, aggregation: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            horizon,
            aggregation: aggregation.into(),
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, time: i64, value: f64) {
        self.times.push(time);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
