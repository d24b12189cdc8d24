//! Simulated forecast paths and the chunked, seed-stable parallel driver
//! both forecasters use.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;
use crate::sampling::{stream_rng, StreamRng};

/// Samples per RNG stream. Chunk `c` always draws from stream `c` of the
/// master seed, so output does not depend on the worker count.
pub const CHUNK: usize = 1024;

/// `S x p` matrix of simulated outcomes (one row per sample path).
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPaths {
    pub samples: DMatrix<f64>,
    /// Sampled linear predictors, when the forecaster produces them.
    pub lambda_draws: Option<DMatrix<f64>>,
    pub seed: u64,
}

impl ForecastPaths {
    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.column(j).iter().copied().collect()
    }

    /// Per-sample sum over the given columns.
    pub fn sum_over(&self, cols: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_samples()];
        for &c in cols {
            for (o, v) in out.iter_mut().zip(self.samples.column(c).iter()) {
                *o += v;
            }
        }
        out
    }

    /// Per-sample sum across all columns.
    pub fn path_sums(&self) -> Vec<f64> {
        let cols: Vec<usize> = (0..self.dim()).collect();
        self.sum_over(&cols)
    }
}

/// Fill an `S x width` output (and optionally an `S x lam_width` one) by
/// calling `fill(rng, rows, y_rows, lam_rows)` on row-major chunks in
/// parallel.
pub(crate) fn run_chunked<F>(
    samples: usize,
    width: usize,
    lam_width: usize,
    seed: u64,
    fill: F,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)>
where
    F: Fn(&mut StreamRng, usize, &mut [f64], &mut [f64]) -> Result<()> + Sync,
{
    let n_chunks = samples.div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(samples - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            let mut y = vec![0.0; rows * width];
            let mut lam = vec![0.0; rows * lam_width];
            fill(&mut rng, rows, &mut y, &mut lam)?;
            Ok((y, lam))
        })
        .collect::<Result<_>>()?;
    let mut ys = DMatrix::zeros(samples, width);
    let mut lams = (lam_width > 0).then(|| DMatrix::zeros(samples, lam_width));
    for (c, (y, lam)) in parts.iter().enumerate() {
        let base = c * CHUNK;
        let rows = y.len() / width.max(1);
        for r in 0..rows {
            for j in 0..width {
                ys[(base + r, j)] = y[r * width + j];
            }
            if let Some(l) = lams.as_mut() {
                for j in 0..lam_width {
                    l[(base + r, j)] = lam[r * lam_width + j];
                }
            }
        }
    }
    Ok((ys, lams))
}
