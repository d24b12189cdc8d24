//! Precomputed `(f, q) -> conjugate parameters` map.
//!
//! The grid is uniform in `f` and logarithmic in `q`. Lookups interpolate
//! bilinearly in `(f, ln q)` on the log of the positive parameters; anything
//! outside the grid is solved exactly.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exp_family::{vb_solve, ConjugateParams, Family, FamilySpec, LinearPredictorMoments};

const MAGIC: &[u8; 8] = b"DGLMVBT\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VbTable {
    family: FamilySpec,
    f_grid: Vec<f64>,
    q_grid: Vec<f64>,
    ln_q_grid: Vec<f64>,
    /// Row-major over (f, q).
    cells: Vec<ConjugateParams>,
    /// Interpolation coordinates of each cell.
    coords: Vec<[f64; 2]>,
}

/// Grid extent and resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub f_range: (f64, f64),
    pub q_range: (f64, f64),
    pub f_points: usize,
    pub q_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            f_range: (-8.0, 8.0),
            q_range: (1e-4, 16.0),
            f_points: 257,
            q_points: 257,
        }
    }
}

fn to_coords(family: Family, p: &ConjugateParams) -> [f64; 2] {
    let v = p.as_pair();
    match family {
        Family::Normal => [v[0], v[1].ln()],
        _ => [v[0].ln(), v[1].ln()],
    }
}

fn from_coords(family: Family, c: [f64; 2]) -> ConjugateParams {
    let v = match family {
        Family::Normal => [c[0], c[1].exp()],
        _ => [c[0].exp(), c[1].exp()],
    };
    ConjugateParams::from_pair(family, v)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite())
}

/// Bracketing index and weight of `x` in `grid`, or `None` outside.
fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = grid.len();
    if !(x >= grid[0] && x <= grid[n - 1]) {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let mut i = grid.partition_point(|g| *g <= x);
    i = i.saturating_sub(1).min(n - 2);
    let w = (x - grid[i]) / (grid[i + 1] - grid[i]);
    Some((i, w))
}

impl VbTable {
    /// Solve exactly at every grid node.
    pub fn build(family: &FamilySpec, grid: GridSpec) -> Result<Self> {
        let GridSpec {
            f_range,
            q_range,
            f_points,
            q_points,
        } = grid;
        if f_points == 0 || q_points == 0 {
            return Err(Error::InvalidParams("grid sizes must be positive".into()));
        }
        if !(f_range.0 <= f_range.1) || !f_range.0.is_finite() || !f_range.1.is_finite() {
            return Err(Error::InvalidParams(format!("empty f range {f_range:?}")));
        }
        if !(q_range.0 > 0.0 && q_range.0 <= q_range.1) || !q_range.1.is_finite() {
            return Err(Error::InvalidParams(format!(
                "q range must be positive and nonempty, got {q_range:?}"
            )));
        }
        if (f_points > 1 && f_range.0 == f_range.1) || (q_points > 1 && q_range.0 == q_range.1) {
            return Err(Error::InvalidParams(
                "a degenerate range needs a single grid point".into(),
            ));
        }
        let f_grid = linspace(f_range.0, f_range.1, f_points);
        let ln_q = linspace(q_range.0.ln(), q_range.1.ln(), q_points);
        let mut q_grid: Vec<f64> = ln_q.iter().map(|l| l.exp()).collect();
        q_grid[0] = q_range.0;
        q_grid[q_points - 1] = q_range.1;

        let cells: Vec<ConjugateParams> = (0..f_points * q_points)
            .into_par_iter()
            .map(|idx| {
                let (f, q) = (f_grid[idx / q_points], q_grid[idx % q_points]);
                vb_solve(family, LinearPredictorMoments::new(f, q)).map_err(|e| Error::TableBuild {
                    f,
                    q,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self::assemble(*family, f_grid, q_grid, cells))
    }

    fn assemble(
        family: FamilySpec,
        f_grid: Vec<f64>,
        q_grid: Vec<f64>,
        cells: Vec<ConjugateParams>,
    ) -> Self {
        let ln_q_grid = q_grid.iter().map(|q| q.ln()).collect();
        let coords = cells.iter().map(|c| to_coords(family.family, c)).collect();
        Self {
            family,
            f_grid,
            q_grid,
            ln_q_grid,
            cells,
            coords,
        }
    }

    pub fn family(&self) -> &FamilySpec {
        &self.family
    }

    pub fn f_grid(&self) -> &[f64] {
        &self.f_grid
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn cell(&self, i: usize, j: usize) -> &ConjugateParams {
        &self.cells[i * self.q_grid.len() + j]
    }

    pub fn contains(&self, m: LinearPredictorMoments) -> bool {
        locate(&self.f_grid, m.f).is_some() && m.q > 0.0 && locate(&self.ln_q_grid, m.q.ln()).is_some()
    }

    /// Interpolated conjugate parameters; exact solve outside the grid.
    pub fn lookup(&self, m: LinearPredictorMoments) -> Result<ConjugateParams> {
        let located = if m.q > 0.0 {
            locate(&self.f_grid, m.f).zip(locate(&self.ln_q_grid, m.q.ln()))
        } else {
            None
        };
        let Some(((i, wf), (j, wq))) = located else {
            return vb_solve(&self.family, m);
        };
        let nq = self.q_grid.len();
        // Exact node hits return the stored cell unchanged.
        let node_i = if wf == 0.0 {
            Some(i)
        } else if wf == 1.0 {
            Some(i + 1)
        } else {
            None
        };
        let node_j = if wq == 0.0 {
            Some(j)
        } else if wq == 1.0 {
            Some(j + 1)
        } else {
            None
        };
        if let (Some(a), Some(b)) = (node_i, node_j) {
            return Ok(self.cells[a * nq + b]);
        }
        let i1 = (i + 1).min(self.f_grid.len() - 1);
        let j1 = (j + 1).min(nq - 1);
        let c00 = self.coords[i * nq + j];
        let c01 = self.coords[i * nq + j1];
        let c10 = self.coords[i1 * nq + j];
        let c11 = self.coords[i1 * nq + j1];
        let mut out = [0.0; 2];
        for k in 0..2 {
            let lo = c00[k] + wq * (c01[k] - c00[k]);
            let hi = c10[k] + wq * (c11[k] - c10[k]);
            out[k] = lo + wf * (hi - lo);
        }
        Ok(from_coords(self.family.family, out))
    }

    /// Little-endian binary layout: magic, version, family tag, precision,
    /// grid sizes, f grid, q grid, then cells row-major as parameter pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.family.family.tag().to_le_bytes())?;
        w.write_all(&self.family.precision.to_le_bytes())?;
        w.write_all(&(self.f_grid.len() as u64).to_le_bytes())?;
        w.write_all(&(self.q_grid.len() as u64).to_le_bytes())?;
        for v in self.f_grid.iter().chain(&self.q_grid) {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in &self.cells {
            for v in c.as_pair() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::TableFormat(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::TableFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::TableFormat(format!("unsupported version {version}")));
        }
        let tag = cur.u32()?;
        let family = Family::from_tag(tag)
            .ok_or_else(|| Error::TableFormat(format!("unknown family tag {tag}")))?;
        let precision = cur.f64()?;
        let family = FamilySpec::new(family, family.natural_link(), precision)
            .map_err(|e| Error::TableFormat(e.to_string()))?;
        let nf = cur.u64()? as usize;
        let nq = cur.u64()? as usize;
        let expected = nf
            .checked_add(nq)
            .zip(nf.checked_mul(nq).and_then(|c| c.checked_mul(2)))
            .and_then(|(g, c)| g.checked_add(c))
            .and_then(|n| n.checked_mul(8));
        if nf == 0 || nq == 0 || expected != Some(bytes.len() - cur.pos) {
            return Err(Error::TableFormat("size fields do not match payload".into()));
        }
        let f_grid: Vec<f64> = (0..nf).map(|_| cur.f64()).collect::<Result<_>>()?;
        let q_grid: Vec<f64> = (0..nq).map(|_| cur.f64()).collect::<Result<_>>()?;
        if !strictly_increasing(&f_grid) || !strictly_increasing(&q_grid) || !(q_grid[0] > 0.0) {
            return Err(Error::TableFormat("grids must be strictly increasing".into()));
        }
        let mut cells = Vec::with_capacity(nf * nq);
        for _ in 0..nf * nq {
            let c = ConjugateParams::from_pair(family.family, [cur.f64()?, cur.f64()?]);
            c.validate()
                .map_err(|e| Error::TableFormat(format!("invalid cell: {e}")))?;
            cells.push(c);
        }
        Ok(Self::assemble(family, f_grid, q_grid, cells))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TableFormat("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exp_family::conjugate_moments;
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn small_grid() -> GridSpec {
        GridSpec {
            f_points: 65,
            q_points: 65,
            ..GridSpec::default()
        }
    }

    #[test]
    fn every_cell_roundtrips() {
        for fam in [FamilySpec::poisson(), FamilySpec::bernoulli()] {
            let t = VbTable::build(&fam, small_grid()).unwrap();
            for (i, &f) in t.f_grid().iter().enumerate() {
                for (j, &q) in t.q_grid().iter().enumerate() {
                    let m = conjugate_moments(&fam, t.cell(i, j)).unwrap();
                    assert!((m.f - f).abs() < 1e-8 && (m.q - q).abs() < 1e-8 * q.max(1.0));
                }
            }
        }
    }

    #[test]
    fn single_point_grid() {
        let fam = FamilySpec::poisson();
        let grid = GridSpec {
            f_range: (0.3, 0.3),
            q_range: (0.5, 0.5),
            f_points: 1,
            q_points: 1,
        };
        let t = VbTable::build(&fam, grid).unwrap();
        let exact = vb_solve(&fam, LinearPredictorMoments::new(0.3, 0.5)).unwrap();
        assert_eq!(*t.cell(0, 0), exact);
        assert_eq!(t.lookup(LinearPredictorMoments::new(0.3, 0.5)).unwrap(), exact);
        let off = LinearPredictorMoments::new(0.4, 0.5);
        assert_eq!(t.lookup(off).unwrap(), vb_solve(&fam, off).unwrap());
    }

    #[test]
    fn node_lookup_is_exact() {
        let fam = FamilySpec::poisson();
        let t = VbTable::build(&fam, small_grid()).unwrap();
        let n = t.f_grid().len();
        for i in [0, 1, 17, n - 1] {
            for j in [0, 5, 40, t.q_grid().len() - 1] {
                let m = LinearPredictorMoments::new(t.f_grid()[i], t.q_grid()[j]);
                let exact = vb_solve(&fam, m).unwrap();
                assert_eq!(t.lookup(m).unwrap(), *t.cell(i, j));
                assert_eq!(*t.cell(i, j), exact);
            }
        }
    }

    #[test]
    fn outside_grid_falls_back() {
        let fam = FamilySpec::poisson();
        let t = VbTable::build(&fam, small_grid()).unwrap();
        for m in [
            LinearPredictorMoments::new(9.0, 0.5),
            LinearPredictorMoments::new(0.0, 1e-6),
            LinearPredictorMoments::new(0.0, 40.0),
        ] {
            assert_eq!(t.lookup(m).unwrap(), vb_solve(&fam, m).unwrap());
        }
    }

    #[test]
    fn interior_lookup_roundtrip_default_grid() {
        for fam in [FamilySpec::poisson(), FamilySpec::bernoulli()] {
            let t = VbTable::build(&fam, GridSpec::default()).unwrap();
            let mut rng = stream_rng(17, 0);
            for _ in 0..1000 {
                let f = rng.random_range(-7.9..7.9);
                let q = (rng.random_range(1e-4f64.ln()..16f64.ln())).exp();
                let got = conjugate_moments(&fam, &t.lookup(LinearPredictorMoments::new(f, q)).unwrap())
                    .unwrap();
                assert!(((got.f - f) / f.abs().max(1.0)).abs() < 1e-3, "f {f} q {q} {got:?}");
                assert!(((got.q - q) / q).abs() < 1e-3, "f {f} q {q} {got:?}");
            }
        }
    }

    #[test]
    fn poisson_grid_monotonicity() {
        let t = VbTable::build(&FamilySpec::poisson(), small_grid()).unwrap();
        let (nf, nq) = (t.f_grid().len(), t.q_grid().len());
        let pair = |i, j| t.cell(i, j).as_pair();
        for i in 0..nf {
            for j in 0..nq {
                if i + 1 < nf {
                    assert!(pair(i + 1, j)[1] < pair(i, j)[1]);
                }
                if j + 1 < nq {
                    assert!(pair(i, j + 1)[0] < pair(i, j)[0]);
                }
            }
        }
    }

    #[test]
    fn binary_roundtrip_and_corruption() {
        let t = VbTable::build(&FamilySpec::bernoulli(), GridSpec {
            f_points: 9,
            q_points: 5,
            ..GridSpec::default()
        })
        .unwrap();
        let bytes = t.to_bytes();
        assert_eq!(VbTable::from_bytes(&bytes).unwrap(), t);
        assert!(VbTable::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(VbTable::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[12] = 9;
        assert!(matches!(VbTable::from_bytes(&bad), Err(Error::TableFormat(_))));
    }

    #[test]
    fn build_rejects_bad_ranges() {
        let fam = FamilySpec::poisson();
        let bad_q = GridSpec {
            q_range: (0.0, 1.0),
            ..small_grid()
        };
        assert!(VbTable::build(&fam, bad_q).is_err());
        let empty_f = GridSpec {
            f_range: (1.0, 0.0),
            ..small_grid()
        };
        assert!(VbTable::build(&fam, empty_f).is_err());
    }
}
