use super::{cov1d_raw, metric_from_parts, FieldModel};
use crate::error::{Error, Result};

/// Closed dyadic grid `x_l = a_l + j (b_l − a_l) 2^(−n)`, `j = 0..=2^n`,
/// enumerated row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: u32,
}

impl DyadicGrid {
    pub fn new(model: &FieldModel, resolution: u32) -> Result<Self> {
        if resolution > 30 {
            return Err(Error::domain(format!(
                "resolution {resolution} is unreasonably fine"
            )));
        }
        Ok(Self {
            lower: model.lower().to_vec(),
            upper: model.upper().to_vec(),
            resolution,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Points per axis, `2^n + 1`.
    pub fn per_axis(&self) -> usize {
        (1usize << self.resolution) + 1
    }

    /// Total number of points, saturating on overflow.
    pub fn len(&self) -> usize {
        let m = self.per_axis();
        (0..self.dim()).fold(1usize, |acc, _| acc.saturating_mul(m))
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate `j` along `axis`; the last index lands on `b` exactly.
    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        let m = self.per_axis() - 1;
        let (a, b) = (self.lower[axis], self.upper[axis]);
        if j >= m {
            b
        } else {
            a + (b - a) * (j as f64 / m as f64)
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let m = self.per_axis();
        let mut out = vec![0; self.dim()];
        for slot in out.iter_mut().rev() {
            *slot = idx % m;
            idx /= m;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let m = self.per_axis();
        multi.iter().fold(0, |acc, &j| acc * m + j)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(l, &j)| self.coord(l, j))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Read-only covariance over an indexed point set.
pub trait PointCovariance: Sync {
    fn len(&self) -> usize;

    fn cov(&self, i: usize, j: usize) -> Result<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn variance(&self, i: usize) -> Result<f64> {
        self.cov(i, i)
    }

    /// Canonical metric between points `i` and `j`.
    fn metric(&self, i: usize, j: usize) -> Result<f64> {
        metric_from_parts(self.variance(i)?, self.variance(j)?, self.cov(i, j)?)
    }
}

/// Model covariance on a dyadic grid.
///
/// Holds one table of `C(x_l^i, x_l^j)` per axis when the tables are small;
/// otherwise evaluates `C` on demand.
pub struct GridCovariance<'a> {
    model: &'a FieldModel,
    grid: &'a DyadicGrid,
    tables: Option<Vec<Vec<f64>>>,
    variances: Vec<Vec<f64>>,
}

/// Largest per-axis table held in memory (entries).
const TABLE_LIMIT: usize = 1 << 22;

impl<'a> GridCovariance<'a> {
    pub fn new(model: &'a FieldModel, grid: &'a DyadicGrid) -> Result<Self> {
        if grid.dim() != model.dim() {
            return Err(Error::GridMismatch(format!(
                "grid dimension {} vs model dimension {}",
                grid.dim(),
                model.dim()
            )));
        }
        let m = grid.per_axis();
        let g = model.gauge();
        let variances: Vec<Vec<f64>> = (0..grid.dim())
            .map(|l| (0..m).map(|j| g.q_squared(grid.coord(l, j))).collect())
            .collect();
        let tables = if m * m <= TABLE_LIMIT {
            use rayon::prelude::*;
            let t = (0..grid.dim())
                .map(|l| {
                    // the covariance is symmetric: integrate the lower triangle, then mirror
                    let rows: Vec<Vec<f64>> = (0..m)
                        .into_par_iter()
                        .map(|i| {
                            (0..=i)
                                .map(|j| {
                                    cov1d_raw(g, model.quad(), grid.coord(l, i), grid.coord(l, j))
                                })
                                .collect::<Result<Vec<f64>>>()
                        })
                        .collect::<Result<_>>()?;
                    let mut t = vec![0.0; m * m];
                    for (i, row) in rows.iter().enumerate() {
                        for (j, &c) in row.iter().enumerate() {
                            t[i * m + j] = c;
                            t[j * m + i] = c;
                        }
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(t)
        } else {
            None
        };
        Ok(Self {
            model,
            grid,
            tables,
            variances,
        })
    }

    pub fn grid(&self) -> &DyadicGrid {
        self.grid
    }

    pub fn model(&self) -> &FieldModel {
        self.model
    }
}

impl PointCovariance for GridCovariance<'_> {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn cov(&self, i: usize, j: usize) -> Result<f64> {
        let (mi, mj) = (self.grid.multi_index(i), self.grid.multi_index(j));
        let m = self.grid.per_axis();
        let mut acc = 1.0;
        for l in 0..self.grid.dim() {
            acc *= match &self.tables {
                Some(t) => t[l][mi[l] * m + mj[l]],
                None => cov1d_raw(
                    self.model.gauge(),
                    self.model.quad(),
                    self.grid.coord(l, mi[l]),
                    self.grid.coord(l, mj[l]),
                )?,
            };
        }
        Ok(acc)
    }

    fn variance(&self, i: usize) -> Result<f64> {
        Ok(self
            .grid
            .multi_index(i)
            .iter()
            .enumerate()
            .map(|(l, &j)| self.variances[l][j])
            .product())
    }
}
