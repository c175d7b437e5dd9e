use std::io::Write;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{
    CholeskyFactor, DyadicGrid, FieldModel, GridCovariance, PointCovariance, SpectralFactor,
};
use crate::error::{Error, Result};
use crate::rng::{standard_normals, stream_rng};

/// Default cap on the number of grid points for exact sampling.
pub const DEFAULT_MAX_GRID_POINTS: usize = 16384;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Cholesky,
    MovingAverage,
    Spectral,
}

/// One realization of the field on a point set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSample {
    pub model_id: String,
    /// Dyadic resolution `n` when the points form a dyadic grid.
    pub resolution: Option<u32>,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub replicate_index: u64,
    pub sampler: SamplerKind,
    /// Absolute diagonal jitter used by the Cholesky sampler.
    pub jitter_used: Option<f64>,
}

/// Metadata written next to a sample CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub model_hash: String,
    pub seed: u64,
    pub replicate_index: u64,
    pub sampler: SamplerKind,
    pub jitter_used: Option<f64>,
    pub resolution: Option<u32>,
}

impl GridSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sidecar(&self) -> SampleSidecar {
        SampleSidecar {
            model_hash: self.model_id.clone(),
            seed: self.seed,
            replicate_index: self.replicate_index,
            sampler: self.sampler,
            jitter_used: self.jitter_used,
            resolution: self.resolution,
        }
    }

    /// Writes `x_1,…,x_d,value` rows with round-trip precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.points.first().map_or(0, Vec::len);
        let header: Vec<String> = (1..=d)
            .map(|l| format!("x_{l}"))
            .chain(["value".into()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (p, v) in self.points.iter().zip(&self.values) {
            for x in p {
                write!(out, "{x:.16e},")?;
            }
            writeln!(out, "{v:.16e}")?;
        }
        Ok(())
    }
}

/// Exact sampler that factors the Gram matrix once and serves any number of
/// replicates.
pub struct CholeskySampler {
    model_id: String,
    points: Vec<Vec<f64>>,
    resolution: Option<u32>,
    factor: CholeskyFactor,
}

impl CholeskySampler {
    pub fn new(model: &FieldModel, points: Vec<Vec<f64>>, max_points: usize) -> Result<Self> {
        if points.len() > max_points {
            return Err(Error::GridTooLarge {
                points: points.len(),
                limit: max_points,
            });
        }
        let factor = CholeskyFactor::new(model, &points)?;
        Ok(Self {
            model_id: model.model_hash(),
            points,
            resolution: None,
            factor,
        })
    }

    pub fn for_grid(model: &FieldModel, grid: &DyadicGrid, max_points: usize) -> Result<Self> {
        if grid.len() > max_points {
            return Err(Error::GridTooLarge {
                points: grid.len(),
                limit: max_points,
            });
        }
        let mut s = Self::new(model, grid.points(), max_points)?;
        s.resolution = Some(grid.resolution());
        Ok(s)
    }

    /// Like [`Self::for_grid`], reusing the per-axis tables already held by `cov`.
    pub fn with_covariance(cov: &GridCovariance<'_>, max_points: usize) -> Result<Self> {
        let grid = cov.grid();
        let n = grid.len();
        if n > max_points {
            return Err(Error::GridTooLarge {
                points: n,
                limit: max_points,
            });
        }
        let factor = CholeskyFactor::with_fill(n, |g| {
            g.par_col_iter_mut()
                .enumerate()
                .try_for_each(|(j, col)| -> Result<()> {
                    let col = col
                        .try_as_col_major_mut()
                        .expect("owned matrices are column major");
                    let col = col.as_slice_mut();
                    for (i, c) in col.iter_mut().enumerate().skip(j) {
                        *c = cov.cov(i, j)?;
                    }
                    Ok(())
                })
        })?;
        Ok(Self {
            model_id: cov.model().model_hash(),
            points: grid.points(),
            resolution: Some(grid.resolution()),
            factor,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Values only, for replicate `r` under `seed`.
    pub fn draw_values(&self, seed: u64, replicate: u64) -> Vec<f64> {
        let z = standard_normals(&mut stream_rng(seed, replicate), self.points.len());
        self.factor.apply(&z)
    }

    pub fn draw(&self, seed: u64, replicate: u64) -> GridSample {
        GridSample {
            model_id: self.model_id.clone(),
            resolution: self.resolution,
            points: self.points.clone(),
            values: self.draw_values(seed, replicate),
            seed,
            replicate_index: replicate,
            sampler: SamplerKind::Cholesky,
            jitter_used: Some(self.factor.jitter()),
        }
    }
}

/// Exact sample (replicate 0) on `grid` with the default size limit.
pub fn sample_cholesky(model: &FieldModel, grid: &[Vec<f64>], seed: u64) -> Result<GridSample> {
    Ok(CholeskySampler::new(model, grid.to_vec(), DEFAULT_MAX_GRID_POINTS)?.draw(seed, 0))
}

/// Discretised moving average `Σ_j K(t − s_j) ΔW_j` for `d = 1`.
///
/// `[0, max t]` is cut into `oversample` sub-steps per distinct positive grid
/// value; the kernel is evaluated at sub-step midpoints and every grid value
/// is snapped to the nearest sub-step boundary. Approximate: the kernel
/// singularity makes the last sub-step biased when `ν < ½`.
pub fn sample_moving_average(
    model: &FieldModel,
    grid: &[f64],
    seed: u64,
    replicate: u64,
    oversample: usize,
) -> Result<GridSample> {
    let plan = MovingAveragePlan::new(model, grid, oversample)?;
    let z = standard_normals(&mut stream_rng(seed, replicate), plan.weights.len());
    let values = plan
        .steps
        .iter()
        .map(|&m| (0..m).map(|j| plan.weights[m - 1 - j] * z[j]).sum())
        .collect();
    Ok(GridSample {
        model_id: model.model_hash(),
        resolution: None,
        points: grid.iter().map(|&t| vec![t]).collect(),
        values,
        seed,
        replicate_index: replicate,
        sampler: SamplerKind::MovingAverage,
        jitter_used: None,
    })
}

/// Exact variance of the moving-average discretisation at the largest grid
/// value, `Σ_k K((k+½)δ)² δ`.
pub fn moving_average_variance(model: &FieldModel, grid: &[f64], oversample: usize) -> Result<f64> {
    let plan = MovingAveragePlan::new(model, grid, oversample)?;
    let m = plan.steps.iter().copied().max().unwrap_or(0);
    Ok(plan.weights[..m].iter().map(|w| w * w).sum())
}

struct MovingAveragePlan {
    /// `K((k+½)δ) √δ` for lag `k`.
    weights: Vec<f64>,
    /// Number of sub-steps below each grid value.
    steps: Vec<usize>,
}

impl MovingAveragePlan {
    fn new(model: &FieldModel, grid: &[f64], oversample: usize) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::domain(
                "the moving-average sampler is one-dimensional",
            ));
        }
        if oversample < 8 {
            return Err(Error::domain(format!(
                "oversample must be at least 8, got {oversample}"
            )));
        }
        for &t in grid {
            model.check_coord(t)?;
        }
        let mut distinct: Vec<f64> = grid.iter().copied().filter(|&t| t > 0.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let t_max = distinct.last().copied().unwrap_or(0.0);
        let total = distinct.len() * oversample;
        if total == 0 {
            return Ok(Self {
                weights: Vec::new(),
                steps: vec![0; grid.len()],
            });
        }
        let delta = t_max / total as f64;
        let g = model.gauge();
        let root = delta.sqrt();
        let weights = (0..total)
            .map(|k| g.kernel((k as f64 + 0.5) * delta) * root)
            .collect();
        let steps = grid
            .iter()
            .map(|&t| ((t / delta).round() as usize).min(total))
            .collect();
        Ok(Self { weights, steps })
    }
}

/// Truncated spectral sample `U_r √Λ_r z` (replicate 0).
pub fn sample_spectral(
    model: &FieldModel,
    grid: &[Vec<f64>],
    seed: u64,
    rank: usize,
) -> Result<GridSample> {
    let f = SpectralFactor::new(model, grid, rank)?;
    Ok(spectral_draw(model, grid, &f, seed, 0))
}

pub(crate) fn spectral_draw(
    model: &FieldModel,
    grid: &[Vec<f64>],
    f: &SpectralFactor,
    seed: u64,
    replicate: u64,
) -> GridSample {
    let z = standard_normals(&mut stream_rng(seed, replicate), f.rank());
    GridSample {
        model_id: model.model_hash(),
        resolution: None,
        points: grid.to_vec(),
        values: f.apply(&z),
        seed,
        replicate_index: replicate,
        sampler: SamplerKind::Spectral,
        jitter_used: None,
    }
}

impl SpectralFactor {
    /// Replicate `r` under `seed`.
    pub fn draw(
        &self,
        model: &FieldModel,
        grid: &[Vec<f64>],
        seed: u64,
        replicate: u64,
    ) -> GridSample {
        spectral_draw(model, grid, self, seed, replicate)
    }
}
