use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::covar::{DyadicGrid, FieldModel, GridCovariance, GridSample, PointCovariance};
use crate::error::{Error, Result};
use crate::gauge::GaugeSpec;
use crate::verify::isotropy_bounds;

/// A level is usable when at least this many pairs have `𝔡 ≤ ε`.
pub const MIN_PAIRS_PER_LEVEL: usize = 50;
/// Relative slack when assigning a pair to an `ε` level.
pub const LEVEL_SLACK: f64 = 1e-9;
/// Safety factor applied to an estimated isotropy lower constant.
pub const C_LOWER_SAFETY: f64 = 0.5;

/// Strictly decreasing list of canonical-metric scales.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ladder {
    epsilons: Vec<f64>,
}

impl Ladder {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::EmptyLadder);
        }
        if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0))
            || epsilons.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::domain(
                "ladder must be positive and strictly decreasing",
            ));
        }
        Ok(Self { epsilons })
    }

    /// `top · 2^(−k)` for every `k` with the level at least `floor`.
    pub fn geometric(top: f64, floor: f64) -> Result<Self> {
        let mut eps = Vec::new();
        let mut e = top;
        while e >= floor * (1.0 - LEVEL_SLACK) && eps.len() < 1100 {
            eps.push(e);
            e *= 0.5;
        }
        Self::new(eps)
    }

    /// Halving ladder from `q(diam_K)/4` down to `q(h)` for the finest grid
    /// step `h`, below which a one-dimensional grid has no pairs at all.
    pub fn for_grid(model: &FieldModel, grid: &DyadicGrid) -> Result<Self> {
        let g = model.gauge();
        let top = g.q_beyond(model.diameter()).unwrap_or(g.q_max()) / 4.0;
        let h = (0..grid.dim())
            .map(|l| grid.coord(l, 1) - grid.coord(l, 0))
            .fold(f64::INFINITY, f64::min);
        Self::geometric(top, g.q(h))
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }
}

/// Normalised increments `|X(x)−X(x̄)| / (𝔡 √log(diam_K / q⁻¹(𝔡)))` of one
/// replicate, maximised over pairs with `𝔡 ≤ ε` for each `ε` of a ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusTrace {
    pub resolution: u32,
    pub replicate: u64,
    pub epsilon_ladder: Vec<f64>,
    pub sup_ratio: Vec<f64>,
    /// Pairs with `𝔡 ≤ ε` at each level.
    pub pair_counts: Vec<u64>,
    /// Levels with fewer than [`MIN_PAIRS_PER_LEVEL`] pairs.
    pub starved: Vec<bool>,
    pub jn: Option<f64>,
    /// Pairs whose canonical metric was evaluated.
    pub pairs_examined: u64,
    /// Pairs dropped because `𝔡 = 0` or the logarithm is not positive.
    pub pairs_excluded: u64,
}

impl ModulusTrace {
    /// Index of the finest non-starved level.
    pub fn terminal_index(&self) -> Option<usize> {
        self.starved.iter().rposition(|s| !s)
    }

    /// `(ε, sup ratio)` at the finest non-starved level.
    pub fn terminal(&self) -> Option<(f64, f64)> {
        self.terminal_index()
            .map(|k| (self.epsilon_ladder[k], self.sup_ratio[k]))
    }
}

/// Writes `resolution,replicate,epsilon,sup_ratio,pairs_examined,jn` rows,
/// one per trace level; `pairs_examined` is the number of pairs at that level.
pub fn write_traces_csv<W: Write>(traces: &[ModulusTrace], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "resolution,replicate,epsilon,sup_ratio,pairs_examined,jn"
    )?;
    for t in traces {
        let jn = t.jn.map(|v| format!("{v:.16e}")).unwrap_or_default();
        for k in 0..t.epsilon_ladder.len() {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{},{}",
                t.resolution,
                t.replicate,
                t.epsilon_ladder[k],
                t.sup_ratio[k],
                t.pair_counts[k],
                jn
            )?;
        }
    }
    Ok(())
}

/// `𝔡 √log(diam / q⁻¹(𝔡))`, or `None` when it is not positive.
pub(crate) fn denominator(g: &GaugeSpec, log_diam: f64, metric: f64) -> Option<f64> {
    if !(metric > 0.0) {
        return None;
    }
    let inv = g.q_inverse_beyond(metric)?;
    let log = log_diam - inv.ln();
    (log > 0.0).then(|| metric * log.sqrt())
}

/// Lower isotropy constant used to bound the pair search radius.
///
/// In one dimension `𝔡(s,t) ≥ q(|s−t|)` exactly, so `ĉ = 1`. Otherwise the
/// constant degenerates when the box touches a coordinate hyperplane, and
/// `None` requests an exhaustive search; away from it the empirical `c_hat`
/// on `[min a_l, T]^d` is shrunk by [`C_LOWER_SAFETY`].
pub fn default_c_lower(m: &FieldModel, seed: u64) -> Result<Option<f64>> {
    if m.dim() == 1 {
        return Ok(Some(1.0));
    }
    let t = m.lower().iter().copied().fold(f64::INFINITY, f64::min);
    if t <= 0.0 {
        return Ok(None);
    }
    let r = isotropy_bounds(m, t, 2000, seed)?;
    Ok(Some(r.c_hat * C_LOWER_SAFETY))
}

struct Offsets {
    /// Lexicographically positive multi-index offsets.
    steps: Vec<Vec<i64>>,
}

fn offsets(grid: &DyadicGrid, radius: Option<f64>) -> Offsets {
    let d = grid.dim();
    let top = grid.per_axis() as i64 - 1;
    let h: Vec<f64> = (0..d)
        .map(|l| grid.coord(l, 1) - grid.coord(l, 0))
        .collect();
    let reach: Vec<i64> = (0..d)
        .map(|l| match radius {
            Some(r) => ((r / h[l]) * (1.0 + LEVEL_SLACK)).floor().min(top as f64) as i64,
            None => top,
        })
        .collect();
    let mut steps = Vec::new();
    let mut cur: Vec<i64> = reach.iter().map(|r| -r).collect();
    loop {
        let positive = cur.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0);
        let inside = match radius {
            Some(r) => {
                let dist2: f64 = cur
                    .iter()
                    .zip(&h)
                    .map(|(&c, &hl)| (c as f64 * hl).powi(2))
                    .sum();
                dist2.sqrt() <= r * (1.0 + LEVEL_SLACK)
            }
            None => true,
        };
        if positive && inside {
            steps.push(cur.clone());
        }
        // odometer increment
        let mut l = d;
        loop {
            if l == 0 {
                return Offsets { steps };
            }
            l -= 1;
            if cur[l] < reach[l] {
                cur[l] += 1;
                break;
            }
            cur[l] = -reach[l];
        }
    }
}

struct Accumulator {
    bucket_max: Vec<f64>,
    bucket_count: Vec<u64>,
    examined: u64,
    excluded: u64,
}

impl Accumulator {
    fn new(levels: usize, reps: usize) -> Self {
        Self {
            bucket_max: vec![0.0; levels * reps],
            bucket_count: vec![0; levels],
            examined: 0,
            excluded: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.bucket_max.iter_mut().zip(other.bucket_max) {
            *a = a.max(b);
        }
        for (a, b) in self.bucket_count.iter_mut().zip(other.bucket_count) {
            *a += b;
        }
        self.examined += other.examined;
        self.excluded += other.excluded;
        self
    }
}

/// Sup-ratio traces for several replicates on one dyadic grid.
///
/// Each pair's canonical metric comes from `cov` and its denominator is
/// computed once; pairs farther apart than `q⁻¹(ε₀/ĉ)` are never enumerated
/// (all pairs when `c_lower` is `None`).
pub fn modulus_sweep<C: PointCovariance>(
    model: &FieldModel,
    grid: &DyadicGrid,
    cov: &C,
    replicates: &[Vec<f64>],
    ladder: &Ladder,
    c_lower: Option<f64>,
) -> Result<Vec<ModulusTrace>> {
    let n_points = grid.len();
    if cov.len() != n_points || replicates.iter().any(|v| v.len() != n_points) {
        return Err(Error::GridMismatch(format!(
            "expected {n_points} values per replicate and covariance entries"
        )));
    }
    let g = model.gauge();
    let eps = ladder.epsilons();
    let levels = eps.len();
    let reps = replicates.len();
    let thresholds: Vec<f64> = eps.iter().map(|e| e * (1.0 + LEVEL_SLACK)).collect();
    let radius = c_lower.and_then(|c| g.q_inverse_beyond(thresholds[0] / c));
    let offsets = offsets(grid, radius);
    let log_diam = model.diameter().ln();
    let m = grid.per_axis() as i64;
    let d = grid.dim();

    let acc = (0..n_points)
        .into_par_iter()
        .try_fold(
            || Accumulator::new(levels, reps),
            |mut acc, i| -> Result<Accumulator> {
                let base = grid.multi_index(i);
                'pairs: for step in &offsets.steps {
                    let mut j = 0i64;
                    for l in 0..d {
                        let v = base[l] as i64 + step[l];
                        if v < 0 || v >= m {
                            continue 'pairs;
                        }
                        j = j * m + v;
                    }
                    let j = j as usize;
                    acc.examined += 1;
                    let metric = cov.metric(i, j)?;
                    let level_count = thresholds.partition_point(|&t| t >= metric);
                    if level_count == 0 {
                        continue;
                    }
                    let Some(den) = denominator(g, log_diam, metric) else {
                        acc.excluded += 1;
                        continue;
                    };
                    let bucket = level_count - 1;
                    acc.bucket_count[bucket] += 1;
                    let row = &mut acc.bucket_max[bucket * reps..(bucket + 1) * reps];
                    for (slot, values) in row.iter_mut().zip(replicates) {
                        let r = (values[i] - values[j]).abs() / den;
                        if r > *slot {
                            *slot = r;
                        }
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(|| Accumulator::new(levels, reps), |a, b| Ok(a.merge(b)))?;

    let mut counts = vec![0u64; levels];
    let mut running = 0;
    for k in (0..levels).rev() {
        running += acc.bucket_count[k];
        counts[k] = running;
    }
    let starved: Vec<bool> = counts
        .iter()
        .map(|&c| (c as usize) < MIN_PAIRS_PER_LEVEL)
        .collect();
    if starved.iter().any(|&s| s) {
        log::info!(
            "resolution {}: {} of {levels} ladder levels are starved",
            grid.resolution(),
            starved.iter().filter(|&&s| s).count()
        );
    }
    Ok((0..reps)
        .map(|r| {
            let mut sup = vec![0.0; levels];
            let mut run: f64 = 0.0;
            for k in (0..levels).rev() {
                run = run.max(acc.bucket_max[k * reps + r]);
                sup[k] = run;
            }
            ModulusTrace {
                resolution: grid.resolution(),
                replicate: r as u64,
                epsilon_ladder: eps.to_vec(),
                sup_ratio: sup,
                pair_counts: counts.clone(),
                starved: starved.clone(),
                jn: None,
                pairs_examined: acc.examined,
                pairs_excluded: acc.excluded,
            }
        })
        .collect())
}

/// Grid that a sample was drawn on, checked against the model.
pub(crate) fn sample_grid(m: &FieldModel, sample: &GridSample) -> Result<DyadicGrid> {
    let n = sample
        .resolution
        .ok_or_else(|| Error::GridMismatch("sample is not on a dyadic grid".into()))?;
    let grid = DyadicGrid::new(m, n)?;
    if sample.values.len() != grid.len() || sample.points.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "sample has {} values, resolution {n} grid has {}",
            sample.values.len(),
            grid.len()
        )));
    }
    Ok(grid)
}

/// Sup-ratio trace of a single sample, with the exact model metric.
pub fn modulus_ratio(sample: &GridSample, m: &FieldModel, ladder: &Ladder) -> Result<ModulusTrace> {
    let grid = sample_grid(m, sample)?;
    let cov = GridCovariance::new(m, &grid)?;
    let c_lower = default_c_lower(m, sample.seed)?;
    let mut traces = modulus_sweep(
        m,
        &grid,
        &cov,
        std::slice::from_ref(&sample.values),
        ladder,
        c_lower,
    )?;
    let mut t = traces.pop().expect("one replicate");
    t.replicate = sample.replicate_index;
    Ok(t)
}
