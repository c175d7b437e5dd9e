//! Chaining integral, multi-resolution estimates of the exact uniform modulus
//! of continuity, and the dyadic-diagonal lower-bound statistic `J_n`.

mod entropy;
mod report;
mod sweep;

pub use entropy::{entropy_integral, entropy_integral_with, EntropyIntegral, ENTROPY_AGREEMENT};
pub use report::{
    convergence_report, ConvergenceReport, ResolutionSummary, BOUNDEDNESS_FACTOR,
    CONCENTRATION_LIMIT, MIN_REPLICATES, MIN_RESOLUTIONS,
};
pub use sweep::{
    default_c_lower, modulus_ratio, modulus_sweep, write_traces_csv, Ladder, ModulusTrace,
    C_LOWER_SAFETY, LEVEL_SLACK, MIN_PAIRS_PER_LEVEL,
};

use crate::covar::{DyadicGrid, FieldModel, GridSample};
use crate::error::{Error, Result};

/// Flat grid indices of the diagonal points `a + jγ2^(−n)(1,…,1)`,
/// `j = 0..=2^n`, with `γ = min_l (b_l − a_l)`.
pub fn diagonal_indices(m: &FieldModel, grid: &DyadicGrid, n: u32) -> Result<Vec<usize>> {
    if n > grid.resolution() {
        return Err(Error::GridMismatch(format!(
            "level {n} is finer than the grid resolution {}",
            grid.resolution()
        )));
    }
    let gamma = m.min_side();
    let steps = 1usize << n;
    let fine = 1usize << grid.resolution();
    (0..=steps)
        .map(|j| {
            let multi = (0..grid.dim())
                .map(|l| {
                    let (a, b) = (m.lower()[l], m.upper()[l]);
                    let x = a + gamma * (j as f64 / steps as f64);
                    let idx = ((x - a) / (b - a) * fine as f64).round() as usize;
                    let hit =
                        idx <= fine && (grid.coord(l, idx) - x).abs() <= 1e-12 * x.abs().max(1.0);
                    hit.then_some(idx).ok_or_else(|| {
                        Error::GridMismatch(format!(
                            "diagonal point {j} of level {n} is not a grid node on axis {l}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(grid.flat_index(&multi))
        })
        .collect()
}

/// `J_n = max_j |X(x^{n,j}) − X(x^{n,j−1})| / (ε_n √log(diam_K / q⁻¹(ε_n)))`
/// with `ε_n = q(2^(−n)γ)`, for values laid out on `grid`.
pub fn jn_from_values(m: &FieldModel, grid: &DyadicGrid, values: &[f64], n: u32) -> Result<f64> {
    let idx = diagonal_indices(m, grid, n)?;
    let tau = m.min_side() * 0.5f64.powi(n as i32);
    let eps = m.gauge().eval_q(tau)?;
    let log = (m.diameter() / tau).ln();
    if !(log > 0.0) || eps == 0.0 {
        return Err(Error::domain(format!(
            "level {n}: diam_K / q^-1(eps_n) = {} leaves no positive logarithm",
            m.diameter() / tau
        )));
    }
    let den = eps * log.sqrt();
    Ok(idx
        .windows(2)
        .map(|w| (values[w[1]] - values[w[0]]).abs() / den)
        .fold(0.0, f64::max))
}

/// [`jn_from_values`] for a sample drawn on a dyadic grid.
pub fn jn_statistic(m: &FieldModel, sample: &GridSample, n: u32) -> Result<f64> {
    let grid = sweep::sample_grid(m, sample)?;
    jn_from_values(m, &grid, &sample.values, n)
}
