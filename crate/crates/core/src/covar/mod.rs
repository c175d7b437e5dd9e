//! Covariance structure of the d-dimensional q-Brownian sheet
//!
//! ```text
//! B(x) = ∫_{[0,x]} ∏_l K(x_l − y_l) W(dy),   K = √((q²)′)
//! ```
//!
//! whose covariance factorises over axes:
//! `Cov(B(x), B(y)) = ∏_l C(x_l, y_l)` with `C(s, t) = ∫₀^{s∧t} K(s−u) K(t−u) du`.

mod factor;
mod grid;
mod sample;

pub use factor::{CholeskyFactor, SpectralFactor, JITTER_MAX, JITTER_START};
pub use grid::{DyadicGrid, GridCovariance, PointCovariance};
pub use sample::{
    moving_average_variance, sample_cholesky, sample_moving_average, sample_spectral,
    CholeskySampler, GridSample, SampleSidecar, SamplerKind, DEFAULT_MAX_GRID_POINTS,
};

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::GaugeSpec;
use crate::quad::{integrate, QuadSettings};

/// The q-Brownian sheet on a box `K = [a, b] ⊂ [0, T]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldModel {
    gauge: GaugeSpec,
    d: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    quad: QuadSettings,
}

impl FieldModel {
    pub fn new(
        gauge: GaugeSpec,
        lower: Vec<f64>,
        upper: Vec<f64>,
        quad: QuadSettings,
    ) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d {
            return Err(Error::domain(
                "box corners must be non-empty and of equal dimension",
            ));
        }
        let t = gauge.t_max();
        for l in 0..d {
            let (a, b) = (lower[l], upper[l]);
            if !(a >= 0.0 && a < b && b <= t) {
                return Err(Error::domain(format!(
                    "axis {l}: need 0 <= a < b <= T = {t}, got [{a}, {b}]"
                )));
            }
        }
        Ok(Self {
            gauge,
            d,
            lower,
            upper,
            quad,
        })
    }

    /// `[lo, hi]^d` with default quadrature settings.
    pub fn cube(gauge: GaugeSpec, d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(gauge, vec![lo; d], vec![hi; d], QuadSettings::default())
    }

    pub fn gauge(&self) -> &GaugeSpec {
        &self.gauge
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn quad(&self) -> &QuadSettings {
        &self.quad
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    /// Shortest side `min_l (b_l − a_l)`.
    pub fn min_side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min)
    }

    /// Stable 64-bit fingerprint of the model parameters, hex encoded.
    pub fn model_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        let h = json.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        });
        format!("{h:016x}")
    }

    fn check_coord(&self, s: f64) -> Result<()> {
        let t = self.gauge.t_max();
        if s.is_nan() || s < 0.0 || s > t * (1.0 + 1e-12) {
            return Err(Error::domain(format!("coordinate {s} outside [0, {t}]")));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::domain(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.d
            )));
        }
        x.iter().try_for_each(|&s| self.check_coord(s))
    }

    /// One-axis covariance `∫₀^{s∧t} K(s−u) K(t−u) du`.
    pub fn cov1d(&self, s: f64, t: f64) -> Result<f64> {
        self.check_coord(s)?;
        self.check_coord(t)?;
        cov1d_raw(
            &self.gauge,
            &self.quad,
            s.min(self.gauge.t_max()),
            t.min(self.gauge.t_max()),
        )
    }

    /// `Cov(B(x), B(y)) = ∏_l C(x_l, y_l)`.
    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        x.iter().zip(y).try_fold(1.0, |acc, (&s, &t)| {
            Ok(acc * cov1d_raw(&self.gauge, &self.quad, s, t)?)
        })
    }

    /// `Var B(x) = ∏_l q²(x_l)`.
    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(x.iter().map(|&s| self.gauge.q_squared(s)).product())
    }

    /// Canonical metric `‖B(x) − B(y)‖_{L²}`.
    pub fn canonical_metric(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let vx = self.variance(x)?;
        let vy = self.variance(y)?;
        let c = self.cov(x, y)?;
        metric_from_parts(vx, vy, c)
    }

    /// Covariance matrix over `points`.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<Mat<f64>> {
        for p in points {
            self.check_point(p)?;
        }
        let n = points.len();
        let mut g = Mat::<f64>::zeros(n, n);
        fill_lower(self, points, &mut g)?;
        for j in 0..n {
            for i in 0..j {
                g[(i, j)] = g[(j, i)];
            }
        }
        Ok(g)
    }
}

pub(crate) fn metric_from_parts(vx: f64, vy: f64, c: f64) -> Result<f64> {
    let r = vx + vy - 2.0 * c;
    if r >= 0.0 {
        return Ok(r.sqrt());
    }
    let scale = vx + vy;
    if r >= -1e-12 * scale {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative squared canonical metric {r:e} (scale {scale:e})"
        )))
    }
}

/// `C(s, t)` without domain checks.
///
/// With `w = s∧t − u` and `δ = |s − t|` the integral is `∫₀^{s∧t} K(w) K(w+δ) dw`.
/// The kernel behaves like `w^(ν−½)` at the origin, so `w = v^p` with `p`
/// from [`GaugeSpec::singularity_power`] turns the integrand into a bounded
/// power of `v` before adaptive refinement.
pub(crate) fn cov1d_raw(g: &GaugeSpec, quad: &QuadSettings, s: f64, t: f64) -> Result<f64> {
    if s == t {
        return Ok(g.q_squared(s));
    }
    let (lo, hi) = if s < t { (s, t) } else { (t, s) };
    if lo == 0.0 {
        return Ok(0.0);
    }
    if let Some(c) = g.constant_kernel() {
        return Ok(c * c * lo);
    }
    let delta = hi - lo;
    let p = g.singularity_power();
    let v_max = lo.powf(1.0 / p);
    let integrand = |v: f64| {
        let w = v.powf(p);
        if w <= 0.0 {
            return 0.0;
        }
        let y = g.kernel(w) * g.kernel(w + delta) * p * v.powf(p - 1.0);
        if y.is_finite() {
            y
        } else {
            0.0
        }
    };
    Ok(integrate(integrand, 0.0, v_max, quad)?.value)
}

/// Fills the lower triangle (including the diagonal) of `g` with covariances.
pub(crate) fn fill_lower(model: &FieldModel, points: &[Vec<f64>], g: &mut Mat<f64>) -> Result<()> {
    let n = points.len();
    assert_eq!(g.nrows(), n);
    let gauge = &model.gauge;
    let quad = &model.quad;
    if model.d == 1 {
        let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        return g
            .par_col_iter_mut()
            .enumerate()
            .try_for_each(|(j, col)| -> Result<()> {
                let col = col
                    .try_as_col_major_mut()
                    .expect("owned matrices are column major");
                let col = col.as_slice_mut();
                for i in j..n {
                    col[i] = cov1d_raw(gauge, quad, xs[i], xs[j])?;
                }
                Ok(())
            });
    }
    // per-axis tables over the distinct coordinates
    let mut axis_index = vec![vec![0usize; n]; model.d];
    let mut tables = Vec::with_capacity(model.d);
    for l in 0..model.d {
        let mut coords: Vec<f64> = points.iter().map(|p| p[l]).collect();
        coords.sort_by(f64::total_cmp);
        coords.dedup();
        for (i, p) in points.iter().enumerate() {
            axis_index[l][i] = coords.partition_point(|&c| c < p[l]);
        }
        let m = coords.len();
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                (0..=i)
                    .map(|j| cov1d_raw(gauge, quad, coords[i], coords[j]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        tables.push(rows);
    }
    let lookup = |l: usize, i: usize, j: usize| {
        let (a, b) = (axis_index[l][i], axis_index[l][j]);
        if a >= b {
            tables[l][a][b]
        } else {
            tables[l][b][a]
        }
    };
    g.par_col_iter_mut().enumerate().for_each(|(j, col)| {
        let col = col
            .try_as_col_major_mut()
            .expect("owned matrices are column major");
        let col = col.as_slice_mut();
        for i in j..n {
            col[i] = (0..model.d).map(|l| lookup(l, i, j)).product();
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(d: usize) -> FieldModel {
        FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), d, 0.0, 1.0).unwrap()
    }

    #[test]
    fn brownian_examples() {
        let m = bm(1);
        assert!((m.cov1d(0.3, 0.7).unwrap() - 0.3).abs() < 1e-14);
        let m2 = bm(2);
        assert!((m2.cov(&[0.3, 0.5], &[0.7, 0.2]).unwrap() - 0.06).abs() < 1e-14);
        let dist = m.canonical_metric(&[0.3], &[0.7]).unwrap();
        assert!((dist - 0.4f64.sqrt()).abs() < 1e-14);
        assert_eq!(m.canonical_metric(&[0.4], &[0.4]).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_is_analytic() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.25, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        assert!((m.cov1d(0.4, 0.4).unwrap() - 0.4f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn model_validation() {
        let g = GaugeSpec::power_law(0.5, 1.0).unwrap();
        assert!(FieldModel::new(g.clone(), vec![0.5], vec![0.5], QuadSettings::default()).is_err());
        assert!(FieldModel::new(g.clone(), vec![0.0], vec![1.5], QuadSettings::default()).is_err());
        assert!(FieldModel::new(
            g.clone(),
            vec![0.0, 0.0],
            vec![1.0],
            QuadSettings::default()
        )
        .is_err());
        let m =
            FieldModel::new(g, vec![0.0, 0.2], vec![1.0, 0.6], QuadSettings::default()).unwrap();
        assert!((m.min_side() - 0.4).abs() < 1e-15);
        assert!((m.diameter() - (1.0f64 + 0.16).sqrt()).abs() < 1e-15);
        assert!(matches!(m.cov(&[0.1], &[0.1, 0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn gram_single_point_and_brownian() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.3, 1.0).unwrap(), 2, 0.0, 1.0).unwrap();
        let g = m.gram(&[vec![0.4, 0.9]]).unwrap();
        let expect = 0.4f64.powf(0.6) * 0.9f64.powf(0.6);
        assert!((g[(0, 0)] - expect).abs() < 1e-15);

        let pts: Vec<Vec<f64>> = [0.25, 0.5, 0.75, 1.0].iter().map(|&t| vec![t]).collect();
        let g = bm(1).gram(&pts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[(i, j)] - pts[i][0].min(pts[j][0])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gram_tables_match_direct_products() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.25, 1.0).unwrap(), 2, 0.0, 1.0).unwrap();
        let pts = vec![
            vec![0.2, 0.9],
            vec![0.2, 0.4],
            vec![0.7, 0.4],
            vec![1.0, 1.0],
        ];
        let g = m.gram(&pts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let direct = m.cov(&pts[i], &pts[j]).unwrap();
                assert!((g[(i, j)] - direct).abs() <= 1e-15 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn model_hash_is_stable_and_sensitive() {
        let a = bm(1).model_hash();
        assert_eq!(a, bm(1).model_hash());
        assert_ne!(a, bm(2).model_hash());
    }
}
