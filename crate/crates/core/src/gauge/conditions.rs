//! Numerical certificates for the regularity conditions a gauge must meet
//! before the modulus-of-continuity machinery applies.
//!
//! Limits are decided on finite sequences with explicit thresholds (the
//! constants below); nothing here is symbolic.

use serde::Serialize;

use super::GaugeSpec;
use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_to_infinity, QuadSettings};

/// Points on the (q1) grid.
pub const Q1_GRID: usize = 512;
/// Smallest (q1) grid point relative to `τ₀`.
const Q1_SPAN: f64 = 1e-12;
/// (q1) passes when the statistic is non-decreasing on at least this many of
/// the smallest grid points.
pub const Q1_MIN_PREFIX: usize = 256;
/// Points on the (q2) ladder.
pub const Q2_LADDER: usize = 48;
/// Deepest point of the (q2) ladder.
pub const Q2_FLOOR: f64 = 1e-280;
/// Required decay factor of the (q2) statistic along the ladder.
pub const Q2_DECAY: f64 = 1e-6;
/// Points on the (q3) grid.
pub const Q3_GRID: usize = 128;
const Q3_SPAN: f64 = 1e-12;
/// Tolerated relative spread of the three smallest-τ (q3) ratios.
pub const Q3_STABLE_BAND: f64 = 0.10;
const Q3_RTOL: f64 = 1e-8;
/// Points on the kernel-monotonicity grid.
pub const KERNEL_GRID: usize = 512;
const KERNEL_SPAN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    Q1,
    Q2,
    Q3,
    KernelMonotone,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub passed: bool,
    /// `(τ, statistic)` pairs, strictly increasing in τ.
    pub evidence_grid: Vec<(f64, f64)>,
    /// Estimated (q3) constant `C₁`.
    pub constant_estimate: Option<f64>,
    /// Upper end of the τ-range on which the property was observed.
    pub neighborhood: f64,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Length of the initial run of `values` along which `ok(prev, next)` holds.
fn monotone_prefix(values: &[f64], ok: impl Fn(f64, f64) -> bool) -> usize {
    let mut len = values.len().min(1);
    for w in values.windows(2) {
        if !ok(w[0], w[1]) {
            break;
        }
        len += 1;
    }
    len
}

fn default_tau0(g: &GaugeSpec) -> f64 {
    0.1 * g.t_max().min(1.0)
}

/// (q1): `τ ↦ q(τ)√(−log τ)` is non-decreasing near zero.
///
/// The statistic is sampled on a log grid over `[10⁻¹²·τ₀, τ₀]`. The report's
/// `neighborhood` is the largest grid point up to which the statistic is
/// non-decreasing from the bottom of the grid; the check passes when that run
/// covers at least [`Q1_MIN_PREFIX`] points.
pub fn check_q1(g: &GaugeSpec, tau0: Option<f64>) -> Result<ConditionReport> {
    let tau0 = tau0.unwrap_or_else(|| default_tau0(g));
    if !(tau0 > 0.0) || tau0 >= 1.0 {
        return Err(Error::domain(format!(
            "(q1) needs 0 < tau0 < 1, got {tau0}"
        )));
    }
    if tau0 > g.t_max() {
        return Err(Error::domain(format!(
            "(q1) tau0 = {tau0} exceeds T = {}",
            g.t_max()
        )));
    }
    let grid = log_grid(tau0 * Q1_SPAN, tau0, Q1_GRID);
    let stat: Vec<f64> = grid.iter().map(|&t| g.q(t) * (-t.ln()).sqrt()).collect();
    let atol = 1e-12 * stat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let prefix = monotone_prefix(&stat, |a, b| b - a >= -atol);
    Ok(ConditionReport {
        condition: Condition::Q1,
        passed: prefix >= Q1_MIN_PREFIX,
        neighborhood: grid[prefix.max(1) - 1],
        evidence_grid: grid.into_iter().zip(stat).collect(),
        constant_estimate: None,
    })
}

/// (q2): `q(τ)√(−log τ) → 0` as `τ ↓ 0`.
///
/// The statistic is read along [`Q2_LADDER`] log-spaced points from `τ₀/2`
/// down to [`Q2_FLOOR`]. Passes when the deeper half of the ladder is
/// non-increasing and the deepest value has fallen below [`Q2_DECAY`] times
/// the first.
pub fn check_q2(g: &GaugeSpec, tau0: Option<f64>) -> Result<ConditionReport> {
    let tau0 = tau0.unwrap_or_else(|| default_tau0(g));
    if !(tau0 > 0.0) || tau0 >= 1.0 || tau0 > g.t_max() {
        return Err(Error::domain(format!(
            "(q2) needs 0 < tau0 < min(T, 1), got {tau0}"
        )));
    }
    // ascending in τ
    let grid = log_grid(Q2_FLOOR, 0.5 * tau0, Q2_LADDER);
    let stat: Vec<f64> = grid.iter().map(|&t| g.q(t) * (-t.ln()).sqrt()).collect();
    let atol = 1e-300;
    let initial = stat[Q2_LADDER - 1];
    let last = stat[0];
    let tail = &stat[..Q2_LADDER / 2];
    // walking towards zero the values must not grow
    let eventually_decreasing = tail.windows(2).all(|w| w[0] <= w[1] + atol);
    Ok(ConditionReport {
        condition: Condition::Q2,
        passed: eventually_decreasing && last < Q2_DECAY * (initial + atol),
        evidence_grid: grid.into_iter().zip(stat).collect(),
        constant_estimate: None,
        neighborhood: tau0,
    })
}

/// `∫₀^τ q(ρ) / (ρ √log(T/ρ)) dρ` for `0 ≤ τ ≤ T`.
///
/// On `(0, T/2]` the substitution `ρ = e^(−u)` removes the `1/ρ` factor and
/// maps the range to `[−log(·), ∞)`; on `[T/2, τ]` the substitution
/// `ρ = T(1 − v²)` absorbs the inverse square-root of the logarithm at `ρ = T`.
pub fn q3_integral(g: &GaugeSpec, t_ref: f64, tau: f64, quad: &QuadSettings) -> Result<f64> {
    if !(t_ref > 0.0) {
        return Err(Error::domain(format!(
            "reference T must be positive, got {t_ref}"
        )));
    }
    if tau < 0.0 || tau > t_ref || tau > g.t_max() * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "upper limit {tau} outside [0, min({t_ref}, {})]",
            g.t_max()
        )));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    let split = 0.5 * t_ref;
    let b = tau.min(split);
    let log_t = t_ref.ln();
    let lower = integrate_to_infinity(
        |u| {
            let rho = (-u).exp();
            if rho == 0.0 {
                0.0
            } else {
                g.q(rho) / (log_t + u).sqrt()
            }
        },
        -b.ln(),
        quad,
    )?
    .value;
    if tau <= split {
        return Ok(lower);
    }
    let t_cap = g.t_max();
    let v_lo = (1.0 - tau / t_ref).max(0.0).sqrt();
    let v_hi = 0.5f64.sqrt();
    let upper = integrate(
        |v| {
            let rho = (t_ref * (1.0 - v * v)).min(t_cap);
            let log = -(-v * v).ln_1p();
            if log <= 0.0 {
                // v → 0: √(−log(1 − v²)) ~ v, so the integrand tends to 2q(T)
                2.0 * g.q(rho) * t_ref / rho
            } else {
                g.q(rho) / (rho * log.sqrt()) * 2.0 * t_ref * v
            }
        },
        v_lo,
        v_hi,
        quad,
    )?
    .value;
    Ok(lower + upper)
}

/// The (q3) ratio `I(τ) / (q(τ)√log(T/τ))`.
pub fn q3_ratio(g: &GaugeSpec, t_ref: f64, tau: f64, quad: &QuadSettings) -> Result<f64> {
    let i = q3_integral(g, t_ref, tau, quad)?;
    Ok(i / (g.q(tau) * (t_ref / tau).ln().sqrt()))
}

/// (q3): `∫₀^τ q(ρ)/(ρ√log(T/ρ)) dρ ≤ C₁ q(τ)√log(T/τ)`.
///
/// The ratio is tabulated on a log grid over `[10⁻¹²·T, T/2]`; the right-hand
/// side vanishes at `τ = T`, so the grid stops at `T/2`. `constant_estimate`
/// is the largest ratio seen; the check passes when it is finite and the three
/// smallest-τ ratios either decrease towards zero or agree within
/// [`Q3_STABLE_BAND`].
pub fn check_q3(g: &GaugeSpec, t_ref: f64) -> Result<ConditionReport> {
    if !(t_ref > 0.0) || t_ref > g.t_max() * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "(q3) needs 0 < T <= {}, got {t_ref}",
            g.t_max()
        )));
    }
    let t_ref = t_ref.min(g.t_max());
    let quad = QuadSettings::with_rtol(Q3_RTOL);
    let grid = log_grid(t_ref * Q3_SPAN, 0.5 * t_ref, Q3_GRID);
    let f = |rho: f64| g.q(rho) / (rho * (t_ref / rho).ln().sqrt());
    let mut running = q3_integral(g, t_ref, grid[0], &quad)?;
    let mut ratios = Vec::with_capacity(grid.len());
    for (k, &tau) in grid.iter().enumerate() {
        if k > 0 {
            running += integrate(f, grid[k - 1], tau, &quad)?.value;
        }
        ratios.push(running / (g.q(tau) * (t_ref / tau).ln().sqrt()));
    }
    let c1 = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = &ratios[..3];
    let lo = bottom.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = bottom.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shrinking =
        bottom[0] <= bottom[1] * (1.0 + 1e-12) && bottom[1] <= bottom[2] * (1.0 + 1e-12);
    let stable = hi <= lo * (1.0 + Q3_STABLE_BAND);
    let finite = c1.is_finite() && c1 > 0.0 && ratios.iter().all(|r| r.is_finite());
    Ok(ConditionReport {
        condition: Condition::Q3,
        passed: finite && (shrinking || stable),
        evidence_grid: grid.into_iter().zip(ratios).collect(),
        constant_estimate: finite.then_some(c1),
        neighborhood: 0.5 * t_ref,
    })
}

/// `(q²)′` is non-increasing on `(0, T]`.
///
/// Sampled on a log grid over `[10⁻¹²·T, T]`. Where a closed-form `(q²)″`
/// exists its sign must agree with the sampled monotonicity. `neighborhood`
/// reports how far from zero the derivative stays non-increasing.
pub fn check_kernel_monotone(g: &GaugeSpec) -> ConditionReport {
    let grid = log_grid(g.t_max() * KERNEL_SPAN, g.t_max(), KERNEL_GRID);
    let deriv: Vec<f64> = grid.iter().map(|&t| g.q2_derivative(t)).collect();
    let prefix = monotone_prefix(&deriv, |a, b| b - a <= 1e-12 * a.abs().max(b.abs()));
    let monotone = prefix == deriv.len();
    // (q²)″ ≤ 0 on the whole grid exactly when (q²)′ is non-increasing
    let closed_form: Option<bool> = grid
        .iter()
        .zip(&deriv)
        .map(|(&t, &d1)| {
            g.q2_second_derivative(t)
                .map(|d2| d2 <= 1e-9 * d1.abs() / t)
        })
        .try_fold(true, |acc, ok| ok.map(|ok| acc && ok));
    let consistent = closed_form.map_or(true, |nonincreasing| nonincreasing == monotone);
    if !consistent {
        log::warn!("closed-form (q^2)'' sign disagrees with sampled monotonicity");
    }
    ConditionReport {
        condition: Condition::KernelMonotone,
        passed: monotone && consistent,
        neighborhood: grid[prefix.max(1) - 1],
        evidence_grid: grid.into_iter().zip(deriv).collect(),
        constant_estimate: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_half_passes_all() {
        let g = GaugeSpec::power_law(0.5, 1.0).unwrap();
        assert!(check_q1(&g, None).unwrap().passed);
        assert!(check_q2(&g, None).unwrap().passed);
        let q3 = check_q3(&g, 1.0).unwrap();
        assert!(q3.passed);
        assert!(q3.constant_estimate.unwrap() > 0.0);
        assert!(check_kernel_monotone(&g).passed);
    }

    #[test]
    fn q1_rejects_tau0_at_or_above_one() {
        let g = GaugeSpec::power_law(0.5, 2.0).unwrap();
        assert!(matches!(check_q1(&g, Some(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn evidence_grids_are_increasing() {
        let g = GaugeSpec::log_modulated(0.5, 1.0).unwrap();
        let reports = [
            check_q1(&g, None).unwrap(),
            check_q2(&g, None).unwrap(),
            check_q3(&g, g.t_max()).unwrap(),
            check_kernel_monotone(&g),
        ];
        for r in &reports {
            assert!(
                r.evidence_grid.windows(2).all(|w| w[0].0 < w[1].0),
                "{:?}",
                r.condition
            );
            assert!(r
                .evidence_grid
                .iter()
                .all(|&(t, _)| t > 0.0 && t <= g.t_max()));
        }
    }

    #[test]
    fn q3_ratio_vanishes_for_power_law() {
        let g = GaugeSpec::power_law(0.5, 1.0).unwrap();
        let r = check_q3(&g, 1.0).unwrap();
        let first = r.evidence_grid[0].1;
        let last = r.evidence_grid.last().unwrap().1;
        assert!(first < last);
        assert!(first < 0.2);
    }

    #[test]
    fn q3_integral_splits_consistently() {
        // the two substitutions meet at T/2 without a seam
        let g = GaugeSpec::power_law(0.5, 1.0).unwrap();
        let quad = QuadSettings::with_rtol(1e-11);
        let whole = q3_integral(&g, 1.0, 0.9, &quad).unwrap();
        let half = q3_integral(&g, 1.0, 0.5, &quad).unwrap();
        let rest = integrate(
            |r: f64| r.sqrt() / (r * (1.0 / r).ln().sqrt()),
            0.5,
            0.9,
            &quad,
        )
        .unwrap()
        .value;
        assert!((whole - half - rest).abs() < 1e-9);
    }
}
