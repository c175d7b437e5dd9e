//! Randomised checks of the structural inequalities satisfied by the
//! q-Brownian sheet: two-sided isotropy, conditional-variance identities,
//! local nondeterminism and the Anderson conditioning step.

mod anderson;
mod condvar;

pub use anderson::{
    anderson_check, anderson_instance, bivariate_box_probability, AndersonInstance, AndersonReport,
    ANDERSON_SE_BAND,
};
pub use condvar::{
    conditional_variance_lsq, conditional_variance_schur, condvar_report, lnd_bound, lnd_check,
    lnd_product_bound, CondVarReport, LndSummary, LND_TOLERANCE, MAX_PREDECESSORS,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::covar::FieldModel;
use crate::error::{Error, Result};
use crate::gauge::GaugeFamily;
use crate::rng::{derive_seed, stream_rng, uniform};

/// Relative slack on the isotropy upper constant `√(2d) q^{d−1}(T)`.
pub const ISOTROPY_SLACK: f64 = 1e-6;

/// Empirical isotropy constants `c ≤ 𝔡(x,y) / q(|x−y|) ≤ C` on `[t, T]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsotropyReport {
    pub c_hat: f64,
    #[serde(rename = "C_hat")]
    pub big_c_hat: f64,
    pub pair_count: usize,
    /// `(t, T)`: the sampled domain is `[t, T]^d`.
    pub domain_used: (f64, f64),
    /// `√(2d) q^{d−1}(T) (1 + slack)`.
    pub upper_bound: f64,
    pub passed: bool,
    /// Pairs redrawn because they coincided or `|x − y|` left the gauge domain.
    pub resampled: usize,
}

/// Samples `pairs` uniform pairs in `[t, T]^d` and records the extreme ratios
/// `𝔡(x,y) / q(|x−y|)`.
///
/// Power-law gauges are evaluated past `T` when `|x − y| > T`; other
/// families redraw such pairs.
pub fn isotropy_bounds(m: &FieldModel, t: f64, pairs: usize, seed: u64) -> Result<IsotropyReport> {
    let g = m.gauge();
    let t_max = g.t_max();
    if !(t > 0.0 && t < t_max) {
        return Err(Error::domain(format!("need 0 < t < T = {t_max}, got {t}")));
    }
    if pairs < 100 {
        return Err(Error::domain(format!(
            "need at least 100 pairs, got {pairs}"
        )));
    }
    let d = m.dim();
    let key = derive_seed(seed, "isotropy");
    let extendable = g.family() == GaugeFamily::PowerLaw;
    let draws: Vec<(f64, usize)> = (0..pairs as u64)
        .into_par_iter()
        .map(|k| -> Result<(f64, usize)> {
            let mut rng = stream_rng(key, k);
            let mut redrawn = 0;
            loop {
                let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, t, t_max)).collect();
                let y: Vec<f64> = (0..d).map(|_| uniform(&mut rng, t, t_max)).collect();
                let dist = x
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist == 0.0 || (dist > t_max && !extendable) {
                    redrawn += 1;
                    continue;
                }
                let q = g.eval_q_extended(dist)?;
                return Ok((m.canonical_metric(&x, &y)? / q, redrawn));
            }
        })
        .collect::<Result<_>>()?;
    let c_hat = draws.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let big_c_hat = draws.iter().map(|r| r.0).fold(0.0, f64::max);
    let resampled = draws.iter().map(|r| r.1).sum();
    let upper_bound =
        (2.0 * d as f64).sqrt() * g.q(t_max).powi(d as i32 - 1) * (1.0 + ISOTROPY_SLACK);
    if resampled > 0 {
        log::info!("isotropy: redrew {resampled} degenerate or out-of-domain pairs");
    }
    Ok(IsotropyReport {
        c_hat,
        big_c_hat,
        pair_count: pairs,
        domain_used: (t, t_max),
        upper_bound,
        passed: c_hat > 0.0 && big_c_hat <= upper_bound,
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::GaugeSpec;

    #[test]
    fn brownian_motion_is_exactly_isotropic() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        let r = isotropy_bounds(&m, 0.1, 200, 3).unwrap();
        assert!((r.c_hat - 1.0).abs() < 1e-12 && (r.big_c_hat - 1.0).abs() < 1e-12);
        assert!(r.passed);
    }

    #[test]
    fn brownian_sheet_respects_upper_constant() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 2, 0.0, 1.0).unwrap();
        let r = isotropy_bounds(&m, 0.5, 500, 11).unwrap();
        assert!(r.passed && r.big_c_hat <= 2.0 && r.c_hat > 0.0);
        assert!((r.upper_bound - 2.0 * (1.0 + ISOTROPY_SLACK)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        assert!(isotropy_bounds(&m, 0.0, 200, 1).is_err());
        assert!(isotropy_bounds(&m, 0.5, 99, 1).is_err());
    }
}
