use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{q3_integral, GaugeSpec};
use crate::quad::{integrate_to_infinity, QuadSettings};

/// Required agreement between the direct and integrated-by-parts forms.
pub const ENTROPY_AGREEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyIntegral {
    /// `ε√log(D/q⁻¹(ε)) + ½∫₀^{q⁻¹(ε)} q(ρ)/(ρ√log(D/ρ)) dρ`
    pub value: f64,
    /// `∫₀^ε √log(D/q⁻¹(ρ)) dρ` evaluated as written
    pub direct: f64,
    pub relative_difference: f64,
    /// `ε√log(D/q⁻¹(ε))`, the scale of the integral
    pub boundary_term: f64,
}

/// Chaining integral `∫₀^ε √log(D/q⁻¹(ρ)) dρ`.
///
/// Evaluated twice: after integrating by parts (the returned `value`), and
/// directly with `ρ = ε e^(−u)`. Disagreement beyond [`ENTROPY_AGREEMENT`] is
/// an error.
pub fn entropy_integral(g: &GaugeSpec, diam: f64, eps: f64) -> Result<EntropyIntegral> {
    entropy_integral_with(g, diam, eps, &QuadSettings::with_rtol(1e-10))
}

pub fn entropy_integral_with(
    g: &GaugeSpec,
    diam: f64,
    eps: f64,
    quad: &QuadSettings,
) -> Result<EntropyIntegral> {
    if !(diam > 0.0 && diam.is_finite()) {
        return Err(Error::domain(format!(
            "diameter must be positive, got {diam}"
        )));
    }
    if !(eps > 0.0) || eps > g.q_max() {
        return Err(Error::domain(format!(
            "need 0 < eps <= q(T) = {}, got {eps}",
            g.q_max()
        )));
    }
    let tau = g.q_inverse(eps);
    if tau > diam {
        return Err(Error::domain(format!(
            "q^-1(eps) = {tau} exceeds the diameter {diam}; the logarithm is negative"
        )));
    }
    let log_d = diam.ln();
    let boundary_term = eps * (log_d - tau.ln()).max(0.0).sqrt();
    let value = boundary_term + 0.5 * q3_integral(g, diam, tau, quad)?;

    let direct = integrate_to_infinity(
        |u| {
            let rho = eps * (-u).exp();
            let inv = g.q_inverse(rho);
            if rho == 0.0 || inv == 0.0 {
                return 0.0;
            }
            rho * (log_d - inv.ln()).max(0.0).sqrt()
        },
        0.0,
        quad,
    )?
    .value;
    let relative_difference = (value - direct).abs() / value.abs().max(f64::MIN_POSITIVE);
    if relative_difference > ENTROPY_AGREEMENT {
        return Err(Error::Numerical(format!(
            "entropy integral forms disagree: by parts {value:e}, direct {direct:e}"
        )));
    }
    Ok(EntropyIntegral {
        value,
        direct,
        relative_difference,
        boundary_term,
    })
}
