//! Gauge functions `q: [0, T] → ℝ₊` and the moving-average kernel
//! `K = √((q²)′)` they induce.

mod conditions;
mod table;

pub use conditions::{
    check_kernel_monotone, check_q1, check_q2, check_q3, q3_integral, q3_ratio, Condition,
    ConditionReport, KERNEL_GRID, Q1_GRID, Q1_MIN_PREFIX, Q2_DECAY, Q2_FLOOR, Q2_LADDER, Q3_GRID,
    Q3_STABLE_BAND,
};
pub use table::MonotoneTable;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack accepted when a caller lands a rounding error past `T`.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeFamily {
    /// `q(τ) = τ^ν`
    PowerLaw,
    /// `q(τ) = (log(R/τ))^γ τ^ν` with log reference `R` (default 1)
    LogModulated,
    /// monotone cubic interpolation of a user table
    Tabulated,
}

/// Serializable description of a gauge, as read from a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeParams {
    pub family: GaugeFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(
        rename = "T",
        alias = "t",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 2]>>,
    /// CSV of `τ,q(τ)` rows; the caller reads it into `table`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    PowerLaw,
    LogModulated { gamma: f64, log_ref: f64 },
    Tabulated(MonotoneTable),
}

/// An immutable, validated gauge function on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeSpec {
    shape: Shape,
    nu: f64,
    t_max: f64,
    kernel_coef: f64,
    kernel_exp: f64,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl GaugeSpec {
    pub fn power_law(nu: f64, t_max: f64) -> Result<Self> {
        let nu = positive("nu", nu)?;
        let t_max = positive("T", t_max)?;
        Ok(Self {
            shape: Shape::PowerLaw,
            nu,
            t_max,
            kernel_coef: (2.0 * nu).sqrt(),
            kernel_exp: nu - 0.5,
        })
    }

    /// `(log(1/τ))^γ τ^ν` on its maximal monotone domain `[0, e^(−γ/ν)]`.
    pub fn log_modulated(nu: f64, gamma: f64) -> Result<Self> {
        let nu = positive("nu", nu)?;
        Self::log_modulated_with(nu, gamma, (-gamma / nu).exp(), 1.0)
    }

    /// `(log(R/τ))^γ τ^ν` on `[0, T]`; requires `T ≤ R·e^(−γ/ν)` so that `q`
    /// is strictly increasing.
    pub fn log_modulated_with(nu: f64, gamma: f64, t_max: f64, log_ref: f64) -> Result<Self> {
        let nu = positive("nu", nu)?;
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::domain(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        let t_max = positive("T", t_max)?;
        let log_ref = positive("log_ref", log_ref)?;
        let limit = log_ref * (-gamma / nu).exp();
        if t_max > limit * (1.0 + DOMAIN_SLACK) {
            return Err(Error::domain(format!(
                "T = {t_max} exceeds the monotone range R·exp(-gamma/nu) = {limit}"
            )));
        }
        Ok(Self {
            shape: Shape::LogModulated { gamma, log_ref },
            nu,
            t_max: t_max.min(limit),
            kernel_coef: 0.0,
            kernel_exp: 0.0,
        })
    }

    /// Gauge interpolating the rows `(τ, q(τ))`. A `(0, 0)` row is prepended
    /// when absent; `T` is the last abscissa.
    pub fn tabulated(rows: &[(f64, f64)]) -> Result<Self> {
        let mut x = Vec::with_capacity(rows.len() + 1);
        let mut y = Vec::with_capacity(rows.len() + 1);
        match rows.first() {
            Some(&(0.0, q0)) => {
                if q0 != 0.0 {
                    return Err(Error::domain("tabulated gauge must satisfy q(0) = 0"));
                }
            }
            Some(_) => {
                x.push(0.0);
                y.push(0.0);
            }
            None => return Err(Error::domain("empty gauge table")),
        }
        for &(t, q) in rows {
            if !(t.is_finite() && q.is_finite() && t >= 0.0 && q >= 0.0) {
                return Err(Error::domain(format!("invalid table row ({t}, {q})")));
            }
            x.push(t);
            y.push(q);
        }
        let table = MonotoneTable::new(x, y)?;
        let t_max = table.x_max();
        Ok(Self {
            shape: Shape::Tabulated(table),
            nu: 0.0,
            t_max,
            kernel_coef: 0.0,
            kernel_exp: 0.0,
        })
    }

    pub fn from_params(p: &GaugeParams) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::domain(format!("{name} is required for {:?}", p.family)))
        };
        match p.family {
            GaugeFamily::PowerLaw => Self::power_law(need(p.nu, "nu")?, p.t.unwrap_or(1.0)),
            GaugeFamily::LogModulated => {
                let nu = positive("nu", need(p.nu, "nu")?)?;
                let gamma = need(p.gamma, "gamma")?;
                let log_ref = p.log_ref.unwrap_or(1.0);
                let t_max = p.t.unwrap_or(log_ref * (-gamma / nu).exp());
                Self::log_modulated_with(nu, gamma, t_max, log_ref)
            }
            GaugeFamily::Tabulated => {
                let rows: Vec<(f64, f64)> = need_table(p)?.iter().map(|r| (r[0], r[1])).collect();
                Self::tabulated(&rows)
            }
        }
    }

    pub fn params(&self) -> GaugeParams {
        match &self.shape {
            Shape::PowerLaw => GaugeParams {
                family: GaugeFamily::PowerLaw,
                nu: Some(self.nu),
                gamma: Some(0.0),
                t: Some(self.t_max),
                log_ref: None,
                table: None,
                table_path: None,
            },
            Shape::LogModulated { gamma, log_ref } => GaugeParams {
                family: GaugeFamily::LogModulated,
                nu: Some(self.nu),
                gamma: Some(*gamma),
                t: Some(self.t_max),
                log_ref: Some(*log_ref),
                table: None,
                table_path: None,
            },
            Shape::Tabulated(table) => GaugeParams {
                family: GaugeFamily::Tabulated,
                nu: None,
                gamma: None,
                t: Some(self.t_max),
                log_ref: None,
                table: Some(table.nodes().map(|(a, b)| [a, b]).collect()),
                table_path: None,
            },
        }
    }

    pub fn family(&self) -> GaugeFamily {
        match self.shape {
            Shape::PowerLaw => GaugeFamily::PowerLaw,
            Shape::LogModulated { .. } => GaugeFamily::LogModulated,
            Shape::Tabulated(_) => GaugeFamily::Tabulated,
        }
    }

    /// Exponent ν; `None` for tabulated gauges.
    pub fn nu(&self) -> Option<f64> {
        (!matches!(self.shape, Shape::Tabulated(_))).then_some(self.nu)
    }

    pub fn gamma(&self) -> f64 {
        match self.shape {
            Shape::LogModulated { gamma, .. } => gamma,
            _ => 0.0,
        }
    }

    /// Upper end `T` of the domain.
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    fn check_tau(&self, tau: f64) -> Result<f64> {
        if tau.is_nan() || tau < 0.0 || tau > self.t_max * (1.0 + DOMAIN_SLACK) {
            return Err(Error::domain(format!(
                "tau = {tau} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(tau.min(self.t_max))
    }

    /// `q(τ)` for `τ ∈ [0, T]`.
    pub fn eval_q(&self, tau: f64) -> Result<f64> {
        let tau = self.check_tau(tau)?;
        Ok(self.q(tau))
    }

    /// `q(τ)` for power laws at any `τ ≥ 0`; other families only inside
    /// their domain.
    pub fn eval_q_extended(&self, tau: f64) -> Result<f64> {
        match self.shape {
            Shape::PowerLaw if tau >= 0.0 && tau.is_finite() => Ok(tau.powf(self.nu)),
            _ => self.eval_q(tau),
        }
    }

    pub(crate) fn q(&self, tau: f64) -> f64 {
        match &self.shape {
            Shape::PowerLaw => tau.powf(self.nu),
            Shape::LogModulated { gamma, log_ref } => {
                if tau <= 0.0 {
                    0.0
                } else {
                    (log_ref / tau).ln().powf(*gamma) * tau.powf(self.nu)
                }
            }
            Shape::Tabulated(table) => table.eval(tau),
        }
    }

    pub(crate) fn q_squared(&self, tau: f64) -> f64 {
        let q = self.q(tau);
        q * q
    }

    /// `q(T)`, the largest value in the range.
    pub fn q_max(&self) -> f64 {
        self.q(self.t_max)
    }

    /// `q⁻¹(v)` for `v ∈ [0, q(T)]`.
    pub fn eval_q_inverse(&self, v: f64) -> Result<f64> {
        let top = self.q_max();
        if v.is_nan() || v < 0.0 || v > top * (1.0 + DOMAIN_SLACK) {
            return Err(Error::domain(format!("v = {v} outside [0, {top}]")));
        }
        Ok(self.q_inverse(v.min(top)))
    }

    /// `q(τ)` past `T` for power laws, `None` for other families out of range.
    pub(crate) fn q_beyond(&self, tau: f64) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw => Some(tau.powf(self.nu)),
            _ if tau <= self.t_max => Some(self.q(tau)),
            _ => None,
        }
    }

    /// `q⁻¹(v)` past `q(T)` for power laws, `None` for other families out of range.
    pub(crate) fn q_inverse_beyond(&self, v: f64) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw => Some(v.max(0.0).powf(1.0 / self.nu)),
            _ if v <= self.q_max() => Some(self.q_inverse(v)),
            _ => None,
        }
    }

    pub(crate) fn q_inverse(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        match self.shape {
            Shape::PowerLaw => v.powf(1.0 / self.nu).min(self.t_max),
            _ => self.bisect_inverse(v),
        }
    }

    // Bisection on log τ, so tiny values keep full relative precision.
    fn bisect_inverse(&self, v: f64) -> f64 {
        const TAU_FLOOR: f64 = 1e-300;
        if v >= self.q_max() {
            return self.t_max;
        }
        if v <= self.q(TAU_FLOOR) {
            let (mut lo, mut hi) = (0.0, TAU_FLOOR);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.q(mid) < v {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        let (mut lo, mut hi) = (TAU_FLOOR.ln(), self.t_max.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.q(mid.exp()) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (tl, th) = (lo.exp(), hi.exp());
        if (self.q(tl) - v).abs() <= (self.q(th) - v).abs() {
            tl
        } else {
            th
        }
    }

    /// `(q²)′(τ)` for `τ ∈ (0, T]`.
    pub fn q2_derivative(&self, tau: f64) -> f64 {
        match &self.shape {
            Shape::PowerLaw => 2.0 * self.nu * tau.powf(2.0 * self.nu - 1.0),
            Shape::LogModulated { gamma, log_ref } => {
                let l = (log_ref / tau).ln();
                2.0 * tau.powf(2.0 * self.nu - 1.0)
                    * l.powf(2.0 * gamma - 1.0)
                    * (self.nu * l - gamma)
            }
            Shape::Tabulated(table) => {
                let (q, dq) = table.eval_with_derivative(tau);
                2.0 * q * dq
            }
        }
    }

    /// Closed-form `(q²)″(τ)` where one exists.
    pub fn q2_second_derivative(&self, tau: f64) -> Option<f64> {
        let nu = self.nu;
        match self.shape {
            Shape::PowerLaw => Some(2.0 * nu * (2.0 * nu - 1.0) * tau.powf(2.0 * nu - 2.0)),
            Shape::LogModulated { gamma, log_ref } => {
                let l = (log_ref / tau).ln();
                let bracket = l * (nu * (2.0 * nu - 1.0) * l + gamma * (1.0 - 4.0 * nu))
                    + gamma * (2.0 * gamma - 1.0);
                Some(2.0 * tau.powf(2.0 * (nu - 1.0)) * l.powf(2.0 * (gamma - 1.0)) * bracket)
            }
            Shape::Tabulated(_) => None,
        }
    }

    /// `K(τ) = √((q²)′(τ))` for `τ ∈ (0, T]`.
    pub fn eval_kernel(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::domain(format!("kernel needs tau > 0, got {tau}")));
        }
        let tau = self.check_tau(tau)?;
        let d = self.q2_derivative(tau);
        if d < 0.0 {
            let scale = self.q_squared(self.t_max) / self.t_max;
            if d < -1e-12 * scale {
                return Err(Error::Numerical(format!(
                    "(q^2)'({tau}) = {d:e} < 0: q^2 is not increasing"
                )));
            }
            return Ok(0.0);
        }
        Ok(d.sqrt())
    }

    /// Kernel without domain checks, for quadrature inner loops.
    #[inline]
    pub(crate) fn kernel(&self, tau: f64) -> f64 {
        match self.shape {
            Shape::PowerLaw => {
                if self.kernel_exp == 0.0 {
                    self.kernel_coef
                } else {
                    self.kernel_coef * tau.powf(self.kernel_exp)
                }
            }
            _ => self.q2_derivative(tau).max(0.0).sqrt(),
        }
    }

    /// Power `p` of the substitution `w = v^p` that flattens the kernel's
    /// behaviour `K(w) ~ w^(ν−½)` at the origin.
    pub(crate) fn singularity_power(&self) -> f64 {
        match self.shape {
            Shape::Tabulated(_) => 2.0,
            _ if self.nu < 0.5 => 1.0 / self.nu,
            _ => 2.0,
        }
    }

    /// `√(2ν)` when the kernel is identically constant (Brownian case).
    pub fn constant_kernel(&self) -> Option<f64> {
        (matches!(self.shape, Shape::PowerLaw) && self.kernel_exp == 0.0)
            .then_some(self.kernel_coef)
    }
}

fn need_table(p: &GaugeParams) -> Result<&Vec<[f64; 2]>> {
    match (&p.table, &p.table_path) {
        (Some(t), _) => Ok(t),
        (None, Some(path)) => Err(Error::domain(format!(
            "table_path {path} has not been read"
        ))),
        (None, None) => Err(Error::domain("tabulated gauge needs table rows")),
    }
}

impl Serialize for GaugeSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.params().serialize(s)
    }
}
