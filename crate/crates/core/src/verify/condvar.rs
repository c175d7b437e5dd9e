use faer::{Mat, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::covar::{CholeskyFactor, FieldModel};
use crate::error::{Error, Result};
use crate::gauge::check_kernel_monotone;
use crate::rng::{derive_seed, stream_rng, uniform};

/// Largest predecessor count accepted by [`lnd_check`].
pub const MAX_PREDECESSORS: usize = 8;
/// The sweep passes when every ratio is at least `1 − LND_TOLERANCE`.
pub const LND_TOLERANCE: f64 = 1e-6;

/// `Var(X(x) | X(x¹), …, X(xⁿ))` computed two ways, with the LND lower bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CondVarReport {
    pub target: Vec<f64>,
    pub predecessors: Vec<Vec<f64>>,
    pub condvar_schur: f64,
    pub condvar_lsq: f64,
    pub lnd_bound: f64,
    pub ratio: f64,
    /// Bound with the exact per-axis prefactors, see [`lnd_product_bound`].
    pub product_bound: f64,
    pub product_ratio: f64,
}

struct Conditioning {
    var: f64,
    k: Vec<f64>,
    gram: Mat<f64>,
}

fn conditioning(m: &FieldModel, x: &[f64], preds: &[Vec<f64>]) -> Result<Conditioning> {
    if preds.is_empty() {
        return Err(Error::domain("need at least one predecessor"));
    }
    let var = m.variance(x)?;
    let k = preds
        .iter()
        .map(|p| m.cov(x, p))
        .collect::<Result<Vec<_>>>()?;
    let gram = m.gram(preds)?;
    Ok(Conditioning { var, k, gram })
}

fn clamp_condvar(raw: f64, var: f64) -> f64 {
    let scale = var.max(f64::MIN_POSITIVE);
    if raw < -1e-10 * scale || raw > var + 1e-10 * scale {
        log::warn!("conditional variance {raw:e} outside [0, {var:e}] beyond round-off");
    }
    raw.clamp(0.0, var)
}

/// Schur complement `σ² − kᵀ(G + λI)⁻¹k` through a jittered Cholesky factor:
/// with `w = L⁻¹k` it is `σ² − wᵀw`.
pub fn conditional_variance_schur(m: &FieldModel, x: &[f64], preds: &[Vec<f64>]) -> Result<f64> {
    let c = conditioning(m, x, preds)?;
    let n = preds.len();
    let factor = CholeskyFactor::with_fill(n, |g| {
        for j in 0..n {
            for i in j..n {
                g[(i, j)] = c.gram[(i, j)];
            }
        }
        Ok(())
    })?;
    let w = factor.forward(&c.k);
    let raw = c.var - w.iter().map(|v| v * v).sum::<f64>();
    Ok(clamp_condvar(raw, c.var))
}

/// Least-squares form `min_a E[(X(x) − Σ a_j X(x^j))²] = σ² − kᵀa` with `a`
/// solving the normal equations `(G + λI) a = k` by eigendecomposition.
///
/// Uses the same jitter schedule start as the Schur path so the two agree to
/// round-off; eigen-directions below that level are dropped.
pub fn conditional_variance_lsq(m: &FieldModel, x: &[f64], preds: &[Vec<f64>]) -> Result<f64> {
    let c = conditioning(m, x, preds)?;
    let n = preds.len();
    let max_diag = (0..n).map(|i| c.gram[(i, i)]).fold(0.0, f64::max);
    if max_diag == 0.0 {
        return Ok(c.var);
    }
    let lambda = crate::covar::JITTER_START * max_diag;
    let evd = c
        .gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization {
            jitter: lambda,
            reason: format!("eigen solver: {e:?}"),
        })?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let mut a = vec![0.0; n];
    for r in 0..n {
        let ev = s[r] + lambda;
        if ev <= lambda {
            continue;
        }
        let col = u.col(r);
        let proj: f64 = (0..n).map(|i| col[i] * c.k[i]).sum::<f64>() / ev;
        for (i, ai) in a.iter_mut().enumerate() {
            *ai += proj * col[i];
        }
    }
    let raw = c.var - a.iter().zip(&c.k).map(|(ai, ki)| ai * ki).sum::<f64>();
    Ok(clamp_condvar(raw, c.var))
}

/// `q^{2(d−1)}(t) Σ_l min_j q²(x_l − x_l^j)`.
pub fn lnd_bound(m: &FieldModel, t: f64, x: &[f64], preds: &[Vec<f64>]) -> Result<f64> {
    let g = m.gauge();
    let d = m.dim();
    let mut sum = 0.0;
    for l in 0..d {
        let gap = preds
            .iter()
            .map(|p| (x[l] - p[l]).abs())
            .fold(f64::INFINITY, f64::min);
        sum += g.eval_q(gap)?.powi(2);
    }
    Ok(g.eval_q(t)?.powi(2 * (d as i32 - 1)) * sum)
}

/// `Σ_l ∏_{k≠l} (q²(x_k) − q²(x_k − t)) · min_j q²(x_l − x_l^j)`.
///
/// Splitting each axis of `[0, x]` at `t` and regressing only the one-axis
/// pieces gives this bound. Its prefactor `∫₀^t K²(x_k − y) dy` equals
/// `q²(t)` for a constant kernel and is smaller when `K` decreases.
pub fn lnd_product_bound(m: &FieldModel, t: f64, x: &[f64], preds: &[Vec<f64>]) -> Result<f64> {
    let g = m.gauge();
    let d = m.dim();
    let mass: Vec<f64> = x
        .iter()
        .map(|&xk| Ok(g.eval_q(xk)?.powi(2) - g.eval_q((xk - t).max(0.0))?.powi(2)))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    for l in 0..d {
        let gap = preds
            .iter()
            .map(|p| (x[l] - p[l]).abs())
            .fold(f64::INFINITY, f64::min);
        let prefactor: f64 = (0..d).filter(|&k| k != l).map(|k| mass[k]).product();
        sum += prefactor * g.eval_q(gap)?.powi(2);
    }
    Ok(sum)
}

/// Full report for one configuration.
pub fn condvar_report(
    m: &FieldModel,
    t: f64,
    x: &[f64],
    preds: &[Vec<f64>],
) -> Result<CondVarReport> {
    let schur = conditional_variance_schur(m, x, preds)?;
    let lsq = conditional_variance_lsq(m, x, preds)?;
    let bound = lnd_bound(m, t, x, preds)?;
    let product = lnd_product_bound(m, t, x, preds)?;
    Ok(CondVarReport {
        target: x.to_vec(),
        predecessors: preds.to_vec(),
        condvar_schur: schur,
        condvar_lsq: lsq,
        lnd_bound: bound,
        ratio: schur / bound,
        product_bound: product,
        product_ratio: schur / product,
    })
}

/// Outcome of a randomised LND sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LndSummary {
    pub reports: Vec<CondVarReport>,
    pub min_ratio: f64,
    /// Smallest ratio against [`lnd_product_bound`].
    pub min_product_ratio: f64,
    pub passed: bool,
    /// Configurations redrawn because two points coincided.
    pub resampled: usize,
}

/// Randomised check of the conditional-variance lower bound.
///
/// Each trial draws `x` uniformly in `[max(a_l, t), b_l]` per axis and
/// `1..=n_max` predecessors with coordinates uniform in `[max(a_l, t), x_l]`,
/// i.e. in the left set of `x`. Requires a non-increasing `(q²)′`.
pub fn lnd_check(
    m: &FieldModel,
    t: f64,
    n_max: usize,
    trials: usize,
    seed: u64,
) -> Result<LndSummary> {
    let g = m.gauge();
    if !(t > 0.0 && t < g.t_max()) {
        return Err(Error::domain(format!(
            "need 0 < t < T = {}, got {t}",
            g.t_max()
        )));
    }
    if n_max == 0 || n_max > MAX_PREDECESSORS {
        return Err(Error::domain(format!(
            "predecessor count must lie in 1..={MAX_PREDECESSORS}, got {n_max}"
        )));
    }
    if !check_kernel_monotone(g).passed {
        return Err(Error::Precondition(
            "local nondeterminism is only established when dq²/dτ is non-increasing; \
             the kernel monotonicity check failed for this gauge"
                .into(),
        ));
    }
    let lo: Vec<f64> = m.lower().iter().map(|&a| a.max(t)).collect();
    if lo.iter().zip(m.upper()).any(|(l, b)| l >= b) {
        return Err(Error::domain("[t, T]^d does not meet the model box"));
    }
    let key = derive_seed(seed, "lnd");
    let d = m.dim();
    let results: Vec<(CondVarReport, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(CondVarReport, usize)> {
            let mut rng = stream_rng(key, trial);
            let mut redrawn = 0;
            loop {
                let x: Vec<f64> = (0..d)
                    .map(|l| uniform(&mut rng, lo[l], m.upper()[l]))
                    .collect();
                let n = 1 + (uniform(&mut rng, 0.0, n_max as f64) as usize).min(n_max - 1);
                let preds: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|l| uniform(&mut rng, lo[l], x[l])).collect())
                    .collect();
                let clash = preds.iter().enumerate().any(|(i, p)| {
                    p.as_slice() == x.as_slice() || preds[..i].iter().any(|o| o == p)
                });
                if clash {
                    redrawn += 1;
                    continue;
                }
                return Ok((condvar_report(m, t, &x, &preds)?, redrawn));
            }
        })
        .collect::<Result<_>>()?;
    let resampled = results.iter().map(|r| r.1).sum();
    let reports: Vec<CondVarReport> = results.into_iter().map(|r| r.0).collect();
    let min_ratio = reports
        .iter()
        .map(|r| r.ratio)
        .fold(f64::INFINITY, f64::min);
    let min_product_ratio = reports
        .iter()
        .map(|r| r.product_ratio)
        .fold(f64::INFINITY, f64::min);
    if min_ratio < 1.0 - LND_TOLERANCE {
        log::warn!(
            "conditional variance fell below the q^(2(d-1))(t) bound: min ratio {min_ratio}"
        );
    }
    Ok(LndSummary {
        passed: min_ratio >= 1.0 - LND_TOLERANCE,
        reports,
        min_ratio,
        min_product_ratio,
        resampled,
    })
}
