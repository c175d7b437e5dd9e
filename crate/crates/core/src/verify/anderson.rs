use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadSettings};
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// Violations are counted beyond this many combined standard errors.
pub const ANDERSON_SE_BAND: f64 = 4.0;

const PILOT_SAMPLES: usize = 20_000;
const CONDITION_FLOOR: f64 = 1e-10;
const MAX_REDRAWS: usize = 100;

/// One Monte Carlo comparison
/// `P(max_{j≤n} |ΔX_j| < x) ≤ P(max_{j<n} |ΔX_j| < x) · P(|X_n − E(X_n | X_0..X_{n−1})| < x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AndersonInstance {
    pub n: usize,
    pub threshold: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `√(se_lhs² + se_rhs²)`, the right side by the delta method.
    pub combined_se: f64,
    /// `P(|residual| < x)` from the exact residual variance, for comparison.
    pub residual_probability_exact: f64,
    pub residual_probability_mc: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AndersonReport {
    pub instances: Vec<AndersonInstance>,
    pub violations: usize,
    /// Random covariances discarded as numerically singular.
    pub regenerated: usize,
    pub passed: bool,
}

fn normals(rng: &mut StreamRng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lower Cholesky factor of a small SPD matrix, `None` if not positive definite.
fn small_cholesky(s: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = s.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = s[i][i] - dot;
                if v <= 0.0 {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (s[i][j] - dot) / l[j][j];
            }
        }
    }
    Some(l)
}

fn to_mat(s: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(s.len(), s.len(), |i, j| s[i][j])
}

/// `(β, s²)` with `E(X_n | X_0..X_{n−1}) = βᵀX_{<n}` and residual variance `s²`.
fn regression(sigma: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let n = sigma.len() - 1;
    let head: Vec<Vec<f64>> = sigma[..n].iter().map(|r| r[..n].to_vec()).collect();
    let l = small_cholesky(&head)
        .ok_or_else(|| Error::Degenerate("conditioning block is singular".into()))?;
    let k: Vec<f64> = (0..n).map(|i| sigma[i][n]).collect();
    let mut w = k.clone();
    for i in 0..n {
        let dot: f64 = (0..i).map(|j| l[i][j] * w[j]).sum();
        w[i] = (w[i] - dot) / l[i][i];
    }
    let mut beta = w.clone();
    for i in (0..n).rev() {
        let dot: f64 = (i + 1..n).map(|j| l[j][i] * beta[j]).sum();
        beta[i] = (beta[i] - dot) / l[i][i];
    }
    let s2 = sigma[n][n] - w.iter().map(|v| v * v).sum::<f64>();
    if s2 <= 0.0 {
        return Err(Error::Degenerate(
            "residual variance is not positive".into(),
        ));
    }
    Ok((beta, s2))
}

fn max_increment(x: &[f64], upto: usize) -> f64 {
    (1..=upto)
        .map(|j| (x[j] - x[j - 1]).abs())
        .fold(0.0, f64::max)
}

/// Monte Carlo comparison for a given covariance of `(X_0, …, X_n)`.
///
/// The threshold is the median of `max_j |X_j − X_{j−1}|` over an independent
/// pilot sample unless `threshold` is given.
pub fn anderson_instance(
    sigma: &[Vec<f64>],
    threshold: Option<f64>,
    mc_samples: usize,
    seed: u64,
) -> Result<AndersonInstance> {
    let n = sigma
        .len()
        .checked_sub(1)
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::domain("need a covariance of at least two variables"))?;
    let l = small_cholesky(sigma)
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    let (beta, s2) = regression(sigma)?;
    let draw = |rng: &mut StreamRng| -> Vec<f64> {
        let z = normals(rng, n + 1);
        (0..=n)
            .map(|i| (0..=i).map(|k| l[i][k] * z[k]).sum())
            .collect()
    };
    let x = match threshold {
        Some(x) => x,
        None => {
            let mut rng = stream_rng(derive_seed(seed, "anderson-pilot"), 0);
            let mut pilot: Vec<f64> = (0..PILOT_SAMPLES)
                .map(|_| max_increment(&draw(&mut rng), n))
                .collect();
            pilot.sort_by(f64::total_cmp);
            pilot[PILOT_SAMPLES / 2]
        }
    };
    let mut rng = stream_rng(derive_seed(seed, "anderson-mc"), 0);
    let (mut hits_lhs, mut hits_head, mut hits_res) = (0usize, 0usize, 0usize);
    for _ in 0..mc_samples {
        let v = draw(&mut rng);
        let head = max_increment(&v, n - 1) < x;
        let last = (v[n] - v[n - 1]).abs() < x;
        let resid = v[n] - beta.iter().zip(&v[..n]).map(|(b, xi)| b * xi).sum::<f64>();
        hits_lhs += usize::from(head && last);
        hits_head += usize::from(head);
        hits_res += usize::from(resid.abs() < x);
    }
    let m = mc_samples as f64;
    let (p_lhs, p_head, p_res) = (
        hits_lhs as f64 / m,
        hits_head as f64 / m,
        hits_res as f64 / m,
    );
    let var = |p: f64| p * (1.0 - p) / m;
    let rhs = p_head * p_res;
    let se_rhs2 = p_res * p_res * var(p_head) + p_head * p_head * var(p_res);
    let combined_se = (var(p_lhs) + se_rhs2).sqrt();
    Ok(AndersonInstance {
        n,
        threshold: x,
        lhs: p_lhs,
        rhs,
        combined_se,
        residual_probability_exact: libm::erf(x / (2.0 * s2).sqrt()),
        residual_probability_mc: p_res,
        violation: p_lhs > rhs + ANDERSON_SE_BAND * combined_se,
    })
}

fn random_covariance(rng: &mut StreamRng, k: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..k).map(|_| normals(rng, k)).collect();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (0..k).map(|r| a[i][r] * a[j][r]).sum())
                .collect()
        })
        .collect()
}

fn well_conditioned(s: &[Vec<f64>]) -> bool {
    match to_mat(s).self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => {
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            lo > CONDITION_FLOOR * hi
        }
        Err(_) => false,
    }
}

/// `trials` random covariances `Σ = AAᵀ` of `(X_0, …, X_n)`.
pub fn anderson_check(
    n: usize,
    trials: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<AndersonReport> {
    if !(2..=5).contains(&n) {
        return Err(Error::domain(format!("n must lie in 2..=5, got {n}")));
    }
    if mc_samples < 100_000 {
        return Err(Error::domain(format!(
            "need at least 1e5 Monte Carlo samples, got {mc_samples}"
        )));
    }
    let key = derive_seed(seed, &format!("anderson-{n}"));
    let results: Vec<(AndersonInstance, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(AndersonInstance, usize)> {
            let mut rng = stream_rng(key, trial);
            for redraws in 0..MAX_REDRAWS {
                let sigma = random_covariance(&mut rng, n + 1);
                if !well_conditioned(&sigma) {
                    continue;
                }
                match anderson_instance(
                    &sigma,
                    None,
                    mc_samples,
                    derive_seed(key, &trial.to_string()),
                ) {
                    Ok(inst) => return Ok((inst, redraws)),
                    Err(Error::Degenerate(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Degenerate(format!(
                "no usable covariance after {MAX_REDRAWS} draws"
            )))
        })
        .collect::<Result<_>>()?;
    let regenerated = results.iter().map(|r| r.1).sum();
    let instances: Vec<AndersonInstance> = results.into_iter().map(|r| r.0).collect();
    let violations = instances.iter().filter(|i| i.violation).count();
    Ok(AndersonReport {
        passed: violations == 0,
        instances,
        violations,
        regenerated,
    })
}

/// `P(|Y_1| < x, |Y_2| < x)` for a centred bivariate normal with standard
/// deviations `s1, s2` and correlation `rho`, by one-dimensional quadrature
/// of the conditional law of `Y_2` given `Y_1`.
pub fn bivariate_box_probability(s1: f64, s2: f64, rho: f64, x: f64) -> Result<f64> {
    let cs = s2 * (1.0 - rho * rho).max(0.0).sqrt();
    let f = |y: f64| {
        let density = (-0.5 * (y / s1).powi(2)).exp() / (s1 * (2.0 * std::f64::consts::PI).sqrt());
        let mu = rho * s2 / s1 * y;
        let r2 = std::f64::consts::SQRT_2 * cs;
        density * 0.5 * (libm::erf((x - mu) / r2) - libm::erf((-x - mu) / r2))
    };
    Ok(integrate(f, -x, x, &QuadSettings::with_rtol(1e-12))?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `(X_0, X_1)` arbitrary, `X_2 = X_1 + N(0, v)` independent.
    fn independent_increment_sigma() -> Vec<Vec<f64>> {
        let (a, b, c, v) = (1.0, 0.4, 1.5, 0.8);
        vec![vec![a, b, b], vec![b, c, c], vec![b, c, c + v]]
    }

    #[test]
    fn independent_increment_gives_equality() {
        let inst = anderson_instance(&independent_increment_sigma(), None, 200_000, 5).unwrap();
        assert!((inst.lhs - inst.rhs).abs() <= ANDERSON_SE_BAND * inst.combined_se);
        assert!(!inst.violation);
    }

    #[test]
    fn two_step_sides_match_quadrature() {
        // n = 2: increments Y1 = X1 − X0, Y2 = X2 − X1
        let s = [
            vec![1.0, 0.3, -0.2],
            vec![0.3, 1.2, 0.5],
            vec![-0.2, 0.5, 2.0],
        ];
        let sigma: Vec<Vec<f64>> = s.to_vec();
        let inst = anderson_instance(&sigma, Some(1.1), 200_000, 9).unwrap();
        let v1 = sigma[1][1] + sigma[0][0] - 2.0 * sigma[0][1];
        let v2 = sigma[2][2] + sigma[1][1] - 2.0 * sigma[1][2];
        let c12 = sigma[1][2] - sigma[1][1] - sigma[0][2] + sigma[0][1];
        let rho = c12 / (v1 * v2).sqrt();
        let lhs = bivariate_box_probability(v1.sqrt(), v2.sqrt(), rho, 1.1).unwrap();
        let se_l = (lhs * (1.0 - lhs) / 200_000.0).sqrt();
        assert!(
            (inst.lhs - lhs).abs() <= ANDERSON_SE_BAND * se_l,
            "{} vs {lhs}",
            inst.lhs
        );
        let p_head = libm::erf(1.1 / (2.0 * v1).sqrt());
        let rhs = p_head * inst.residual_probability_exact;
        assert!(
            (inst.rhs - rhs).abs() <= ANDERSON_SE_BAND * inst.combined_se,
            "{} vs {rhs}",
            inst.rhs
        );
    }

    #[test]
    fn random_sweep_has_no_violations() {
        let r = anderson_check(3, 4, 100_000, 21).unwrap();
        assert_eq!(r.instances.len(), 4);
        assert!(r.passed);
        for i in &r.instances {
            assert!(i.threshold > 0.0 && i.lhs > 0.05 && i.lhs < 0.95);
        }
    }

    #[test]
    fn argument_checks() {
        assert!(anderson_check(1, 1, 100_000, 0).is_err());
        assert!(anderson_check(2, 1, 10, 0).is_err());
    }
}
