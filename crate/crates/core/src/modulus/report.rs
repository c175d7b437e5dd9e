use serde::Serialize;

use super::ModulusTrace;
use crate::error::{Error, Result};

pub const MIN_RESOLUTIONS: usize = 3;
pub const MIN_REPLICATES: usize = 20;
/// Largest tolerated IQR/median of the terminal ratio at the finest resolution.
pub const CONCENTRATION_LIMIT: f64 = 0.35;
/// No resolution's largest terminal ratio may exceed this multiple of the
/// coarsest median.
pub const BOUNDEDNESS_FACTOR: f64 = 3.0;

/// Replicate distribution of the terminal sup ratio at one resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolutionSummary {
    pub resolution: u32,
    pub replicates: usize,
    pub terminal_epsilon: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub iqr_over_median: f64,
    pub max: f64,
    pub jn_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub resolutions: Vec<ResolutionSummary>,
    /// Median terminal ratio at the finest resolution.
    pub c_hat: f64,
    pub concentration_holds: bool,
    pub boundedness_holds: bool,
    /// `(C₀, C₁)` as supplied; the universal chaining constant is not known,
    /// so the upper bound is checked only as boundedness across resolutions.
    pub upper_constants: Option<(f64, f64)>,
    pub upper_bound_mode: &'static str,
    pub passed: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summarises traces by resolution and checks concentration and boundedness.
///
/// Concentration holds when the finest resolution's IQR/median is at most
/// [`CONCENTRATION_LIMIT`] or no larger than at the coarsest resolution.
pub fn convergence_report(
    traces: &[ModulusTrace],
    upper_constants: Option<(f64, f64)>,
) -> Result<ConvergenceReport> {
    let mut res: Vec<u32> = traces.iter().map(|t| t.resolution).collect();
    res.sort_unstable();
    res.dedup();
    if res.len() < MIN_RESOLUTIONS {
        return Err(Error::InsufficientData(format!(
            "{} resolutions, need at least {MIN_RESOLUTIONS}",
            res.len()
        )));
    }
    let mut summaries = Vec::with_capacity(res.len());
    for &n in &res {
        let group: Vec<&ModulusTrace> = traces.iter().filter(|t| t.resolution == n).collect();
        if group.len() < MIN_REPLICATES {
            return Err(Error::InsufficientData(format!(
                "resolution {n} has {} replicates, need at least {MIN_REPLICATES}",
                group.len()
            )));
        }
        let mut terminal = Vec::with_capacity(group.len());
        let mut eps = f64::NAN;
        for t in &group {
            let (e, r) = t.terminal().ok_or_else(|| {
                Error::InsufficientData(format!("resolution {n}: every ladder level is starved"))
            })?;
            eps = e;
            terminal.push(r);
        }
        terminal.sort_by(f64::total_cmp);
        let median = quantile(&terminal, 0.5);
        let (q1, q3) = (quantile(&terminal, 0.25), quantile(&terminal, 0.75));
        let mut jn: Vec<f64> = group.iter().filter_map(|t| t.jn).collect();
        jn.sort_by(f64::total_cmp);
        summaries.push(ResolutionSummary {
            resolution: n,
            replicates: group.len(),
            terminal_epsilon: eps,
            median,
            q1,
            q3,
            iqr: q3 - q1,
            iqr_over_median: if median > 0.0 {
                (q3 - q1) / median
            } else {
                0.0
            },
            max: terminal[terminal.len() - 1],
            jn_median: (!jn.is_empty()).then(|| quantile(&jn, 0.5)),
        });
    }
    let coarse = &summaries[0];
    let fine = &summaries[summaries.len() - 1];
    let concentration_holds = fine.iqr_over_median <= CONCENTRATION_LIMIT
        || fine.iqr_over_median <= coarse.iqr_over_median;
    let boundedness_holds = summaries
        .iter()
        .all(|s| s.max <= BOUNDEDNESS_FACTOR * coarse.median);
    Ok(ConvergenceReport {
        c_hat: fine.median,
        concentration_holds,
        boundedness_holds,
        passed: concentration_holds && boundedness_holds,
        upper_constants,
        upper_bound_mode: "boundedness",
        resolutions: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(resolution: u32, replicate: u64, terminal: f64) -> ModulusTrace {
        ModulusTrace {
            resolution,
            replicate,
            epsilon_ladder: vec![0.5, 0.25],
            sup_ratio: vec![terminal + 0.1, terminal],
            pair_counts: vec![100, 60],
            starved: vec![false, false],
            jn: Some(terminal * 0.9),
            pairs_examined: 100,
            pairs_excluded: 0,
        }
    }

    #[test]
    fn identical_traces_have_zero_spread() {
        let traces: Vec<ModulusTrace> = [4, 5, 6]
            .iter()
            .flat_map(|&n| (0..20).map(move |r| trace(n, r, 1.3)))
            .collect();
        let rep = convergence_report(&traces, None).unwrap();
        assert_eq!(rep.c_hat, 1.3);
        assert!(rep.resolutions.iter().all(|s| s.iqr == 0.0));
        assert!(rep.passed);
    }

    #[test]
    fn insufficient_inputs_are_rejected() {
        let two: Vec<ModulusTrace> = [4, 5]
            .iter()
            .flat_map(|&n| (0..20).map(move |r| trace(n, r, 1.0)))
            .collect();
        assert!(matches!(
            convergence_report(&two, None),
            Err(Error::InsufficientData(_))
        ));
        let thin: Vec<ModulusTrace> = [4, 5, 6]
            .iter()
            .flat_map(|&n| (0..5).map(move |r| trace(n, r, 1.0)))
            .collect();
        assert!(matches!(
            convergence_report(&thin, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn blow_up_breaks_boundedness() {
        let mut traces: Vec<ModulusTrace> = [4, 5, 6]
            .iter()
            .flat_map(|&n| (0..20).map(move |r| trace(n, r, 1.0 + r as f64 * 0.001)))
            .collect();
        traces.last_mut().unwrap().sup_ratio[1] = 3.5;
        let rep = convergence_report(&traces, Some((1.0, 2.0))).unwrap();
        assert!(!rep.boundedness_holds && !rep.passed);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }
}
