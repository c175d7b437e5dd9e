use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use qfield_core::covar::{sample_moving_average, SpectralFactor};
use qfield_core::gauge::{check_kernel_monotone, check_q1, check_q2, check_q3};
use qfield_core::modulus::{
    convergence_report, default_c_lower, entropy_integral as chaining_integral, jn_from_values,
    modulus_sweep, write_traces_csv, Ladder, ModulusTrace, MIN_REPLICATES, MIN_RESOLUTIONS,
};
use qfield_core::rng::derive_seed;
use qfield_core::verify::{anderson_check, isotropy_bounds, lnd_check, AndersonReport};
use qfield_core::{
    CholeskySampler, ConditionReport, DyadicGrid, Error, GridCovariance, GridSample, SamplerKind,
};

use crate::config::{Check, Format, RunConfig};
use crate::output::{csv_row, Output};
use crate::{CliError, Outcome};

fn output(cfg: &RunConfig, command: &'static str, seed: u64) -> Result<Output, CliError> {
    Output::new(cfg.out_dir(), command, cfg.hash(), seed)
}

fn selected(cfg: &RunConfig, owned: &[Check]) -> Vec<Check> {
    let picked: Vec<Check> = owned
        .iter()
        .copied()
        .filter(|c| cfg.run.checks.contains(c))
        .collect();
    if picked.is_empty() {
        owned.to_vec()
    } else {
        picked
    }
}

fn mark(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct GaugeCheckReport<'a> {
    gauge: &'a qfield_core::GaugeParams,
    passed: bool,
    reports: Vec<ConditionReport>,
}

/// Runs the requested gauge conditions; fails when any of them fails.
pub fn gauge_check(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let g = cfg.gauge_spec()?;
    let checks = selected(
        cfg,
        &[Check::Q1, Check::Q2, Check::Q3, Check::KernelMonotone],
    );
    let mut reports = Vec::with_capacity(checks.len());
    for c in &checks {
        reports.push(match c {
            Check::Q1 => check_q1(&g, cfg.run.tau0)?,
            Check::Q2 => check_q2(&g, cfg.run.tau0)?,
            Check::Q3 => check_q3(&g, g.t_max())?,
            Check::KernelMonotone => check_kernel_monotone(&g),
            _ => unreachable!("filtered above"),
        });
    }
    for r in &reports {
        let c1 = r
            .constant_estimate
            .map(|c| format!(" C1={c:.6e}"))
            .unwrap_or_default();
        println!(
            "{:?}: {} neighborhood={:.6e}{c1}",
            r.condition,
            mark(r.passed),
            r.neighborhood
        );
    }
    let passed = reports.iter().all(|r| r.passed);
    let mut out = output(cfg, "gauge-check", seed)?;
    if cfg.format() == Format::Csv {
        let mut csv = String::from("condition,tau,statistic\n");
        for r in &reports {
            for (tau, s) in &r.evidence_grid {
                csv.push_str(&format!("{:?},{}\n", r.condition, csv_row(&[*tau, *s])));
            }
        }
        out.write("gauge_evidence.csv", csv.as_bytes(), json!({}))?;
    }
    let params = g.params();
    out.write_json(
        "gauge_check.json",
        &GaugeCheckReport {
            gauge: &params,
            passed,
            reports,
        },
        json!({}),
    )?;
    Ok(Outcome::from_passed(passed))
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("run.{key} is required for this command")))
}

/// Draws `run.replicates` samples at `run.resolution` and writes one file per
/// replicate.
pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let m = cfg.model()?;
    let n = require(cfg.run.resolution, "resolution")?;
    let reps = cfg.run.replicates.unwrap_or(1);
    let grid = DyadicGrid::new(&m, n)?;
    let limit = cfg.max_grid_points();
    if grid.len() > limit {
        return Err(Error::GridTooLarge {
            points: grid.len(),
            limit,
        }
        .into());
    }
    let kind = cfg.run.sampler.unwrap_or(SamplerKind::Cholesky);
    let samples: Vec<GridSample> = match kind {
        SamplerKind::Cholesky => {
            let s = CholeskySampler::for_grid(&m, &grid, limit)?;
            (0..reps).into_par_iter().map(|r| s.draw(seed, r)).collect()
        }
        SamplerKind::Spectral => {
            let points = grid.points();
            let f = SpectralFactor::new(&m, &points, cfg.run.rank.unwrap_or(points.len()))?;
            (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut s = f.draw(&m, &points, seed, r);
                    s.resolution = Some(n);
                    s
                })
                .collect()
        }
        SamplerKind::MovingAverage => {
            let coords: Vec<f64> = (0..grid.per_axis()).map(|j| grid.coord(0, j)).collect();
            let over = cfg.run.oversample.unwrap_or(64);
            (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut s = sample_moving_average(&m, &coords, seed, r, over)?;
                    s.resolution = Some(n);
                    Ok(s)
                })
                .collect::<qfield_core::Result<_>>()?
        }
    };
    let mut out = output(cfg, "simulate", seed)?;
    for s in &samples {
        let side = serde_json::to_value(s.sidecar()).map_err(|e| CliError::Io(e.to_string()))?;
        let stem = format!("sample_n{n}_r{:04}", s.replicate_index);
        match cfg.format() {
            Format::Csv => {
                let mut buf = Vec::new();
                s.write_csv(&mut buf)
                    .map_err(|e| CliError::Io(e.to_string()))?;
                out.write(&format!("{stem}.csv"), &buf, side)?;
            }
            Format::Json => {
                out.write_json(&format!("{stem}.json"), s, side)?;
            }
        }
    }
    let jitter = samples.first().and_then(|s| s.jitter_used);
    println!(
        "simulated {reps} replicate(s) of {} points with the {kind:?} sampler (jitter {})",
        grid.len(),
        jitter.map_or("n/a".into(), |j| format!("{j:e}"))
    );
    out.write_json(
        "simulate.json",
        &json!({
            "model_hash": m.model_hash(),
            "resolution": n,
            "points": grid.len(),
            "replicates": reps,
            "sampler": kind,
            "jitter_used": jitter,
        }),
        json!({}),
    )?;
    Ok(Outcome::Pass)
}

/// Isotropy bounds, the LND sweep and the Anderson sweep, as selected.
pub fn verify(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let m = cfg.model()?;
    let g = m.gauge();
    let checks = selected(cfg, &[Check::Isotropy, Check::Lnd, Check::Anderson]);
    let t = cfg.run.t.unwrap_or(0.5 * g.t_max());
    let mut out = output(cfg, "verify", seed)?;
    let mut report = serde_json::Map::new();
    let mut passed = true;

    if checks.contains(&Check::Isotropy) {
        let r = isotropy_bounds(&m, t, cfg.run.isotropy_pairs.unwrap_or(1000), seed)?;
        println!(
            "isotropy: {} c_hat={:.6e} C_hat={:.6e} bound={:.6e} pairs={}",
            mark(r.passed),
            r.c_hat,
            r.big_c_hat,
            r.upper_bound,
            r.pair_count
        );
        passed &= r.passed;
        report.insert("isotropy".into(), json!(r));
    }
    if checks.contains(&Check::Lnd) {
        let s = lnd_check(
            &m,
            t,
            cfg.run.lnd_max_predecessors.unwrap_or(6),
            cfg.run.lnd_trials.unwrap_or(200),
            seed,
        )?;
        println!(
            "lnd: {} min ratio={:.6e} (product-prefactor bound: {:.6e}) trials={} resampled={}",
            mark(s.passed),
            s.min_ratio,
            s.min_product_ratio,
            s.reports.len(),
            s.resampled
        );
        passed &= s.passed;
        let mut rows = String::from("trial,predecessors,condvar_schur,condvar_lsq,lnd_bound,ratio,product_bound,product_ratio\n");
        for (i, r) in s.reports.iter().enumerate() {
            let vals = [
                r.condvar_schur,
                r.condvar_lsq,
                r.lnd_bound,
                r.ratio,
                r.product_bound,
                r.product_ratio,
            ];
            rows.push_str(&format!(
                "{i},{},{}\n",
                r.predecessors.len(),
                csv_row(&vals)
            ));
        }
        if cfg.format() == Format::Csv {
            out.write("lnd_trials.csv", rows.as_bytes(), json!({}))?;
        } else {
            out.write_json("lnd_trials.json", &s.reports, json!({}))?;
        }
        report.insert("lnd".into(), json!(s));
    }
    if checks.contains(&Check::Anderson) {
        let sizes = cfg
            .run
            .anderson_sizes
            .clone()
            .unwrap_or_else(|| vec![2, 3, 4]);
        let trials = cfg.run.anderson_trials.unwrap_or(20);
        let mc = cfg.run.mc_samples.unwrap_or(100_000);
        let reports: Vec<AndersonReport> = sizes
            .iter()
            .map(|&n| anderson_check(n, trials, mc, seed))
            .collect::<qfield_core::Result<_>>()?;
        let mut rows = String::from("n,trial,threshold,lhs,rhs,combined_se,violation\n");
        for r in &reports {
            for (i, inst) in r.instances.iter().enumerate() {
                let vals = [inst.threshold, inst.lhs, inst.rhs, inst.combined_se];
                rows.push_str(&format!(
                    "{},{i},{},{}\n",
                    inst.n,
                    csv_row(&vals),
                    inst.violation
                ));
            }
        }
        let violations: usize = reports.iter().map(|r| r.violations).sum();
        let ok = reports.iter().all(|r| r.passed);
        println!(
            "anderson: {} violations={violations} instances={}",
            mark(ok),
            reports.iter().map(|r| r.instances.len()).sum::<usize>()
        );
        passed &= ok;
        if cfg.format() == Format::Csv {
            out.write("anderson_trials.csv", rows.as_bytes(), json!({}))?;
        } else {
            out.write_json("anderson_trials.json", &reports, json!({}))?;
        }
        report.insert("anderson".into(), json!(reports));
    }
    report.insert("t".into(), json!(t));
    report.insert("passed".into(), json!(passed));
    out.write_json("verify.json", &report, json!({}))?;
    Ok(Outcome::from_passed(passed))
}

/// Simulates every `(resolution, replicate)`, computes sup-ratio traces and
/// `J_n`, and summarises convergence.
pub fn modulus(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let resolutions = cfg
        .run
        .resolutions
        .clone()
        .ok_or_else(|| CliError::Config("run.resolutions is required for modulus".into()))?;
    if resolutions.len() < MIN_RESOLUTIONS {
        return Err(CliError::Config(format!(
            "modulus needs at least {MIN_RESOLUTIONS} resolutions, got {}",
            resolutions.len()
        )));
    }
    let reps = cfg.run.replicates.unwrap_or(MIN_REPLICATES as u64);
    if reps < MIN_REPLICATES as u64 {
        return Err(CliError::Config(format!(
            "modulus needs at least {MIN_REPLICATES} replicates, got {reps}"
        )));
    }
    let m = cfg.model()?;
    let limit = cfg.max_grid_points();
    let c_lower = default_c_lower(&m, derive_seed(seed, "modulus/c_lower"))?;
    let mut traces: Vec<ModulusTrace> = Vec::new();
    let mut jitters = Vec::new();
    for &n in &resolutions {
        let grid = DyadicGrid::new(&m, n)?;
        let ladder = match &cfg.run.ladder {
            Some(eps) => Ladder::new(eps.clone())?,
            None => Ladder::for_grid(&m, &grid)?,
        };
        let key = derive_seed(seed, &format!("modulus/n{n}"));
        if grid.len() > limit {
            return Err(Error::GridTooLarge {
                points: grid.len(),
                limit,
            }
            .into());
        }
        let cov = GridCovariance::new(&m, &grid)?;
        let values: Vec<Vec<f64>> = {
            let sampler = CholeskySampler::with_covariance(&cov, limit)?;
            jitters.push(json!({ "resolution": n, "jitter_used": sampler.jitter() }));
            (0..reps)
                .into_par_iter()
                .map(|r| sampler.draw_values(key, r))
                .collect()
        };
        let mut level = modulus_sweep(&m, &grid, &cov, &values, &ladder, c_lower)?;
        for (t, v) in level.iter_mut().zip(&values) {
            t.jn = match jn_from_values(&m, &grid, v, n) {
                Ok(j) => Some(j),
                Err(e) => {
                    log::info!("resolution {n}: J_n not reported: {e}");
                    None
                }
            };
        }
        if let Some((eps, _)) = level.first().and_then(ModulusTrace::terminal) {
            log::info!("resolution {n}: terminal epsilon {eps:e}");
        }
        traces.extend(level);
    }
    let upper = cfg.run.upper_constants.map(|[a, b]| (a, b));
    let report = convergence_report(&traces, upper)?;
    for s in &report.resolutions {
        println!(
            "n={:>2} eps={:.4e} median={:.6} iqr/median={:.4} max={:.6} jn_median={}",
            s.resolution,
            s.terminal_epsilon,
            s.median,
            s.iqr_over_median,
            s.max,
            s.jn_median.map_or("n/a".into(), |j| format!("{j:.6}"))
        );
    }
    println!(
        "modulus: {} C_hat={:.6} concentration={} boundedness={}",
        mark(report.passed),
        report.c_hat,
        report.concentration_holds,
        report.boundedness_holds
    );
    let mut out = output(cfg, "modulus", seed)?;
    let extra =
        json!({ "model_hash": m.model_hash(), "replicates": reps, "resolutions": resolutions });
    match cfg.format() {
        Format::Csv => {
            let mut buf = Vec::new();
            write_traces_csv(&traces, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
            out.write("modulus_traces.csv", &buf, extra.clone())?;
        }
        Format::Json => {
            out.write_json("modulus_traces.json", &traces, extra.clone())?;
        }
    }
    out.write_json(
        "modulus_report.json",
        &json!({ "report": report, "c_lower": c_lower, "jitter": jitters }),
        extra,
    )?;
    Ok(Outcome::from_passed(report.passed))
}

#[derive(Serialize)]
struct EntropyRow {
    epsilon: f64,
    value: f64,
    direct: f64,
    relative_difference: f64,
    boundary_term: f64,
    bound: f64,
    bound_holds: bool,
}

/// Chaining integral on a ladder of `ε`, checked against `(C₁+1)ε√log(diam/q⁻¹(ε))`.
pub fn entropy_integral(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let g = cfg.gauge_spec()?;
    let diam = match cfg.run.diam {
        Some(d) => d,
        None => cfg.model()?.diameter(),
    };
    let q3 = check_q3(&g, diam.min(g.t_max()))?;
    let c1 = q3.constant_estimate.ok_or_else(|| {
        CliError::Math(Error::Numerical(
            "(q3) produced no finite constant estimate".into(),
        ))
    })?;
    let epsilons = match &cfg.run.epsilons {
        Some(e) => e.clone(),
        None => {
            // from q(min(diam, T)/2) down by halves
            let top = g.eval_q(0.5 * diam.min(g.t_max()))?;
            (0..10).map(|k| top * 0.5f64.powi(k)).collect()
        }
    };
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in &epsilons {
        let r = chaining_integral(&g, diam, eps)?;
        let bound = (c1 + 1.0) * r.boundary_term;
        rows.push(EntropyRow {
            epsilon: eps,
            value: r.value,
            direct: r.direct,
            relative_difference: r.relative_difference,
            boundary_term: r.boundary_term,
            bound,
            bound_holds: r.value <= bound * (1.0 + 1e-12),
        });
    }
    let passed = q3.passed && rows.iter().all(|r| r.bound_holds);
    for r in &rows {
        println!(
            "eps={:.6e} value={:.12e} rel.diff={:.2e} bound={:.6e} {}",
            r.epsilon,
            r.value,
            r.relative_difference,
            r.bound,
            mark(r.bound_holds)
        );
    }
    println!("entropy-integral: {} C1={c1:.6e}", mark(passed));
    let mut out = output(cfg, "entropy-integral", seed)?;
    if cfg.format() == Format::Csv {
        let mut csv = String::from(
            "epsilon,value,direct,relative_difference,boundary_term,bound,bound_holds\n",
        );
        for r in &rows {
            let vals = [
                r.epsilon,
                r.value,
                r.direct,
                r.relative_difference,
                r.boundary_term,
                r.bound,
            ];
            csv.push_str(&format!("{},{}\n", csv_row(&vals), r.bound_holds));
        }
        out.write("entropy_integral.csv", csv.as_bytes(), json!({}))?;
    }
    out.write_json(
        "entropy_integral.json",
        &json!({ "diam": diam, "c1": c1, "q3_passed": q3.passed, "passed": passed, "rows": rows }),
        json!({}),
    )?;
    Ok(Outcome::from_passed(passed))
}
