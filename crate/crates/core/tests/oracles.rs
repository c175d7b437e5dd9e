//! Fixed-value and Monte Carlo oracles computed independently of the crate.

#![allow(clippy::needless_range_loop)]

use qfield_core::covar::{
    moving_average_variance, sample_moving_average, sample_spectral, CholeskySampler,
    SpectralFactor,
};
use qfield_core::gauge::q3_integral;
use qfield_core::modulus::{
    convergence_report, entropy_integral, jn_from_values, modulus_sweep, Ladder,
};
use qfield_core::rng::{standard_normals, stream_rng};
use qfield_core::verify::isotropy_bounds;
use qfield_core::{DyadicGrid, FieldModel, GaugeSpec, GridCovariance, QuadSettings};

fn cube(nu: f64, d: usize) -> FieldModel {
    FieldModel::cube(GaugeSpec::power_law(nu, 1.0).unwrap(), d, 0.0, 1.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// Values below come from 30-digit tanh-sinh quadrature (mpmath) of the
// defining integrals.
const COV_QUARTER_HALF_ONE: f64 = 0.434_147_892_582_709_1;
const COV_QUARTER_03_08: f64 = 0.304_458_043_036_345_2;

#[test]
fn quarter_power_cross_covariance() {
    // ½ ∫₀^s (s−u)^(−¼) (t−u)^(−¼) du
    let m = cube(0.25, 1);
    assert!(rel(m.cov1d(0.5, 1.0).unwrap(), COV_QUARTER_HALF_ONE) < 1e-8);
    assert!(rel(m.cov1d(0.8, 0.3).unwrap(), COV_QUARTER_03_08) < 1e-8);
    let m2 = cube(0.25, 2);
    let c = m2.cov(&[0.5, 0.5], &[1.0, 1.0]).unwrap();
    assert!(rel(c, COV_QUARTER_HALF_ONE.powi(2)) < 2e-8);
}

#[test]
fn log_modulated_gauge_value() {
    // log(1/τ) √τ at τ = 0.05
    let g = GaugeSpec::log_modulated(0.5, 1.0).unwrap();
    assert!(rel(g.eval_q(0.05).unwrap(), 0.669_866_100_605_671_9) < 1e-14);
    assert!(rel(g.t_max(), (-2.0f64).exp()) < 1e-15);
}

#[test]
fn q3_integral_value() {
    // ∫₀^0.01 ρ^(−½) / √log(1/ρ) dρ
    let g = GaugeSpec::power_law(0.5, 1.0).unwrap();
    let v = q3_integral(&g, 1.0, 0.01, &QuadSettings::with_rtol(1e-10)).unwrap();
    assert!(rel(v, 0.079_900_504_089_785_28) < 1e-8);
}

#[test]
fn entropy_integral_quarter_power() {
    // q⁻¹(ρ) = ρ⁴: ∫₀^0.2 √(4 log(1/ρ)) dρ
    let g = GaugeSpec::power_law(0.25, 1.0).unwrap();
    let r = entropy_integral(&g, 1.0, 0.2).unwrap();
    assert!(rel(r.value, 0.636_477_803_860_593_4) < 1e-8);
    assert!(rel(r.direct, 0.636_477_803_860_593_4) < 1e-6);
}

#[test]
fn brownian_terminal_variance() {
    let m = cube(0.5, 1);
    let grid = DyadicGrid::new(&m, 6).unwrap();
    let s = CholeskySampler::for_grid(&m, &grid, 100).unwrap();
    let reps = 10_000;
    let last = grid.len() - 1;
    let x: Vec<f64> = (0..reps).map(|r| s.draw_values(5, r)[last]).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / reps as f64;
    let se = (2.0 / reps as f64).sqrt();
    assert!((var - 1.0).abs() < 5.0 * se, "{var}");
}

#[test]
fn quarter_power_empirical_covariance() {
    let m = cube(0.25, 1);
    let pts = vec![vec![0.5], vec![1.0]];
    let s = CholeskySampler::new(&m, pts, 10).unwrap();
    let reps = 10_000;
    let draws: Vec<Vec<f64>> = (0..reps).map(|r| s.draw_values(17, r)).collect();
    let c = draws.iter().map(|v| v[0] * v[1]).sum::<f64>() / reps as f64;
    let (v0, v1) = (0.5f64.sqrt(), 1.0);
    let se = ((v0 * v1 + COV_QUARTER_HALF_ONE.powi(2)) / reps as f64).sqrt();
    assert!((c - COV_QUARTER_HALF_ONE).abs() < 5.0 * se, "{c}");
}

#[test]
fn empirical_metric_matches_model() {
    let m = cube(0.25, 2);
    let (x, y) = (vec![0.3, 0.7], vec![0.6, 0.4]);
    let d2 = m.canonical_metric(&x, &y).unwrap().powi(2);
    let s = CholeskySampler::new(&m, vec![x, y], 10).unwrap();
    let reps = 100_000;
    let sq: Vec<f64> = (0..reps)
        .map(|r| {
            let v = s.draw_values(23, r);
            (v[0] - v[1]).powi(2)
        })
        .collect();
    let est = mean(&sq);
    // (X − Y)² / 𝔡² is χ²₁, standard deviation √2
    let se = d2 * 2f64.sqrt() / (reps as f64).sqrt();
    assert!((est - d2).abs() < 5.0 * se, "{est} vs {d2}");
}

fn empirical_covariance(draws: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = draws[0].len();
    let r = draws.len() as f64;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| draws.iter().map(|v| v[i] * v[j]).sum::<f64>() / r)
                .collect()
        })
        .collect()
}

#[test]
fn spectral_and_cholesky_share_the_law() {
    let m = cube(0.25, 1);
    let grid = DyadicGrid::new(&m, 3).unwrap();
    let pts = grid.points();
    let gram = m.gram(&pts).unwrap();
    let reps = 10_000;
    let chol = CholeskySampler::for_grid(&m, &grid, 100).unwrap();
    let spec = SpectralFactor::new(&m, &pts, pts.len()).unwrap();
    let a: Vec<Vec<f64>> = (0..reps).map(|r| chol.draw_values(31, r)).collect();
    let b: Vec<Vec<f64>> = (0..reps)
        .map(|r| spec.draw(&m, &pts, 37, r).values)
        .collect();
    // the Cholesky path samples G + λI
    for (draws, jitter) in [(&a, chol.jitter()), (&b, 0.0)] {
        let c = empirical_covariance(draws);
        let target = |i: usize, j: usize| gram[(i, j)] + if i == j { jitter } else { 0.0 };
        for i in 0..pts.len() {
            let sd = target(i, i).sqrt();
            let mu = draws.iter().map(|v| v[i]).sum::<f64>() / reps as f64;
            assert!(
                mu.abs() <= 5.0 * sd / (reps as f64).sqrt() + 1e-15,
                "mean at {i}: {mu}"
            );
            for j in 0..pts.len() {
                let se =
                    ((target(i, i) * target(j, j) + target(i, j).powi(2)) / reps as f64).sqrt();
                assert!(
                    (c[i][j] - target(i, j)).abs() <= 5.0 * se + 1e-15,
                    "({i},{j})"
                );
            }
        }
    }
}

#[test]
fn spectral_brownian_variances_and_scalar_case() {
    let m = cube(0.5, 1);
    let grid = DyadicGrid::new(&m, 3).unwrap();
    let pts = grid.points();
    let f = SpectralFactor::new(&m, &pts, pts.len()).unwrap();
    let reps = 10_000;
    let draws: Vec<Vec<f64>> = (0..reps).map(|r| f.draw(&m, &pts, 3, r).values).collect();
    for (i, p) in pts.iter().enumerate() {
        let var = draws.iter().map(|v| v[i] * v[i]).sum::<f64>() / reps as f64;
        assert!((var - p[0]).abs() <= 5.0 * p[0] * (2.0 / reps as f64).sqrt() + 1e-15);
    }
    let one = sample_spectral(&m, &[vec![0.36]], 9, 1).unwrap();
    let z = standard_normals(&mut stream_rng(9, 0), 1)[0];
    assert!((one.values[0] - 0.6 * z).abs() < 1e-14);
}

#[test]
fn moving_average_is_exact_for_constant_kernel() {
    let m = cube(0.5, 1);
    let grid = [0.25, 0.5, 1.0];
    let reps = 10_000;
    let v: Vec<f64> = (0..reps)
        .map(|r| sample_moving_average(&m, &grid, 41, r, 64).unwrap().values[2])
        .collect();
    let var = v.iter().map(|x| x * x).sum::<f64>() / reps as f64;
    assert!((var - 1.0).abs() < 0.02 * 1.0 + 5.0 * (2.0 / reps as f64).sqrt());
    assert!((moving_average_variance(&m, &grid, 64).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn moving_average_refines_towards_the_gauge() {
    // midpoint sums of K² underestimate q²(1) = 1 near the singularity
    let m = cube(0.25, 1);
    let grid: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
    let gaps: Vec<f64> = [16, 64, 256]
        .iter()
        .map(|&o| (1.0 - moving_average_variance(&m, &grid, o).unwrap()).abs())
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.02);
}

#[test]
fn sheet_corner_variance() {
    let m = cube(0.25, 2);
    let grid = DyadicGrid::new(&m, 6).unwrap();
    let s = CholeskySampler::for_grid(&m, &grid, 5000).unwrap();
    assert_eq!(s.points().len(), 4225);
    let reps = 1000;
    let last = grid.len() - 1;
    let x: Vec<f64> = (0..reps).map(|r| s.draw_values(43, r)[last]).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / reps as f64;
    assert!(
        (var - 1.0).abs() < 5.0 * (2.0 / reps as f64).sqrt(),
        "{var}"
    );
}

#[test]
fn isotropy_regression_quarter_power_plane() {
    let m = cube(0.25, 2);
    let r = isotropy_bounds(&m, 0.5, 1000, 11).unwrap();
    assert!(r.passed);
    assert!(rel(r.c_hat, 0.945_328_434_488) < 0.01, "{}", r.c_hat);
    assert!(
        rel(r.big_c_hat, 1.388_152_335_424) < 0.01,
        "{}",
        r.big_c_hat
    );
}

#[test]
fn brownian_jn_medians_settle() {
    let m = cube(0.5, 1);
    let mut medians = Vec::new();
    for n in [12u32, 13] {
        let grid = DyadicGrid::new(&m, n).unwrap();
        let s = CholeskySampler::for_grid(&m, &grid, 10_000).unwrap();
        let mut jn: Vec<f64> = (0..100)
            .map(|r| jn_from_values(&m, &grid, &s.draw_values(47 + n as u64, r), n).unwrap())
            .collect();
        jn.sort_by(f64::total_cmp);
        medians.push(0.5 * (jn[49] + jn[50]));
    }
    assert!(rel(medians[1], medians[0]) <= 0.10, "{medians:?}");
}

#[test]
fn quarter_power_modulus_regression() {
    let m = cube(0.25, 1);
    let mut traces = Vec::new();
    for n in [9u32, 10, 11] {
        let grid = DyadicGrid::new(&m, n).unwrap();
        let s = CholeskySampler::for_grid(&m, &grid, 5000).unwrap();
        let values: Vec<Vec<f64>> = (0..20).map(|r| s.draw_values(13 + n as u64, r)).collect();
        let cov = GridCovariance::new(&m, &grid).unwrap();
        let ladder = Ladder::for_grid(&m, &grid).unwrap();
        traces.extend(modulus_sweep(&m, &grid, &cov, &values, &ladder, Some(1.0)).unwrap());
    }
    let rep = convergence_report(&traces, None).unwrap();
    assert!(rep.passed);
    assert!(rel(rep.c_hat, 1.608_770_504_414) < 0.10, "{}", rep.c_hat);
}
