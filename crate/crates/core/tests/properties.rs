use proptest::prelude::*;

use qfield_core::covar::CholeskySampler;
use qfield_core::modulus::{
    diagonal_indices, entropy_integral, jn_from_values, modulus_sweep, Ladder, LEVEL_SLACK,
};
use qfield_core::verify::conditional_variance_schur;
use qfield_core::{DyadicGrid, FieldModel, GaugeSpec, GridCovariance, PointCovariance};

fn gauge_strategy() -> impl Strategy<Value = GaugeSpec> {
    prop_oneof![
        (0.05f64..1.0).prop_map(|nu| GaugeSpec::power_law(nu, 1.0).unwrap()),
        (0.2f64..1.0, 0.1f64..1.5)
            .prop_map(|(nu, gamma)| GaugeSpec::log_modulated(nu, gamma).unwrap()),
    ]
}

fn model(nu: f64, d: usize) -> FieldModel {
    FieldModel::cube(GaugeSpec::power_law(nu, 1.0).unwrap(), d, 0.0, 1.0).unwrap()
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gauge_inverse_round_trips(g in gauge_strategy(), u in 1e-6f64..1.0) {
        let tau = u * g.t_max();
        let q = g.eval_q(tau).unwrap();
        let back = g.eval_q_inverse(q).unwrap();
        prop_assert!((back - tau).abs() <= 1e-9 * tau, "{tau} -> {q} -> {back}");
    }

    #[test]
    fn gauge_is_increasing(g in gauge_strategy(), a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        let t = g.t_max();
        prop_assert!(g.eval_q(lo * t).unwrap() < g.eval_q(hi * t).unwrap());
    }

    #[test]
    fn kernel_squares_to_the_derivative(g in gauge_strategy(), u in 0.01f64..0.99) {
        // central difference of q² against K²
        let tau = u * g.t_max();
        let h = 1e-5 * tau;
        let q2 = |s: f64| g.eval_q(s).unwrap().powi(2);
        let fd = (q2(tau + h) - q2(tau - h)) / (2.0 * h);
        let k2 = g.eval_kernel(tau).unwrap().powi(2);
        prop_assert!((fd - k2).abs() <= 1e-5 * k2.abs().max(1e-12), "{fd} vs {k2}");
        prop_assert!((g.q2_derivative(tau) - k2).abs() <= 1e-12 * k2);
    }

    #[test]
    fn covariance_is_symmetric(nu in prop::sample::select(vec![0.25, 0.4, 0.5, 0.8]), x in point(2), y in point(2)) {
        let m = model(nu, 2);
        prop_assert_eq!(m.cov(&x, &y).unwrap(), m.cov(&y, &x).unwrap());
    }

    #[test]
    fn diagonal_is_product_of_squared_gauges(g in gauge_strategy(), u in prop::collection::vec(0.0f64..=1.0, 1..4)) {
        let t = g.t_max();
        let x: Vec<f64> = u.iter().map(|v| v * t).collect();
        let m = FieldModel::cube(g.clone(), x.len(), 0.0, t).unwrap();
        let expect: f64 = x.iter().map(|&s| g.eval_q(s).unwrap().powi(2)).product();
        let got = m.cov(&x, &x).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn metric_triangle_inequality(nu in prop::sample::select(vec![0.25, 0.5]), x in point(2), y in point(2), z in point(2)) {
        let m = model(nu, 2);
        let d = |a: &[f64], b: &[f64]| m.canonical_metric(a, b).unwrap();
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }

    #[test]
    fn isotropy_upper_bound(nu in prop::sample::select(vec![0.25, 0.5]), d in 1usize..=3, seed in any::<u64>()) {
        let m = model(nu, d);
        let mut rng = qfield_core::rng::stream_rng(seed, 0);
        let x: Vec<f64> = (0..d).map(|_| qfield_core::rng::uniform(&mut rng, 0.0, 1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| qfield_core::rng::uniform(&mut rng, 0.0, 1.0)).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let metric2 = m.canonical_metric(&x, &y).unwrap().powi(2);
        // |x − y| may exceed T = 1 for d ≥ 2; the power law extends past T
        let bound = 2.0 * d as f64 * dist.powf(2.0 * nu);
        prop_assert!(metric2 <= bound + 1e-9, "{metric2} > {bound}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gram_is_positive_semidefinite(nu in prop::sample::select(vec![0.25, 0.5, 0.7]), pts in prop::collection::vec(point(2), 1..32)) {
        let m = model(nu, 2);
        let g = m.gram(&pts).unwrap();
        let n = pts.len();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
        let max_diag = (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max);
        let ev = g.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10 * max_diag, "min eigenvalue {min}");
    }

    #[test]
    fn more_predecessors_never_add_variance(
        nu in prop::sample::select(vec![0.25, 0.5]),
        d in 1usize..=2,
        x in point(2),
        preds in prop::collection::vec(point(2), 2..6),
    ) {
        let m = model(nu, d);
        let x = &x[..d];
        let preds: Vec<Vec<f64>> = preds.iter().map(|p| p[..d].to_vec()).collect();
        let scale = m.variance(x).unwrap().max(1e-300);
        let mut prev = f64::INFINITY;
        for k in 1..=preds.len() {
            let v = conditional_variance_schur(&m, x, &preds[..k]).unwrap();
            prop_assert!(v <= prev + 1e-10 * scale, "{k}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn entropy_forms_agree(g in gauge_strategy(), frac in 0.01f64..0.9, spread in 1.0f64..3.0) {
        let diam = g.t_max() * spread;
        let eps = frac * g.eval_q(g.t_max()).unwrap();
        let r = entropy_integral(&g, diam, eps).unwrap();
        prop_assert!(r.relative_difference <= 1e-6);
        prop_assert!(r.value >= r.boundary_term);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sup_ratio_shrinks_down_the_ladder(nu in prop::sample::select(vec![0.25, 0.5]), d in 1usize..=2, seed in any::<u64>()) {
        let m = model(nu, d);
        let n = if d == 1 { 7 } else { 3 };
        let grid = DyadicGrid::new(&m, n).unwrap();
        let sampler = CholeskySampler::for_grid(&m, &grid, 10_000).unwrap();
        let values: Vec<Vec<f64>> = (0..3).map(|r| sampler.draw_values(seed, r)).collect();
        let cov = GridCovariance::new(&m, &grid).unwrap();
        // the default ladder starts at q(diam)/4, below every grid metric when ν = ¼ on coarse grids
        let h = 0.5f64.powi(n as i32);
        let ladder = Ladder::geometric(0.9, m.gauge().eval_q(h).unwrap()).unwrap();
        let traces = modulus_sweep(&m, &grid, &cov, &values, &ladder, None).unwrap();
        for (t, v) in traces.iter().zip(&values) {
            prop_assert!(t.sup_ratio.iter().all(|r| r.is_finite() && *r >= 0.0));
            for w in t.sup_ratio.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            // every diagonal pair at level n lies in the bucket of its own metric
            let idx = diagonal_indices(&m, &grid, n).unwrap();
            for w in idx.windows(2) {
                let metric = cov.metric(w[0], w[1]).unwrap();
                let Some(k) = ladder.epsilons().iter().rposition(|e| e * (1.0 + LEVEL_SLACK) >= metric) else {
                    continue;
                };
                let inv = m.gauge().eval_q_inverse(metric).unwrap();
                let den = metric * (m.diameter() / inv).ln().sqrt();
                prop_assert!((v[w[1]] - v[w[0]]).abs() / den <= t.sup_ratio[k] * (1.0 + 1e-12));
            }
            if nu == 0.5 && d == 1 {
                // 𝔡 of grid neighbours is exactly ε_n here
                let jn = jn_from_values(&m, &grid, v, n).unwrap();
                prop_assert!(jn <= t.sup_ratio[ladder.len() - 1] * (1.0 + 1e-12));
            }
        }
    }
}
