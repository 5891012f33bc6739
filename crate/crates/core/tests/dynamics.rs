use std::f64::consts::TAU;

use geophase_core::connection::{ConnectionMethod, ConnectionSample};
use geophase_core::dynamics::{gauge_restore, gauge_transform, OmegaSamples};
use geophase_core::holonomy::{compose, embed_two_level};
use geophase_core::spectrum::solve_along_path;
use geophase_core::{
    assemble_omega, build_path, fidelity, integrate_coupled, validity_report, Complex64,
    ConnectionField, DynamicsConfig, PathSpec, PotentialModel, SolverConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gap_flagged(w: f64) -> (f64, bool) {
    let model = PotentialModel::structured_well();
    let path = build_path(&PathSpec::Polyline {
        vertices: vec![vec![0.35, w], vec![0.45, w]],
        per_edge: 40,
    })
    .unwrap()
    .map_to_span(0.0, 100.0)
    .unwrap();
    let cfg = SolverConfig {
        levels: 4,
        ..SolverConfig::default()
    };
    let spectra = solve_along_path(&model, &path, &cfg).unwrap();
    let field = ConnectionField::hellmann_feynman(&model, &path, &spectra).unwrap();
    let omega = assemble_omega(&path, &spectra).unwrap();
    let report = validity_report(&field, &omega, 1e4, &DynamicsConfig::default()).unwrap();
    let flagged = report.flags.iter().any(|f| f.contains("quasi-degeneracy"));
    (report.gap_ratio.unwrap(), flagged)
}

#[test]
fn wide_gap_region_raises_the_quasi_degeneracy_flag() {
    let (ratio, flagged) = gap_flagged(0.2);
    assert!(ratio > 0.1, "ratio {ratio}");
    assert!(flagged);
    let (ratio, flagged) = gap_flagged(0.0);
    assert!(ratio < 0.05, "ratio {ratio}");
    assert!(!flagged);
}

fn state() -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3)
        .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fidelity_ignores_global_phase(a in state(), b in state(), phase in 0.0..TAU) {
        let f = fidelity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        let rotated: Vec<Complex64> = b.iter().map(|z| z * Complex64::from_polar(1.0, phase)).collect();
        prop_assert!((fidelity(&a, &rotated) - f).abs() < 1e-12);
        prop_assert!((fidelity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_round_trip(c in state(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let u = compose(
            &embed_two_level(x, (0, 1), 3).unwrap(),
            &embed_two_level(y, (1, 2), 3).unwrap(),
        )
        .unwrap();
        let real = u.u.map(|z| z.re);
        let frames = vec![DMatrix::identity(3, 3), real];
        let states = vec![c.clone(), c.clone()];
        let gauged = gauge_transform(&states, &frames).unwrap();
        prop_assert_eq!(&gauged[0], &c);
        let back = gauge_restore(&gauged, &frames).unwrap();
        for (p, q) in back[1].iter().zip(&c) {
            prop_assert!((p - q).norm() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn uncoupled_channels_keep_their_populations(c0 in state(), eps in 1e3..1e4f64) {
        let path = build_path(&PathSpec::Polyline { vertices: vec![vec![0.0], vec![1.0]], per_edge: 20 })
            .unwrap()
            .map_to_span(0.0, 5.0)
            .unwrap();
        let samples = path
            .samples()
            .iter()
            .map(|s| ConnectionSample::new(s.control.clone(), vec![DMatrix::zeros(3, 3)]).unwrap())
            .collect();
        let field = ConnectionField::from_samples(&path, samples, ConnectionMethod::HellmannFeynman).unwrap();
        let omega = OmegaSamples::new(path.ys(), vec![vec![10.0, 40.0, 90.0]; path.len()]).unwrap();
        let res = integrate_coupled(&field, &omega, eps, &c0, &DynamicsConfig::default()).unwrap();
        // RK4 damps each oscillator by about (k dy)^6 / 144 per step.
        let steps = res.steps as f64;
        for (a, b) in res.initial.populations().iter().zip(res.final_state.populations()) {
            prop_assert!((a - b).abs() <= 2.0 * steps * 1e-6 / 144.0 * a + 1e-14, "{a} -> {b}");
        }
    }
}
