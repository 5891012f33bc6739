use geophase_core::spectrum::{eigensolve, eigensolve_with, overlap, solve_along_path};
use geophase_core::{
    build_path, fix_gauge, ControlVector, PathSpec, PotentialModel, Rectangle, SolverConfig,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn cv(l: f64, w: f64) -> ControlVector {
    ControlVector::new(vec![l, w]).unwrap()
}

#[test]
fn dense_oracle_agrees_at_the_figure_corner() {
    let model = PotentialModel::structured_well();
    let r = cv(0.5, 0.02);
    let n = 2000;
    let sol = eigensolve(&model, &r, 2, n).unwrap();

    let d = model.extent(&r).unwrap();
    let h = d / (n + 1) as f64;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 / (h * h) + model.smoothed_average((i + 1) as f64 * h, h, &r);
        if i + 1 < n {
            m[(i, i + 1)] = -1.0 / (h * h);
            m[(i + 1, i)] = -1.0 / (h * h);
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    for (level, &k) in order.iter().take(3).enumerate() {
        let e = eig.eigenvalues[k];
        assert!((sol.eigenvalues[level] - e).abs() / e < 1e-10, "level {level}");
        let col = eig.eigenvectors.column(k);
        let dot: f64 = col
            .iter()
            .zip(&sol.eigenvectors[level])
            .map(|(a, b)| a * b * h.sqrt())
            .sum();
        assert!((dot.abs() - 1.0).abs() < 1e-9, "level {level}: |dot| = {dot}");
    }
}

#[test]
fn widening_lowers_every_level() {
    let model = PotentialModel::structured_well();
    let mut prev: Option<Vec<f64>> = None;
    for j in 0..=5 {
        let s = eigensolve(&model, &cv(0.4, 0.01 * j as f64), 2, 2000).unwrap();
        if let Some(p) = &prev {
            for (a, b) in p.iter().zip(&s.eigenvalues) {
                assert!(b < a);
            }
        }
        prev = Some(s.eigenvalues);
    }
}

#[test]
fn neighbours_overlap_strongly_along_the_rectangle() {
    let model = PotentialModel::structured_well();
    let rect = Rectangle {
        l_in: 0.3,
        l_fin: 0.5,
        w_in: 0.0,
        w_fin: 0.02,
    };
    let path = build_path(&PathSpec::Rectangle { rect, per_edge: 64 }).unwrap();
    let spectra = solve_along_path(&model, &path, &SolverConfig::default()).unwrap();
    for pair in spectra.windows(2) {
        for level in 0..3 {
            assert!(overlap(&pair[0], level, &pair[1], level) > 0.999);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectra_are_ordered_orthonormal_and_above_the_floor(l in 0.0..0.8f64, w in 0.0..0.3f64) {
        let model = PotentialModel::structured_well();
        let cfg = SolverConfig { n_interior: 600, ..SolverConfig::default() };
        let s = eigensolve_with(&model, &cv(l, w), &cfg).unwrap();
        prop_assert!(s.eigenvalues.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(s.eigenvalues[0] > 0.0);
        prop_assert!(s.orthonormality_residual() < 1e-10);
    }

    #[test]
    fn gauge_fixing_is_idempotent(l in 0.0..0.8f64, w in 0.0..0.3f64) {
        let model = PotentialModel::structured_well();
        let cfg = SolverConfig { n_interior: 400, ..SolverConfig::default() };
        let s = eigensolve_with(&model, &cv(l, w), &cfg).unwrap();
        let again = fix_gauge(s.clone(), None).unwrap();
        prop_assert_eq!(&again, &s);
        let tracked = fix_gauge(s.clone(), Some(&s)).unwrap();
        prop_assert_eq!(&tracked, &s);
    }
}
