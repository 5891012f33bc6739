//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary so the lines are always printed; exits non-zero when
//! any criterion fails.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::time::{Duration, Instant};

use geophase_core::connection::{connection_fd_richardson, connection_hf, gamma_identity};
use geophase_core::dynamics::{assemble_omega, integrate_coupled, DynamicsConfig};
use geophase_core::holonomy::{
    abelian_phase_line, abelian_phase_stokes, compose, embed_two_level, lambda_at,
    ordered_exponential, LambdaGrid,
};
use geophase_core::potential::STRUCTURED_WELL_V0;
use geophase_core::spectrum::{eigensolve, eigensolve_with, solve_along_path};
use geophase_core::{
    build_path, Complex64, ConnectionField, ControlPath, ControlVector, PathSpec, PotentialModel,
    Rectangle, SolverConfig, SpectralSolution, SpeedProfile,
};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn cv(l: f64, w: f64) -> ControlVector {
    ControlVector::new(vec![l, w]).unwrap()
}

fn model() -> PotentialModel {
    PotentialModel::structured_well()
}

/// The 4 x 5 sample over `L in [0.3, 0.6]`, `w in [0, 0.05]`.
fn window_points() -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for i in 0..4 {
        for j in 0..5 {
            pts.push((0.3 + 0.1 * i as f64, 0.0125 * j as f64));
        }
    }
    pts
}

/// Final corners of the rectangle family with `(L_in, w_in) = (0.3, 0)`.
const CORNERS: [(f64, f64); 10] = [
    (0.35, 0.01),
    (0.4, 0.02),
    (0.45, 0.005),
    (0.45, 0.03),
    (0.5, 0.02),
    (0.5, 0.04),
    (0.55, 0.015),
    (0.55, 0.05),
    (0.6, 0.01),
    (0.6, 0.05),
];

const PER_EDGE: usize = 64;

fn rectangle(l_fin: f64, w_fin: f64) -> Rectangle {
    Rectangle {
        l_in: 0.3,
        l_fin,
        w_in: 0.0,
        w_fin,
    }
}

fn rect_path(rect: Rectangle) -> ControlPath {
    build_path(&PathSpec::Rectangle {
        rect,
        per_edge: PER_EDGE,
    })
    .unwrap()
}

fn line_alpha(rect: Rectangle, cfg: &SolverConfig) -> f64 {
    let path = rect_path(rect);
    let spectra = solve_along_path(&model(), &path, cfg).unwrap();
    let field = ConnectionField::hellmann_feynman(&model(), &path, &spectra).unwrap();
    abelian_phase_line(&field, path.is_closed()).unwrap().alpha
}

fn criterion_1() -> (bool, String) {
    let target = STRUCTURED_WELL_V0;
    let mut worst = 0.0_f64;
    for k in 1..=6 {
        let l = 0.1 * k as f64;
        let s = eigensolve(&model(), &cv(l, 0.0), 2, 2000).unwrap();
        worst = worst.max((s.eigenvalues[2] / target - 1.0).abs());
    }
    (worst <= 5e-3, format!("max |eps2/(9 pi^2) - 1| = {worst:.3e} (tol 5e-3)"))
}

fn criterion_2() -> (bool, String) {
    let cfg = SolverConfig::default();
    let mut worst = 0.0_f64;
    let mut at = (0.0, 0.0);
    for (l, w) in window_points() {
        let r = cv(l, w);
        let s = eigensolve_with(&model(), &r, &cfg).unwrap();
        let k = connection_hf(&model(), &r, &s, 1).unwrap()[(0, 1)].abs();
        if k > worst {
            worst = k;
            at = (l, w);
        }
    }
    (
        worst <= 1e-6,
        format!(
            "max |<phi0|d_w phi1>| = {worst:.4e} at (L, w) = ({:.2}, {:.4}) (tol 1e-6)",
            at.0, at.1
        ),
    )
}

fn criterion_3() -> (bool, String) {
    let cfg = SolverConfig::default();
    let mut worst = 0.0_f64;
    for (l, w) in window_points() {
        let r = cv(l, w);
        let s = eigensolve_with(&model(), &r, &cfg).unwrap();
        let hf = connection_hf(&model(), &r, &s, 0).unwrap()[(0, 1)];
        let fd = connection_fd_richardson(&model(), &r, 1e-4, &cfg).unwrap()[0][(0, 1)];
        worst = worst.max((hf - fd).abs() / fd.abs());
    }
    (worst <= 1e-3, format!("max relative |K_hf - K_fd| on [K^(L)]_01 = {worst:.3e} (tol 1e-3)"))
}

fn criterion_4() -> (bool, String) {
    let cfg = SolverConfig::default();
    let mut worst = 0.0_f64;
    let mut at = (0.0, 0.0);
    for i in 0..=6 {
        for j in 0..=5 {
            let (l, w) = (0.3 + 0.05 * i as f64, 0.01 * j as f64);
            let r = cv(l, w);
            let s = eigensolve_with(&model(), &r, &cfg).unwrap();
            let k = connection_hf(&model(), &r, &s, 0).unwrap();
            let ratio = k[(0, 2)].abs().max(k[(1, 2)].abs()) / k[(0, 1)].abs();
            if ratio > worst {
                worst = ratio;
                at = (l, w);
            }
        }
    }
    (
        worst <= 0.1,
        format!(
            "max max(|K02|,|K12|)/|K01| of K^(L) = {worst:.3} at (L, w) = ({:.2}, {:.2}) (tol 0.1)",
            at.0, at.1
        ),
    )
}

/// `int f` on `[a, b]` by adaptive Simpson to absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// `theta(w) = 9 pi^2 int_{L_in}^{L_fin} phi0(a/2+L) phi1(a/2+L) / (eps1 - eps0) dL`.
fn theta(w: f64, l_in: f64, l_fin: f64, cfg: &SolverConfig) -> f64 {
    let integrand = |l: f64| {
        let s: SpectralSolution = eigensolve_with(&model(), &cv(l, w), cfg).unwrap();
        let x = 0.5 + l;
        STRUCTURED_WELL_V0 * s.value_at(0, x) * s.value_at(1, x)
            / (s.eigenvalues[1] - s.eigenvalues[0])
    };
    adaptive_simpson(&integrand, l_in, l_fin, 1e-6)
}

fn criterion_5(lines: &[f64]) -> (bool, String) {
    let cfg = SolverConfig::default();
    let mut worst = 0.0_f64;
    let mut report = String::new();
    for (&(l_fin, w_fin), &alpha) in CORNERS.iter().zip(lines) {
        let diff = theta(w_fin, 0.3, l_fin, &cfg) - theta(0.0, 0.3, l_fin, &cfg);
        let err = (alpha - diff).abs();
        if err > worst {
            worst = err;
            report = format!(
                "worst at ({l_fin}, {w_fin}): alpha_line = {alpha:.4e}, theta difference = {diff:.4e}"
            );
        }
    }
    (worst <= 1e-3, format!("max |alpha_line - dtheta| = {worst:.3e} (tol 1e-3); {report}"))
}

fn criterion_6(lines: &[f64]) -> (bool, String) {
    let cfg = SolverConfig::default();
    let ls: Vec<f64> = (0..=30).map(|i| 0.3 + 0.01 * i as f64).collect();
    let ws: Vec<f64> = (0..=160).map(|j| 0.0003125 * j as f64).collect();
    let mut values = Vec::with_capacity(ls.len() * ws.len());
    for &l in &ls {
        for &w in &ws {
            let lam = lambda_at(&model(), &cv(l, w), &cfg).unwrap();
            values.push([lam[0], lam[1]]);
        }
    }
    let grid = LambdaGrid::new(ls, ws, values).unwrap();
    let mut pass = true;
    let mut worst = 0.0_f64;
    for (&(l_fin, w_fin), &alpha) in CORNERS.iter().zip(lines) {
        let stokes = abelian_phase_stokes(&grid, &rectangle(l_fin, w_fin)).unwrap();
        let err = (alpha - stokes).abs();
        pass &= err <= 1e-3_f64.max(1e-2 * alpha.abs());
        worst = worst.max(err);
    }
    (pass, format!("max |alpha_line - alpha_stokes| = {worst:.3e} (tol max(1e-3, 1e-2 |alpha|))"))
}

fn criterion_7() -> (bool, String) {
    let cfg = SolverConfig::default();
    let path = rect_path(rectangle(0.5, 0.02));
    let u_of = |p: &ControlPath| {
        let spectra = solve_along_path(&model(), p, &cfg).unwrap();
        let field = ConnectionField::hellmann_feynman(&model(), p, &spectra).unwrap();
        ordered_exponential(&field, p.is_closed()).unwrap()
    };
    let base = u_of(&path);
    let fast = u_of(&path.reparameterize(&SpeedProfile::dilation(5.0)).unwrap());
    let diff = (&base.u - &fast.u).iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    (diff <= 1e-6, format!("max |U - U_5x| = {diff:.3e} (tol 1e-6)"))
}

fn criterion_8() -> (bool, String) {
    let cfg = SolverConfig {
        levels: 4,
        ..SolverConfig::default()
    };
    let path = rect_path(rectangle(0.5, 0.02)).map_to_span(0.0, 100.0).unwrap();
    let spectra = solve_along_path(&model(), &path, &cfg).unwrap();
    let field = ConnectionField::hellmann_feynman(&model(), &path, &spectra).unwrap();
    let omega = assemble_omega(&path, &spectra).unwrap();
    let dcfg = DynamicsConfig::default();
    let mut c0 = vec![Complex64::default(); dcfg.ell_off + 1];
    c0[0] = Complex64::new(1.0, 0.0);
    let infid: Vec<f64> = [1e3, 1e4, 1e5]
        .iter()
        .map(|&eps| 1.0 - integrate_coupled(&field, &omega, eps, &c0, &dcfg).unwrap().fidelity)
        .collect();
    let monotone = infid[1] < infid[0] && infid[2] < infid[1];
    let fid = 1.0 - infid[1];
    (
        fid >= 0.99 && monotone,
        format!(
            "F(1e4) = {fid:.5} (need >= 0.99); 1 - F at 1e3, 1e4, 1e5 = {:.3e}, {:.3e}, {:.3e} (need decreasing)",
            infid[0], infid[1], infid[2]
        ),
    )
}

fn criterion_9() -> (bool, String) {
    let a = embed_two_level(FRAC_PI_4, (0, 1), 3).unwrap();
    let b = embed_two_level(FRAC_PI_4, (0, 2), 3).unwrap();
    let ab = compose(&a, &b).unwrap();
    let ba = compose(&b, &a).unwrap();
    let comm = (&ab.u - &ba.u).norm();
    let unit = a.unitarity_defect().max(b.unitarity_defect());
    (
        comm > 0.1 && unit <= 1e-10,
        format!("||[U01, U02]||_F = {comm:.4} (need > 0.1); unitarity defect {unit:.1e} (tol 1e-10)"),
    )
}

fn criterion_10() -> (bool, String) {
    let cfg = SolverConfig::default();
    let path = rect_path(rectangle(0.5, 0.02));
    let spectra = solve_along_path(&model(), &path, &cfg).unwrap();
    let field = ConnectionField::hellmann_feynman(&model(), &path, &spectra).unwrap();
    let antisym = field.samples().iter().all(|s| {
        s.components().iter().all(|m| {
            m == &(-m.transpose()) && (0..m.nrows()).all(|i| m[(i, i)] == 0.0)
        })
    });
    let unit = ordered_exponential(&field, true).unwrap().unitarity_defect();
    let ortho = spectra
        .iter()
        .map(|s| s.orthonormality_residual())
        .fold(0.0, f64::max);
    let gcfg = SolverConfig {
        n_interior: 3000,
        levels: 140,
        ..SolverConfig::default()
    };
    let u = [FRAC_1_SQRT_2, -FRAC_1_SQRT_2];
    let mut gamma = 0.0_f64;
    for (l, w) in [(0.35, 0.02), (0.45, 0.03), (0.5, 0.02), (0.55, 0.04)] {
        let g = gamma_identity(&model(), &cv(l, w), &u, 1.25e-5, &gcfg, 3).unwrap();
        gamma = gamma.max(g.residual);
    }
    (
        antisym && unit <= 1e-8 && gamma <= 1e-4 && ortho <= 1e-8,
        format!(
            "K antisymmetric with zero diagonal: {antisym}; unitarity {unit:.1e} (tol 1e-8); \
             Gamma - dK - K^2 residual {gamma:.2e} (tol 1e-4); orthonormality {ortho:.1e} (tol 1e-8)"
        ),
    )
}

fn run(
    out: &mut Vec<Outcome>,
    id: usize,
    title: &'static str,
    budget_s: u64,
    f: impl FnOnce() -> (bool, String),
) {
    let t = Instant::now();
    let (pass, detail) = f();
    let o = Outcome {
        id,
        title,
        pass,
        detail,
        elapsed: t.elapsed(),
        budget: Duration::from_secs(budget_s),
    };
    println!(
        "[{}] C{:<2} {}: {} ({:.1} s, budget {} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.title,
        o.detail,
        o.elapsed.as_secs_f64(),
        o.budget.as_secs()
    );
    out.push(o);
}

fn main() {
    assert!((STRUCTURED_WELL_V0 - 9.0 * PI * PI).abs() < 1e-12);
    let mut out = Vec::new();
    run(&mut out, 1, "stretchable-well invariant", 5, criterion_1);
    run(&mut out, 2, "vanishing w-connection", 10, criterion_2);
    run(&mut out, 3, "Hellmann-Feynman vs finite differences", 30, criterion_3);
    run(&mut out, 4, "two-level dominance", 30, criterion_4);
    let cfg = SolverConfig::default();
    let t = Instant::now();
    let lines: Vec<f64> = CORNERS.iter().map(|&(l, w)| line_alpha(rectangle(l, w), &cfg)).collect();
    let shared = t.elapsed();
    run(&mut out, 5, "theta-difference identity", 60, || {
        let (p, d) = criterion_5(&lines);
        (p, format!("{d}; line integrals took {:.1} s", shared.as_secs_f64()))
    });
    run(&mut out, 6, "Stokes consistency", 60, || criterion_6(&lines));
    run(&mut out, 7, "geometric invariance", 10, criterion_7);
    run(&mut out, 8, "gate validation", 300, criterion_8);
    run(&mut out, 9, "non-Abelian composition", 1, criterion_9);
    run(&mut out, 10, "structural invariants", 60, criterion_10);

    let slow: Vec<usize> = out.iter().filter(|o| o.elapsed > o.budget).map(|o| o.id).collect();
    if !slow.is_empty() {
        println!("runtime budget exceeded by: {slow:?}");
    }
    let failed: Vec<usize> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("{} of {} criteria pass", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
