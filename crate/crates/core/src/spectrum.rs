//! Transverse eigenproblem `(-d^2/dx^2 + V(x; R)) phi = eps phi` with hard walls.
//!
//! Second-order central differences on a uniform grid of `N` interior points
//! over `[0, D(R)]`. Each grid value of `V` is its mean weighted by a cubic
//! B-spline centred on the node, so eigenpairs move smoothly when a step edge
//! slides between grid points. The lowest levels of the symmetric tridiagonal
//! matrix are found by Sturm-sequence bisection followed by inverse iteration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::potential::{ControlPath, ControlVector, PotentialModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Interior grid points.
    pub n_interior: usize,
    /// Number of levels returned (`l_max + 1`).
    pub levels: usize,
    /// Bisection stopping width, rescaled energy units.
    pub eigen_tol: f64,
    /// Bound on `|H v - eps v| / |H|` for a converged pair.
    pub residual_tol: f64,
    pub min_points_per_half_wave: f64,
    /// Gaps below this are reported as near-degeneracies.
    pub degeneracy_gap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_interior: 2000,
            levels: 3,
            eigen_tol: 1e-10,
            residual_tol: 1e-10,
            min_points_per_half_wave: 20.0,
            degeneracy_gap: 1e-8,
        }
    }
}

/// Lowest eigenpairs of the transverse Hamiltonian at one control point.
///
/// Eigenvectors hold the interior grid values `phi(x_i)`, `x_i = i h`,
/// `i = 1..=N`, normalized so that `h * sum phi_i^2 = 1` (trapezoid rule with
/// the vanishing wall values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub control: ControlVector,
    pub extent: f64,
    pub h: f64,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// `|H v - eps v|_2 / |H|_inf` per level.
    pub residuals: Vec<f64>,
}

impl SpectralSolution {
    pub fn levels(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_interior(&self) -> usize {
        self.eigenvectors.first().map_or(0, Vec::len)
    }

    /// Node value including the walls: index 0 is `x = 0`, index `N + 1` is `x = D`.
    fn node(&self, level: usize, i: usize) -> f64 {
        let v = &self.eigenvectors[level];
        if i == 0 || i > v.len() {
            0.0
        } else {
            v[i - 1]
        }
    }

    /// Piecewise-linear interpolant, zero outside `[0, D]`.
    pub fn linear_value(&self, level: usize, x: f64) -> f64 {
        if !(x > 0.0 && x < self.extent) {
            return 0.0;
        }
        let s = x / self.h;
        let i = (s.floor() as usize).min(self.n_interior());
        let t = s - i as f64;
        (1.0 - t) * self.node(level, i) + t * self.node(level, i + 1)
    }

    /// Quadratic interpolation through the three grid nodes nearest `x`.
    pub fn value_at(&self, level: usize, x: f64) -> f64 {
        if !(x > 0.0 && x < self.extent) {
            return 0.0;
        }
        let n = self.n_interior();
        let c = ((x / self.h).round() as usize).clamp(1, n);
        let t = x / self.h - c as f64;
        let (fm, f0, fp) = (
            self.node(level, c - 1),
            self.node(level, c),
            self.node(level, c + 1),
        );
        f0 + 0.5 * t * (fp - fm) + 0.5 * t * t * (fp - 2.0 * f0 + fm)
    }

    /// One-sided estimate of `phi'(D)` at the right wall.
    pub fn right_wall_slope(&self, level: usize) -> f64 {
        let v = &self.eigenvectors[level];
        let n = v.len();
        // third-order backward difference with phi(D) = 0
        (-18.0 * v[n - 1] + 9.0 * v[n - 2] - 2.0 * v[n - 3]) / (6.0 * self.h)
    }

    /// One-sided estimate of `phi'(0)` at the left wall.
    pub fn left_wall_slope(&self, level: usize) -> f64 {
        let v = &self.eigenvectors[level];
        (18.0 * v[0] - 9.0 * v[1] + 2.0 * v[2]) / (6.0 * self.h)
    }

    /// `int phi_l phi_m dx` by the trapezoid rule on the native grid.
    pub fn inner(&self, l: usize, m: usize) -> f64 {
        self.h
            * self.eigenvectors[l]
                .iter()
                .zip(&self.eigenvectors[m])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Largest `|<phi_l|phi_m> - delta_lm|` on the native grid.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for l in 0..self.levels() {
            for m in 0..=l {
                let target = if l == m { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(l, m) - target).abs());
            }
        }
        worst
    }

    fn flip(&mut self, level: usize) {
        for v in &mut self.eigenvectors[level] {
            *v = -*v;
        }
    }

    /// Writes `x, phi_0, ..., phi_lmax` rows including both wall nodes.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "x")?;
        for l in 0..self.levels() {
            write!(out, ",phi{l}")?;
        }
        writeln!(out)?;
        for i in 0..=self.n_interior() + 1 {
            write!(out, "{:.12e}", i as f64 * self.h)?;
            for l in 0..self.levels() {
                write!(out, ",{:.12e}", self.node(l, i))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Lowest `l_max + 1` eigenpairs on `n` interior points with default tolerances,
/// gauge-fixed without a reference.
pub fn eigensolve(
    model: &PotentialModel,
    r: &ControlVector,
    l_max: usize,
    n: usize,
) -> Result<SpectralSolution> {
    let cfg = SolverConfig {
        n_interior: n,
        levels: l_max + 1,
        ..SolverConfig::default()
    };
    eigensolve_with(model, r, &cfg)
}

pub fn eigensolve_with(
    model: &PotentialModel,
    r: &ControlVector,
    cfg: &SolverConfig,
) -> Result<SpectralSolution> {
    if cfg.levels < 2 {
        return Err(Error::Validation("need at least two levels (l_max >= 1)".into()));
    }
    if cfg.n_interior < cfg.levels.max(4) {
        return Err(Error::Validation(format!(
            "{} interior points cannot hold {} levels",
            cfg.n_interior, cfg.levels
        )));
    }
    let extent = model.extent(r)?;
    let n = cfg.n_interior;
    let h = extent / (n + 1) as f64;
    let h2 = h * h;

    let pot: Vec<f64> = (1..=n)
        .map(|i| model.smoothed_average(i as f64 * h, h, r))
        .collect();
    // scaled matrix h^2 H: diagonal 2 + h^2 V_i, off-diagonal -1
    let tri = Tridiagonal {
        diag: pot.iter().map(|v| 2.0 + h2 * v).collect(),
        off: -1.0,
    };
    let norm = tri.inf_norm();

    let mut eigenvalues = Vec::with_capacity(cfg.levels);
    let mut eigenvectors: Vec<Vec<f64>> = Vec::with_capacity(cfg.levels);
    let mut residuals = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        let mu0 = tri.kth_eigenvalue(level, cfg.eigen_tol * h2);
        let mut v = tri.inverse_iteration(mu0, level, &eigenvectors);
        let mut lambda = tri.rayleigh(&v) / h2;
        for _ in 0..2 {
            refine(&tri, &pot, h2, &mut v, &mut lambda);
        }
        let res = accurate_residual(&pot, h2, &v, lambda)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            / norm;
        if !(res <= cfg.residual_tol) {
            return Err(Error::Solver {
                level,
                residual: res,
            });
        }
        residuals.push(res);
        eigenvalues.push(lambda);
        let scale = 1.0 / h.sqrt();
        v.iter_mut().for_each(|x| *x *= scale);
        eigenvectors.push(v);
    }

    for (level, pair) in eigenvalues.windows(2).enumerate() {
        let gap = pair[1] - pair[0];
        if gap < cfg.degeneracy_gap {
            return Err(Error::NearDegenerate { level, gap });
        }
    }

    let top = cfg.levels - 1;
    let k = (eigenvalues[top] - model.min_value(r)).max(0.0).sqrt();
    if k > 0.0 {
        let points = PI / (k * h);
        if points < cfg.min_points_per_half_wave {
            return Err(Error::Resolution {
                level: top,
                points_per_half_wave: points,
                required: cfg.min_points_per_half_wave,
            });
        }
    }

    let sol = SpectralSolution {
        control: r.clone(),
        extent,
        h,
        eigenvalues,
        eigenvectors,
        residuals,
    };
    fix_gauge(sol, None)
}

/// Chooses the sign of every eigenfunction.
///
/// Without a reference the slope at `x = 0+` is made positive. With a
/// reference each level is aligned to have a positive zero-extended overlap
/// with the same level of the reference.
pub fn fix_gauge(
    mut current: SpectralSolution,
    reference: Option<&SpectralSolution>,
) -> Result<SpectralSolution> {
    match reference {
        None => {
            for level in 0..current.levels() {
                let v = &current.eigenvectors[level];
                let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                let first = v.iter().copied().find(|x| x.abs() > 1e-8 * max);
                if matches!(first, Some(x) if x < 0.0) {
                    current.flip(level);
                }
            }
        }
        Some(reference) => {
            if reference.levels() != current.levels() {
                return Err(Error::DimensionMismatch {
                    expected: reference.levels(),
                    found: current.levels(),
                });
            }
            for level in 0..current.levels() {
                let o = overlap(reference, level, &current, level);
                if o.abs() < 0.5 {
                    return Err(Error::GaugeTracking { level, overlap: o });
                }
                if o < 0.0 {
                    current.flip(level);
                }
            }
        }
    }
    Ok(current)
}

/// `int phi_A^(l) phi_B^(m) dx` with both functions extended by zero outside
/// their wells. Integrates the product of the piecewise-linear interpolants
/// exactly on the union of both grids.
pub fn overlap(a: &SpectralSolution, l: usize, b: &SpectralSolution, m: usize) -> f64 {
    overlap_matrix_levels(a, b, &[l], &[m])[(0, 0)]
}

/// All-level overlap matrix `O[l][m] = <phi_A^(l) | phi_B^(m)>`.
pub fn overlap_matrix(a: &SpectralSolution, b: &SpectralSolution) -> DMatrix<f64> {
    let la: Vec<usize> = (0..a.levels()).collect();
    let lb: Vec<usize> = (0..b.levels()).collect();
    overlap_matrix_levels(a, b, &la, &lb)
}

fn overlap_matrix_levels(
    a: &SpectralSolution,
    b: &SpectralSolution,
    la: &[usize],
    lb: &[usize],
) -> DMatrix<f64> {
    let end = a.extent.min(b.extent);
    let (na, nb) = (a.n_interior(), b.n_interior());
    // breakpoints of both interpolants inside [0, end]
    let mut xs: Vec<f64> = Vec::with_capacity(na + nb + 3);
    let (mut i, mut j) = (1usize, 1usize);
    xs.push(0.0);
    loop {
        let xa = if i <= na { i as f64 * a.h } else { f64::INFINITY };
        let xb = if j <= nb { j as f64 * b.h } else { f64::INFINITY };
        let x = xa.min(xb);
        if !(x < end) {
            break;
        }
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        xs.push(x);
    }
    xs.push(end);

    let mut out = DMatrix::zeros(la.len(), lb.len());
    let fa: Vec<Vec<f64>> = la
        .iter()
        .map(|&l| xs.iter().map(|&x| a.linear_value(l, x)).collect())
        .collect();
    let fb: Vec<Vec<f64>> = lb
        .iter()
        .map(|&m| xs.iter().map(|&x| b.linear_value(m, x)).collect())
        .collect();
    for (p, va) in fa.iter().enumerate() {
        for (q, vb) in fb.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..xs.len() - 1 {
                let d = xs[k + 1] - xs[k];
                let (a0, a1, b0, b1) = (va[k], va[k + 1], vb[k], vb[k + 1]);
                acc += d * (2.0 * a0 * b0 + a0 * b1 + a1 * b0 + 2.0 * a1 * b1);
            }
            out[(p, q)] = acc / 6.0;
        }
    }
    out
}

/// Solves every path sample and chains the gauge along the path.
pub fn solve_along_path(
    model: &PotentialModel,
    path: &ControlPath,
    cfg: &SolverConfig,
) -> Result<Vec<SpectralSolution>> {
    let mut out: Vec<SpectralSolution> = Vec::with_capacity(path.len());
    for s in path.samples() {
        let sol = eigensolve_with(model, &s.control, cfg)?;
        let sol = match out.last() {
            Some(prev) => fix_gauge(sol, Some(prev))?,
            None => sol,
        };
        out.push(sol);
    }
    Ok(out)
}

/// Symmetric tridiagonal matrix with a constant off-diagonal.
struct Tridiagonal {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiagonal {
    fn n(&self) -> usize {
        self.diag.len()
    }

    fn inf_norm(&self) -> f64 {
        self.diag
            .iter()
            .map(|d| d.abs() + 2.0 * self.off.abs())
            .fold(0.0, f64::max)
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let e2 = self.off * self.off;
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = 1.0;
        for (i, d) in self.diag.iter().enumerate() {
            q = if i == 0 { d - x } else { d - x - e2 / q };
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn kth_eigenvalue(&self, k: usize, tol: f64) -> f64 {
        let r = 2.0 * self.off.abs();
        let mut lo = self.diag.iter().fold(f64::INFINITY, |m, d| m.min(*d)) - r;
        let mut hi = self.diag.iter().fold(f64::NEG_INFINITY, |m, d| m.max(*d)) + r;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= tol {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.off * v[i - 1];
                }
                if i + 1 < n {
                    s += self.off * v[i + 1];
                }
                s
            })
            .collect()
    }

    fn rayleigh(&self, v: &[f64]) -> f64 {
        let tv = self.apply(v);
        dot(v, &tv) / dot(v, v)
    }

    /// Unit eigenvector for the eigenvalue near `shift`, orthogonalized
    /// against `lower`.
    fn inverse_iteration(&self, shift: f64, seed: usize, lower: &[Vec<f64>]) -> Vec<f64> {
        let n = self.n();
        // deterministic, non-symmetric start vector
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * (((i * 7919 + seed * 104_729) % 1000) as f64 / 1000.0))
            .collect();
        let lu = TridiagonalLu::factor(&self.diag, self.off, shift);
        for _ in 0..4 {
            v = lu.solve(&v);
            for u in lower {
                let scale = 1.0 / dot(u, u);
                let p = dot(u, &v) * scale;
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            let nrm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
        }
        v
    }
}

/// `h^2 (H - lambda) v` with the kinetic stencil `2 v_i - v_{i-1} - v_{i+1}`
/// evaluated in error-free arithmetic. In plain floating point that
/// difference loses about `log10(1 / (h^2 eps))` digits to cancellation,
/// which would leave eigenvectors only accurate to `eps |H| / gap`.
fn accurate_residual(pot: &[f64], h2: f64, v: &[f64], lambda: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let lo = if i > 0 { v[i - 1] } else { 0.0 };
            let hi = if i + 1 < n { v[i + 1] } else { 0.0 };
            let (s, e1) = two_sum(lo, hi);
            let (d, e2) = two_sum(2.0 * v[i], -s);
            (d + (e2 - e1)) + h2 * (pot[i] - lambda) * v[i]
        })
        .collect()
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// One Newton step on `(H - lambda) v = 0, |v| = 1` using the accurate
/// residual and the factorization of the shifted scaled matrix.
fn refine(tri: &Tridiagonal, pot: &[f64], h2: f64, v: &mut [f64], lambda: &mut f64) {
    let mut r = accurate_residual(pot, h2, v, *lambda);
    let vv = dot(v, v);
    let dmu = dot(v, &r) / vv;
    *lambda += dmu / h2;
    r.iter_mut().zip(v.iter()).for_each(|(ri, vi)| *ri -= dmu * vi);
    let lu = TridiagonalLu::factor(&tri.diag, tri.off, h2 * *lambda);
    let x = lu.solve(&r);
    let y = lu.solve(v);
    let c = dot(v, &x) / dot(v, &y);
    v.iter_mut()
        .zip(x.iter().zip(&y))
        .for_each(|(vi, (xi, yi))| *vi -= xi - c * yi);
    let nrm = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting of `T - shift I`.
struct TridiagonalLu {
    /// Upper factor rows: (u0, u1, u2) on diagonals 0, +1, +2.
    u: Vec<[f64; 3]>,
    /// Multipliers and whether row i was swapped with row i + 1.
    l: Vec<(f64, bool)>,
}

impl TridiagonalLu {
    fn factor(diag: &[f64], off: f64, shift: f64) -> Self {
        let n = diag.len();
        let tiny = f64::EPSILON * (diag.iter().fold(0.0_f64, |m, d| m.max(d.abs())) + off.abs());
        let mut u = vec![[0.0; 3]; n];
        let mut l = vec![(0.0, false); n.saturating_sub(1)];
        // current row being eliminated: (a, b, c) on diagonals 0, +1, +2
        let mut cur = [diag[0] - shift, if n > 1 { off } else { 0.0 }, 0.0];
        for i in 0..n - 1 {
            let next = [off, diag[i + 1] - shift, if i + 2 < n { off } else { 0.0 }];
            if cur[0].abs() >= next[0].abs() {
                let piv = if cur[0] == 0.0 { tiny } else { cur[0] };
                let m = next[0] / piv;
                u[i] = [piv, cur[1], cur[2]];
                l[i] = (m, false);
                cur = [next[1] - m * cur[1], next[2] - m * cur[2], 0.0];
            } else {
                let m = cur[0] / next[0];
                u[i] = [next[0], next[1], next[2]];
                l[i] = (m, true);
                cur = [cur[1] - m * next[1], cur[2] - m * next[2], 0.0];
            }
        }
        u[n - 1] = [if cur[0] == 0.0 { tiny } else { cur[0] }, 0.0, 0.0];
        Self { u, l }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n - 1 {
            let (m, swapped) = self.l[i];
            if swapped {
                y.swap(i, i + 1);
            }
            y[i + 1] -= m * y[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let [d, e, f] = self.u[i];
            let mut s = y[i];
            if i + 1 < n {
                s -= e * x[i + 1];
            }
            if i + 2 < n {
                s -= f * x[i + 2];
            }
            x[i] = s / d;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Tabulated;

    fn cv(l: f64, w: f64) -> ControlVector {
        ControlVector::new(vec![l, w]).unwrap()
    }

    fn free_box() -> PotentialModel {
        PotentialModel::Tabulated(Tabulated::new(2, vec![0.0, 1.0], vec![0.0, 0.0]).unwrap())
    }

    #[test]
    fn lu_solves_small_system() {
        let diag = vec![1.0, 3.0, -2.0, 0.5];
        let lu = TridiagonalLu::factor(&diag, -1.0, 0.7);
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let x = lu.solve(&b);
        let t = Tridiagonal {
            diag: diag.iter().map(|d| d - 0.7).collect(),
            off: -1.0,
        };
        let back = t.apply(&x);
        for (p, q) in back.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn particle_in_a_box() {
        let s = eigensolve(&free_box(), &cv(0.0, 0.0), 2, 2000).unwrap();
        for l in 0..3 {
            let exact = ((l + 1) as f64 * PI).powi(2);
            assert!(
                (s.eigenvalues[l] - exact).abs() / exact < 1e-5,
                "level {l}: {} vs {exact}",
                s.eigenvalues[l]
            );
            for &x in &[0.13, 0.5, 0.77] {
                let exact_phi = 2f64.sqrt() * ((l + 1) as f64 * PI * x).sin();
                assert!((s.value_at(l, x) - exact_phi).abs() < 1e-5);
            }
        }
        assert!(s.orthonormality_residual() < 1e-10);
    }

    #[test]
    fn structured_well_zero_l_is_the_bare_box() {
        let m = PotentialModel::structured_well();
        let s = eigensolve(&m, &cv(0.0, 0.0), 2, 2000).unwrap();
        assert!((s.eigenvalues[0] - PI * PI).abs() < 1e-4);
    }

    #[test]
    fn second_order_convergence() {
        let err = |n| {
            let s = eigensolve(&free_box(), &cv(0.0, 0.0), 1, n).unwrap();
            (s.eigenvalues[1] - 4.0 * PI * PI).abs()
        };
        let ratio = err(199) / err(399);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn third_level_sits_at_barrier_height() {
        let m = PotentialModel::structured_well();
        let s = eigensolve(&m, &cv(0.35, 0.0), 2, 2000).unwrap();
        let v0 = 9.0 * PI * PI;
        assert!((s.eigenvalues[2] - v0).abs() / v0 < 5e-3);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let m = PotentialModel::structured_well();
        let e = eigensolve(&m, &cv(0.35, 0.0), 2, 40).unwrap_err();
        assert!(matches!(e, Error::Resolution { .. }));
    }

    #[test]
    fn gauge_fixing_idempotent_and_reference_self() {
        let m = PotentialModel::structured_well();
        let s = eigensolve(&m, &cv(0.4, 0.02), 2, 800).unwrap();
        let once = fix_gauge(s.clone(), None).unwrap();
        assert_eq!(once, s);
        let twice = fix_gauge(once.clone(), None).unwrap();
        assert_eq!(twice, once);
        let selfref = fix_gauge(s.clone(), Some(&s)).unwrap();
        assert_eq!(selfref, s);
    }

    #[test]
    fn gauge_follows_reference() {
        let m = PotentialModel::structured_well();
        let a = eigensolve(&m, &cv(0.35, 0.0), 2, 2000).unwrap();
        let mut b = eigensolve(&m, &cv(0.3501, 0.0), 2, 2000).unwrap();
        b.flip(1);
        let b = fix_gauge(b, Some(&a)).unwrap();
        for l in 0..3 {
            assert!(overlap(&a, l, &b, l) > 0.999);
        }
    }

    #[test]
    fn gauge_tracking_failure_is_reported() {
        let m = PotentialModel::structured_well();
        let a = eigensolve(&m, &cv(0.3, 0.0), 2, 800).unwrap();
        let mut b = a.clone();
        b.eigenvectors.swap(0, 1);
        assert!(matches!(
            fix_gauge(b, Some(&a)),
            Err(Error::GaugeTracking { level: 0, .. })
        ));
    }

    #[test]
    fn self_overlap_is_identity() {
        let m = PotentialModel::structured_well();
        let s = eigensolve(&m, &cv(0.45, 0.03), 2, 2000).unwrap();
        let o = overlap_matrix(&s, &s);
        for l in 0..3 {
            for k in 0..3 {
                let target = if l == k { 1.0 } else { 0.0 };
                // exact integral of the interpolant differs from the grid
                // inner product at O(h^2 eps)
                assert!((o[(l, k)] - target).abs() < 1e-4, "{l}{k}: {}", o[(l, k)]);
            }
        }
    }

    #[test]
    fn wall_slopes_of_the_box() {
        let s = eigensolve(&free_box(), &cv(0.0, 0.0), 1, 2000).unwrap();
        // phi_1 = sqrt2 sin(2 pi x): slope 2 sqrt2 pi at both walls
        let exact = 2.0 * 2f64.sqrt() * PI;
        assert!((s.left_wall_slope(1) - exact).abs() / exact < 1e-5);
        assert!((s.right_wall_slope(1) - exact).abs() / exact < 1e-5);
        assert!((s.right_wall_slope(0) + exact / 2.0).abs() / exact < 1e-5);
    }

    #[test]
    fn csv_dump_has_wall_rows() {
        let s = eigensolve(&free_box(), &cv(0.0, 0.0), 1, 100).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 102);
        assert!(text.starts_with("x,phi0,phi1\n"));
    }
}
