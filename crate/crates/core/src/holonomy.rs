//! Holonomies generated by a connection field.
//!
//! A path-ordered product `U = prod_k exp(-G_k)` (later segments on the left)
//! with midpoint generators `G_k = K(R_mid) . dR_k`, the abelian phase of a
//! two-level field as a line or a surface integral, the pointwise curvature
//! tensor, and composition of holonomies.
//!
//! Conventions: `K = i lambda sigma_2 = [[0, lambda], [-lambda, 0]]`, so a
//! commuting two-level field gives `exp(-i alpha sigma_2)`, i.e. the rotation
//! `[[cos a, -sin a], [sin a, cos a]]` with `alpha = int lambda . dR`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::connection::{connection_hf, ConnectionField};
use crate::error::{Error, Result};
use crate::potential::{ControlVector, PotentialModel, Rectangle};
use crate::spectrum::{eigensolve_with, fix_gauge, SolverConfig, SpectralSolution};

/// Largest admissible Frobenius norm of one segment generator.
pub const MAX_SEGMENT_NORM: f64 = 0.1;

/// Relative size below which generator entries outside one plane count as zero.
pub const PLANE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HolonomyMethod {
    OrderedExponential,
    AbelianLineIntegral,
    AbelianStokes,
    /// Built directly from a rotation angle.
    Embedded,
    Composed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    pub y0: f64,
    pub y_end: f64,
    pub samples: usize,
    pub closed: bool,
}

/// A holonomy `U` with its rotation angle when `U` is a single plane rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Holonomy {
    pub u: DMatrix<Complex64>,
    /// Angle `a` such that the `plane` block of `U` is
    /// `[[cos a, -sin a], [sin a, cos a]]` and `U` is the identity elsewhere.
    pub alpha: Option<f64>,
    pub plane: Option<(usize, usize)>,
    pub method: HolonomyMethod,
    pub path: Option<PathMetadata>,
}

impl Holonomy {
    pub fn identity(dim: usize) -> Self {
        Self {
            u: DMatrix::identity(dim, dim),
            alpha: None,
            plane: None,
            method: HolonomyMethod::Embedded,
            path: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `max |U^dagger U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        let p = self.u.adjoint() * &self.u;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Row-major `[re, im]` pairs.
    pub fn rows(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| [self.u[(i, j)].re, self.u[(i, j)].im]).collect())
            .collect()
    }

    /// `C_out = U C_in`.
    pub fn apply(&self, c: &[Complex64]) -> Result<Vec<Complex64>> {
        if c.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: c.len(),
            });
        }
        Ok((0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.u[(i, j)] * c[j]).sum())
            .collect())
    }
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn metadata(field: &ConnectionField, closed: bool) -> PathMetadata {
    let ys = field.ys();
    PathMetadata {
        y0: ys[0],
        y_end: *ys.last().unwrap(),
        samples: ys.len(),
        closed,
    }
}

fn checked_generators(field: &ConnectionField) -> Result<Vec<DMatrix<f64>>> {
    (0..field.len().saturating_sub(1))
        .map(|k| {
            let g = field.segment_generator(k);
            let norm = g.norm();
            if norm > MAX_SEGMENT_NORM {
                Err(Error::SubdivisionRequired {
                    segment: k,
                    norm,
                    bound: MAX_SEGMENT_NORM,
                })
            } else {
                Ok(g)
            }
        })
        .collect()
}

/// The plane `(p, q)`, `p < q`, holding every nonzero entry of all `gens`,
/// if there is one. An all-zero sequence maps to `(0, 1)`.
fn common_plane(gens: &[DMatrix<f64>]) -> Option<(usize, usize)> {
    let n = gens.first().map_or(0, |g| g.nrows());
    if n < 2 {
        return None;
    }
    let scale = gens.iter().map(max_abs).fold(0.0, f64::max);
    if scale == 0.0 {
        return Some((0, 1));
    }
    let (mut p, mut q, mut big) = (0, 1, 0.0);
    for g in gens {
        for i in 0..n {
            for j in i + 1..n {
                if g[(i, j)].abs() > big {
                    (p, q, big) = (i, j, g[(i, j)].abs());
                }
            }
        }
    }
    let confined = gens.iter().all(|g| {
        (0..n).all(|i| {
            (i + 1..n).all(|j| (i, j) == (p, q) || g[(i, j)].abs() <= PLANE_TOL * scale)
        })
    });
    confined.then_some((p, q))
}

/// Path-ordered exponential of a connection field.
///
/// Errors with [`Error::SubdivisionRequired`] when a segment generator has
/// Frobenius norm above [`MAX_SEGMENT_NORM`]. `alpha` is filled when all
/// generators live in one plane (hence commute).
pub fn ordered_exponential(field: &ConnectionField, closed: bool) -> Result<Holonomy> {
    let gens = checked_generators(field)?;
    let n = field.levels();
    let mut u = DMatrix::<f64>::identity(n, n);
    for g in &gens {
        u = (-g).exp() * u;
    }
    let plane = common_plane(&gens);
    let alpha = plane.map(|(p, q)| gens.iter().map(|g| g[(p, q)]).sum());
    Ok(Holonomy {
        u: complexify(&u),
        alpha,
        plane,
        method: HolonomyMethod::OrderedExponential,
        path: Some(metadata(field, closed)),
    })
}

/// `U_{Y0 -> y_k}` at every sample of the field (identity first).
pub fn ordered_exponential_trajectory(field: &ConnectionField) -> Result<Vec<DMatrix<f64>>> {
    let gens = checked_generators(field)?;
    let n = field.levels();
    let mut out = Vec::with_capacity(field.len());
    let mut u = DMatrix::<f64>::identity(n, n);
    out.push(u.clone());
    for g in &gens {
        u = (-g).exp() * u;
        out.push(u.clone());
    }
    Ok(out)
}

/// Result of an abelian line integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinePhase {
    pub alpha: f64,
    /// `false` for open paths: the value then depends on the endpoints and
    /// the gauge, not only on the geometry.
    pub geometric: bool,
}

/// `alpha = sum_k lambda(R_mid) . dR_k` over the `(0, 1)` entry, with the
/// midpoint value taken as the mean of the segment endpoints.
pub fn abelian_phase_line(field: &ConnectionField, closed: bool) -> Result<LinePhase> {
    if field.levels() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: field.levels(),
        });
    }
    let alpha = (0..field.len().saturating_sub(1))
        .map(|k| field.segment_generator(k)[(0, 1)])
        .sum();
    Ok(LinePhase {
        alpha,
        geometric: closed,
    })
}

/// The abelian line phase packaged as a two-level holonomy.
pub fn abelian_holonomy(field: &ConnectionField, closed: bool) -> Result<Holonomy> {
    let phase = abelian_phase_line(field, closed)?;
    let mut h = rotation(phase.alpha, (0, 1), 2)?;
    h.method = HolonomyMethod::AbelianLineIntegral;
    h.path = Some(metadata(field, closed));
    Ok(h)
}

/// `lambda = ([K^(0)]_01, [K^(1)]_01, ...)` at one control point, using a
/// freshly solved spectrum in the reference-free gauge.
pub fn lambda_at(model: &PotentialModel, r: &ControlVector, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let s = eigensolve_with(model, r, cfg)?;
    (0..r.dim())
        .map(|dir| Ok(connection_hf(model, r, &s, dir)?[(0, 1)]))
        .collect()
}

/// Two-component `lambda` sampled on a tensor grid `ls x ws`.
///
/// Every node carries its own reference-free gauge, which is smooth in `R`
/// for Dirichlet eigenfunctions (the wall slope never vanishes), so nodes can
/// be computed independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub ls: Vec<f64>,
    pub ws: Vec<f64>,
    /// `values[i * ws.len() + j] = lambda(ls[i], ws[j])`.
    pub values: Vec<[f64; 2]>,
}

impl LambdaGrid {
    pub fn new(ls: Vec<f64>, ws: Vec<f64>, values: Vec<[f64; 2]>) -> Result<Self> {
        for axis in [&ls, &ws] {
            if axis.len() < 2 {
                return Err(Error::Validation("a grid axis needs at least 2 nodes".into()));
            }
            if axis.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::Validation("grid axes must be strictly increasing".into()));
            }
        }
        if values.len() != ls.len() * ws.len() {
            return Err(Error::DimensionMismatch {
                expected: ls.len() * ws.len(),
                found: values.len(),
            });
        }
        Ok(Self { ls, ws, values })
    }

    /// Solves every node in turn.
    pub fn sample(
        model: &PotentialModel,
        ls: Vec<f64>,
        ws: Vec<f64>,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(ls.len() * ws.len());
        for &l in &ls {
            for &w in &ws {
                let lam = lambda_at(model, &ControlVector::new(vec![l, w])?, cfg)?;
                values.push([lam[0], lam[1]]);
            }
        }
        Self::new(ls, ws, values)
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        self.values[i * self.ws.len() + j]
    }

    /// `d lambda_w / dL - d lambda_L / dw` at every node: central differences
    /// inside, second-order one-sided ones on the border.
    pub fn curl(&self) -> Vec<f64> {
        let (nl, nw) = (self.ls.len(), self.ws.len());
        let mut out = Vec::with_capacity(nl * nw);
        for i in 0..nl {
            for j in 0..nw {
                let d_l = derivative(&self.ls, i, |k| self.get(k, j)[1]);
                let d_w = derivative(&self.ws, j, |k| self.get(i, k)[0]);
                out.push(d_l - d_w);
            }
        }
        out
    }
}

/// Second-order derivative at node `i` of a possibly non-uniform axis.
fn derivative(xs: &[f64], i: usize, f: impl Fn(usize) -> f64) -> f64 {
    let n = xs.len();
    if n == 2 {
        return (f(1) - f(0)) / (xs[1] - xs[0]);
    }
    let (a, b, c) = if i == 0 {
        (0, 1, 2)
    } else if i == n - 1 {
        (n - 3, n - 2, n - 1)
    } else {
        (i - 1, i, i + 1)
    };
    // Derivative of the quadratic through three nodes, evaluated at xs[i].
    let x = xs[i];
    let (xa, xb, xc) = (xs[a], xs[b], xs[c]);
    f(a) * (2.0 * x - xb - xc) / ((xa - xb) * (xa - xc))
        + f(b) * (2.0 * x - xa - xc) / ((xb - xa) * (xb - xc))
        + f(c) * (2.0 * x - xa - xb) / ((xc - xa) * (xc - xb))
}

fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let k = match xs.iter().position(|&v| v > x) {
        Some(0) => 0,
        Some(k) => k - 1,
        None => xs.len() - 2,
    }
    .min(xs.len() - 2);
    (k, (x - xs[k]) / (xs[k + 1] - xs[k]))
}

/// Abelian phase of a rectangle traversal as the surface integral of the
/// curl, signed by the traversal orientation.
///
/// The curl is interpolated bilinearly between grid nodes and integrated by
/// the trapezoid rule on the grid nodes inside the rectangle plus its edges.
pub fn abelian_phase_stokes(grid: &LambdaGrid, rect: &Rectangle) -> Result<f64> {
    let (l0, l1) = (rect.l_in.min(rect.l_fin), rect.l_in.max(rect.l_fin));
    let (w0, w1) = (rect.w_in.min(rect.w_fin), rect.w_in.max(rect.w_fin));
    let tol = 1e-12;
    let inside = |lo: f64, hi: f64, axis: &[f64]| {
        lo >= axis[0] - tol && hi <= axis[axis.len() - 1] + tol
    };
    if !inside(l0, l1, &grid.ls) {
        let x = if l0 < grid.ls[0] { l0 } else { l1 };
        return Err(Error::Domain {
            x,
            extent: *grid.ls.last().unwrap(),
        });
    }
    if !inside(w0, w1, &grid.ws) {
        let x = if w0 < grid.ws[0] { w0 } else { w1 };
        return Err(Error::Domain {
            x,
            extent: *grid.ws.last().unwrap(),
        });
    }
    let orientation = rect.orientation();
    if orientation == 0.0 {
        return Ok(0.0);
    }
    let curl = grid.curl();
    let nw = grid.ws.len();
    let at = |l: f64, w: f64| {
        let (i, s) = bracket(&grid.ls, l);
        let (j, t) = bracket(&grid.ws, w);
        let c = |a: usize, b: usize| curl[a * nw + b];
        (1.0 - s) * ((1.0 - t) * c(i, j) + t * c(i, j + 1))
            + s * ((1.0 - t) * c(i + 1, j) + t * c(i + 1, j + 1))
    };
    let nodes = |lo: f64, hi: f64, axis: &[f64]| {
        let mut v = vec![lo];
        v.extend(axis.iter().copied().filter(|&x| x > lo + tol && x < hi - tol));
        v.push(hi);
        v
    };
    let lx = nodes(l0, l1, &grid.ls);
    let wx = nodes(w0, w1, &grid.ws);
    let weights = |xs: &[f64]| -> Vec<f64> {
        (0..xs.len())
            .map(|k| {
                let left = if k > 0 { xs[k] - xs[k - 1] } else { 0.0 };
                let right = if k + 1 < xs.len() { xs[k + 1] - xs[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    };
    let (wl, ww) = (weights(&lx), weights(&wx));
    let mut total = 0.0;
    for (a, &l) in lx.iter().enumerate() {
        for (b, &w) in wx.iter().enumerate() {
            total += wl[a] * ww[b] * at(l, w);
        }
    }
    Ok(orientation * total)
}

/// Curvature `F_ij = d_i K_j - d_j K_i + [K_i, K_j]` at one control point.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureSample {
    pub control: ControlVector,
    /// `(i, j, F_ij)` for every `i < j`.
    pub components: Vec<(usize, usize, DMatrix<f64>)>,
}

impl CurvatureSample {
    /// `F_ij`, with `F_ji = -F_ij` and `F_ii = 0`.
    pub fn get(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        if i == j {
            let n = self.components.first()?.2.nrows();
            return Some(DMatrix::zeros(n, n));
        }
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        self.components
            .iter()
            .find(|(p, q, _)| (*p, *q) == (a, b))
            .map(|(_, _, f)| f * sign)
    }
}

/// Pointwise curvature from Hellmann-Feynman connections at `r` and at
/// `r +- step e_i`, with neighbouring spectra gauge-aligned to `r`.
pub fn curvature(
    model: &PotentialModel,
    r: &ControlVector,
    step: f64,
    cfg: &SolverConfig,
) -> Result<CurvatureSample> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Validation(format!("curvature step {step} must be positive")));
    }
    let dim = r.dim();
    let center = eigensolve_with(model, r, cfg)?;
    let k_all = |s: &SpectralSolution| -> Result<Vec<DMatrix<f64>>> {
        (0..dim).map(|d| connection_hf(model, &s.control, s, d)).collect()
    };
    let k0 = k_all(&center)?;
    let shifted = |dir: usize, h: f64| -> Result<Vec<DMatrix<f64>>> {
        let rs = r.displaced(dir, h)?;
        model.validate_control(&rs)?;
        k_all(&fix_gauge(eigensolve_with(model, &rs, cfg)?, Some(&center))?)
    };
    // dk[i][j] = d_i K_j
    let mut dk = Vec::with_capacity(dim);
    for i in 0..dim {
        let (plus, minus, width) = match shifted(i, -step) {
            Ok(m) => (shifted(i, step)?, m, 2.0 * step),
            Err(_) => (shifted(i, step)?, k0.clone(), step),
        };
        dk.push(
            plus.iter()
                .zip(&minus)
                .map(|(p, m)| (p - m) / width)
                .collect::<Vec<_>>(),
        );
    }
    let mut components = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let f = &dk[i][j] - &dk[j][i] + &k0[i] * &k0[j] - &k0[j] * &k0[i];
            components.push((i, j, f));
        }
    }
    Ok(CurvatureSample {
        control: r.clone(),
        components,
    })
}

/// `h1` applied after `h2`: `U = U1 U2`.
///
/// The angle survives only when both factors rotate the same plane.
pub fn compose(h1: &Holonomy, h2: &Holonomy) -> Result<Holonomy> {
    if h1.dim() != h2.dim() {
        return Err(Error::DimensionMismatch {
            expected: h1.dim(),
            found: h2.dim(),
        });
    }
    let (alpha, plane) = match (h1.alpha, h1.plane, h2.alpha, h2.plane) {
        (Some(a), Some(p), Some(b), Some(q)) if p == q => (Some(a + b), Some(p)),
        _ => (None, None),
    };
    Ok(Holonomy {
        u: &h1.u * &h2.u,
        alpha,
        plane,
        method: HolonomyMethod::Composed,
        path: None,
    })
}

/// Identity with the `(l, m)` block set to the rotation `[[cos a, -sin a], [sin a, cos a]]`.
fn rotation(a: f64, (l, m): (usize, usize), dim: usize) -> Result<Holonomy> {
    if !(l < m) {
        return Err(Error::Validation(format!("levels ({l}, {m}) must satisfy l < m")));
    }
    if m >= dim {
        return Err(Error::IndexOutOfRange { index: m, dim });
    }
    let mut u = DMatrix::<f64>::identity(dim, dim);
    let (s, c) = a.sin_cos();
    u[(l, l)] = c;
    u[(l, m)] = -s;
    u[(m, l)] = s;
    u[(m, m)] = c;
    Ok(Holonomy {
        u: complexify(&u),
        alpha: Some(a),
        plane: Some((l, m)),
        method: HolonomyMethod::Embedded,
        path: None,
    })
}

/// `exp(i alpha sigma_2)` acting on levels `(l, m)` of a `dim`-level space,
/// i.e. the block `[[cos alpha, sin alpha], [-sin alpha, cos alpha]]`.
///
/// The stored angle follows the [`Holonomy::alpha`] convention and is
/// therefore `-alpha`.
pub fn embed_two_level(alpha: f64, levels: (usize, usize), dim: usize) -> Result<Holonomy> {
    rotation(-alpha, levels, dim)
}
