//! Berry connection `[K^(i)]_{lm} = <phi_l | d/dR_i phi_m>` over control space.
//!
//! For piecewise-constant families `dH/dR` is concentrated on the moving
//! discontinuities: a step edge contributes `(V_left - V_right) dx/dR` times
//! the product of the eigenfunctions at the edge, and a moving hard wall
//! contributes `-dD/dR phi_l'(D) phi_m'(D)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{bspline, ControlPath, ControlVector, PotentialModel};
use crate::spectrum::{eigensolve_with, fix_gauge, SolverConfig, SpectralSolution};

pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_TWO_LEVEL_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionMethod {
    HellmannFeynman,
    FiniteDifference,
    /// Step-edge term only, without the moving-wall contribution.
    AnalyticStructuredWell,
}

/// Connection components at one control point, one matrix per direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionSample {
    pub control: ControlVector,
    components: Vec<DMatrix<f64>>,
}

impl ConnectionSample {
    /// Antisymmetrizes every component and zeroes its diagonal.
    pub fn new(control: ControlVector, components: Vec<DMatrix<f64>>) -> Result<Self> {
        if components.len() != control.dim() {
            return Err(Error::DimensionMismatch {
                expected: control.dim(),
                found: components.len(),
            });
        }
        let n = components.first().map_or(0, |m| m.nrows());
        let mut out = Vec::with_capacity(components.len());
        for m in components {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: m.nrows().max(m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation("non-finite connection entry".into()));
            }
            out.push(antisymmetrize(&m));
        }
        Ok(Self {
            control,
            components: out,
        })
    }

    pub fn components(&self) -> &[DMatrix<f64>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &DMatrix<f64> {
        &self.components[i]
    }

    pub fn levels(&self) -> usize {
        self.components.first().map_or(0, |m| m.nrows())
    }

    /// `sum_i K^(i) v_i`.
    pub fn contract(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.levels();
        self.components
            .iter()
            .zip(v)
            .fold(DMatrix::zeros(n, n), |acc, (m, c)| acc + m * *c)
    }

    /// Keeps the leading `levels x levels` block.
    pub fn truncated(&self, levels: usize) -> Self {
        Self {
            control: self.control.clone(),
            components: self
                .components
                .iter()
                .map(|m| m.view((0, 0), (levels, levels)).into_owned())
                .collect(),
        }
    }
}

/// `(M - M^T) / 2` with an exactly zero diagonal.
pub fn antisymmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = (m - m.transpose()) * 0.5;
    for i in 0..a.nrows() {
        a[(i, i)] = 0.0;
    }
    a
}

/// Connection samples aligned one-to-one with the samples of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionField {
    ys: Vec<f64>,
    samples: Vec<ConnectionSample>,
    pub method: ConnectionMethod,
}

impl ConnectionField {
    pub fn from_samples(
        path: &ControlPath,
        samples: Vec<ConnectionSample>,
        method: ConnectionMethod,
    ) -> Result<Self> {
        if samples.len() != path.len() {
            return Err(Error::DimensionMismatch {
                expected: path.len(),
                found: samples.len(),
            });
        }
        let levels = samples[0].levels();
        if let Some(bad) = samples.iter().find(|s| s.levels() != levels) {
            return Err(Error::DimensionMismatch {
                expected: levels,
                found: bad.levels(),
            });
        }
        Ok(Self {
            ys: path.ys(),
            samples,
            method,
        })
    }

    pub fn hellmann_feynman(
        model: &PotentialModel,
        path: &ControlPath,
        spectra: &[SpectralSolution],
    ) -> Result<Self> {
        Self::per_sample(path, spectra, ConnectionMethod::HellmannFeynman, |s| {
            (0..model.n_controls())
                .map(|i| connection_hf(model, &s.control, s, i))
                .collect()
        })
    }

    pub fn analytic_structured_well(
        model: &PotentialModel,
        path: &ControlPath,
        spectra: &[SpectralSolution],
    ) -> Result<Self> {
        Self::per_sample(
            path,
            spectra,
            ConnectionMethod::AnalyticStructuredWell,
            |s| structured_well_step_connection(model, s),
        )
    }

    /// Overlap finite differences around every (gauge-chained) path spectrum.
    pub fn finite_difference(
        model: &PotentialModel,
        path: &ControlPath,
        spectra: &[SpectralSolution],
        delta: f64,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        Self::per_sample(path, spectra, ConnectionMethod::FiniteDifference, |s| {
            connection_fd(model, &s.control, delta, cfg, Some(s))
        })
    }

    fn per_sample(
        path: &ControlPath,
        spectra: &[SpectralSolution],
        method: ConnectionMethod,
        f: impl Fn(&SpectralSolution) -> Result<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        if spectra.len() != path.len() {
            return Err(Error::DimensionMismatch {
                expected: path.len(),
                found: spectra.len(),
            });
        }
        let samples = spectra
            .iter()
            .map(|s| ConnectionSample::new(s.control.clone(), f(s)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(path, samples, method)
    }

    pub fn samples(&self) -> &[ConnectionSample] {
        &self.samples
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.samples[0].levels()
    }

    pub fn truncated(&self, levels: usize) -> Self {
        Self {
            ys: self.ys.clone(),
            samples: self.samples.iter().map(|s| s.truncated(levels)).collect(),
            method: self.method,
        }
    }

    /// Control displacement `R_{k+1} - R_k`.
    pub fn segment_delta(&self, k: usize) -> Vec<f64> {
        let (a, b) = (&self.samples[k].control, &self.samples[k + 1].control);
        a.components()
            .iter()
            .zip(b.components())
            .map(|(x, y)| y - x)
            .collect()
    }

    /// Midpoint generator `K(R_mid) . dR` of segment `k`, with the midpoint
    /// connection taken as the mean of the two end samples.
    pub fn segment_generator(&self, k: usize) -> DMatrix<f64> {
        let dr = self.segment_delta(k);
        (self.samples[k].contract(&dr) + self.samples[k + 1].contract(&dr)) * 0.5
    }

    /// `K_y = K(R_y) . dR/dy` on segment `k` at fraction `t` in `[0, 1]`.
    pub fn k_y(&self, k: usize, t: f64) -> DMatrix<f64> {
        let dr = self.segment_delta(k);
        let dy = self.ys[k + 1] - self.ys[k];
        let a = self.samples[k].contract(&dr);
        let b = self.samples[k + 1].contract(&dr);
        (a * (1.0 - t) + b * t) / dy
    }
}

/// Hellmann-Feynman connection component along control direction `dir`.
///
/// Differentiates the discretized operator exactly. In the scaled coordinate
/// `xi = x / D` the grid is fixed, so `<psi_l|d psi_m>` is
/// `u_l^T (dA/dR) u_m / (eps_m - eps_l)`; the dilation `x -> x D(R')/D(R)`
/// then contributes `-(D'/D) <phi_l| x d/dx |phi_m>`. Step edges enter
/// `dA/dR` through the hat-weighted grid potential.
pub fn connection_hf(
    model: &PotentialModel,
    r: &ControlVector,
    spectral: &SpectralSolution,
    dir: usize,
) -> Result<DMatrix<f64>> {
    model.boundary_motion(r, dir)?;
    let n = spectral.levels();
    let Some(pw) = model.as_piecewise() else {
        return Ok(DMatrix::zeros(n, n));
    };
    let (d, h, np) = (spectral.extent, spectral.h, spectral.n_interior());
    let dil_rate = pw.extent.velocity(dir) / d;
    let edges: Vec<(f64, f64, f64)> = pw
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let b = e.position(r);
            (b, pw.values[k] - pw.values[k + 1], e.velocity(dir) - b * dil_rate)
        })
        .collect();
    let dv: Vec<f64> = (1..=np)
        .map(|i| {
            let x = i as f64 * h;
            edges
                .iter()
                .map(|&(b, jump, rate)| jump * bspline((b - x) / h) * rate / h)
                .sum()
        })
        .collect();
    let c = &spectral.eigenvectors;
    let at = |m: usize, i: isize| -> f64 {
        if i < 0 || i as usize >= np {
            0.0
        } else {
            c[m][i as usize]
        }
    };
    let mut dh = DMatrix::zeros(n, n);
    let mut dil = DMatrix::zeros(n, n);
    for m in 0..n {
        for i in 0..np {
            let ii = i as isize;
            let lap = 2.0 * c[m][i] - at(m, ii - 1) - at(m, ii + 1);
            let dac = -2.0 * dil_rate * lap / (h * h) + dv[i] * c[m][i];
            let grad = 0.5 * (at(m, ii + 1) - at(m, ii - 1));
            let x = (i + 1) as f64 * h;
            for l in 0..n {
                dh[(l, m)] += h * c[l][i] * dac;
                dil[(l, m)] += c[l][i] * x * grad;
            }
        }
    }
    let k = divide_by_gaps(&dh, &spectral.eigenvalues)?;
    Ok(k - antisymmetrize(&dil) * dil_rate)
}

/// Hellmann-Feynman connection from the continuum boundary terms: each step
/// edge contributes `(V_left - V_right) dx/dR phi_l phi_m` at the edge, with
/// eigenfunctions quadratically interpolated from the three nearest nodes,
/// and a moving right wall `-dD/dR phi_l'(D) phi_m'(D)`.
///
/// Second-order in `h`; where the two contributions nearly cancel (small
/// tunnelling gaps) [`connection_hf`] is much more accurate at equal `N`.
pub fn connection_hf_boundary(
    model: &PotentialModel,
    r: &ControlVector,
    spectral: &SpectralSolution,
    dir: usize,
) -> Result<DMatrix<f64>> {
    let motion = model.boundary_motion(r, dir)?;
    let n = spectral.levels();
    let mut m = DMatrix::zeros(n, n);
    for &(x, weight) in &motion.steps {
        let phi: Vec<f64> = (0..n).map(|l| spectral.value_at(l, x)).collect();
        for l in 0..n {
            for k in 0..n {
                m[(l, k)] += weight * phi[l] * phi[k];
            }
        }
    }
    if motion.wall_velocity != 0.0 {
        let slope: Vec<f64> = (0..n).map(|l| spectral.right_wall_slope(l)).collect();
        for l in 0..n {
            for k in 0..n {
                m[(l, k)] -= motion.wall_velocity * slope[l] * slope[k];
            }
        }
    }
    divide_by_gaps(&m, &spectral.eigenvalues)
}

/// Step-edge part of the structured-well connection alone: the moving wall
/// is regularized away, which leaves no `w` component.
pub fn structured_well_step_connection(
    model: &PotentialModel,
    spectral: &SpectralSolution,
) -> Result<Vec<DMatrix<f64>>> {
    let PotentialModel::StructuredWell(well) = model else {
        return Err(Error::Validation(
            "analytic connection exists only for the structured well".into(),
        ));
    };
    let n = spectral.levels();
    let edge = well.a / 2.0 + spectral.control.get(0);
    let phi: Vec<f64> = (0..n).map(|l| spectral.value_at(l, edge)).collect();
    let m = DMatrix::from_fn(n, n, |l, k| well.v0 * phi[l] * phi[k]);
    Ok(vec![
        divide_by_gaps(&m, &spectral.eigenvalues)?,
        DMatrix::zeros(n, n),
    ])
}

fn divide_by_gaps(m: &DMatrix<f64>, eps: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut k = DMatrix::zeros(n, n);
    for l in 0..n {
        for j in 0..n {
            if l == j {
                continue;
            }
            let gap = eps[j] - eps[l];
            if gap.abs() < SolverConfig::default().degeneracy_gap {
                return Err(Error::NearDegenerate { level: l.min(j), gap });
            }
            k[(l, j)] = m[(l, j)] / gap;
        }
    }
    Ok(antisymmetrize(&k))
}

/// Overlap finite-difference connection, one matrix per control direction.
///
/// Uses central differences where `R +- delta e_i` are admissible and a
/// second-order one-sided stencil at a lower bound. Neighbouring spectra are
/// gauge-aligned to `center` (solved here when `None`).
pub fn connection_fd(
    model: &PotentialModel,
    r: &ControlVector,
    delta: f64,
    cfg: &SolverConfig,
    center: Option<&SpectralSolution>,
) -> Result<Vec<DMatrix<f64>>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Validation(format!("finite-difference step {delta} must be positive")));
    }
    let owned;
    let center = match center {
        Some(c) => c,
        None => {
            owned = eigensolve_with(model, r, cfg)?;
            &owned
        }
    };
    let shifted = |dir: usize, h: f64| -> Result<Option<SpectralSolution>> {
        let rs = match r.displaced(dir, h) {
            Ok(rs) if model.validate_control(&rs).is_ok() => rs,
            _ => return Ok(None),
        };
        let s = eigensolve_with(model, &rs, cfg)?;
        fix_gauge(s, Some(center)).map(Some).map_err(|e| match e {
            Error::GaugeTracking { level, overlap } => Error::Validation(format!(
                "gauge tracking failed on level {level} (overlap {overlap:.3}); reduce the step {delta}"
            )),
            e => e,
        })
    };
    let o = |s: &SpectralSolution| crate::spectrum::overlap_matrix(center, s);
    let mut out = Vec::with_capacity(r.dim());
    for dir in 0..r.dim() {
        let k = match (shifted(dir, delta)?, shifted(dir, -delta)?) {
            (Some(p), Some(m)) => (o(&p) - o(&m)) / (2.0 * delta),
            (Some(p1), None) => {
                let p2 = shifted(dir, 2.0 * delta)?.ok_or_else(|| {
                    Error::Validation(format!("no admissible stencil along direction {dir}"))
                })?;
                (o(&p1) * 4.0 - o(center) * 3.0 - o(&p2)) / (2.0 * delta)
            }
            (None, Some(m1)) => {
                let m2 = shifted(dir, -2.0 * delta)?.ok_or_else(|| {
                    Error::Validation(format!("no admissible stencil along direction {dir}"))
                })?;
                (o(center) * 3.0 - o(&m1) * 4.0 + o(&m2)) / (2.0 * delta)
            }
            (None, None) => {
                return Err(Error::Validation(format!(
                    "no admissible stencil along direction {dir}"
                )))
            }
        };
        out.push(antisymmetrize(&k));
    }
    Ok(out)
}

/// Richardson combination `(4 K(delta/2) - K(delta)) / 3`.
pub fn connection_fd_richardson(
    model: &PotentialModel,
    r: &ControlVector,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let center = eigensolve_with(model, r, cfg)?;
    let coarse = connection_fd(model, r, delta, cfg, Some(&center))?;
    let fine = connection_fd(model, r, delta / 2.0, cfg, Some(&center))?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (f * 4.0 - c) / 3.0)
        .collect())
}

/// Two-level coupling vector along a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelLambda {
    /// `lambda_i = [K^(i)]_{01}` per sample.
    pub lambda: Vec<Vec<f64>>,
    /// `max_i max(|K^(i)_02|, |K^(i)_12|) / max_i |K^(i)_01|` per sample.
    pub leakage_ratio: Vec<f64>,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

impl TwoLevelLambda {
    pub fn max_ratio(&self) -> f64 {
        self.leakage_ratio.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn two_level_lambda(field: &ConnectionField, threshold: f64) -> Result<TwoLevelLambda> {
    if field.levels() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: field.levels(),
        });
    }
    let mut lambda = Vec::with_capacity(field.len());
    let mut leakage_ratio = Vec::with_capacity(field.len());
    let mut warnings = Vec::new();
    for (k, s) in field.samples().iter().enumerate() {
        lambda.push(s.components().iter().map(|m| m[(0, 1)]).collect());
        if s.levels() < 3 {
            leakage_ratio.push(0.0);
            continue;
        }
        let k01 = s.components().iter().fold(0.0_f64, |a, m| a.max(m[(0, 1)].abs()));
        let k2 = s
            .components()
            .iter()
            .fold(0.0_f64, |a, m| a.max(m[(0, 2)].abs()).max(m[(1, 2)].abs()));
        let ratio = if k2 == 0.0 {
            0.0
        } else if k01 == 0.0 {
            f64::INFINITY
        } else {
            k2 / k01
        };
        if ratio > threshold {
            warnings.push(format!(
                "sample {k} (y = {}): coupling to level 2 is {ratio:.3} x the 0-1 coupling",
                field.ys()[k]
            ));
        }
        leakage_ratio.push(ratio);
    }
    Ok(TwoLevelLambda {
        lambda,
        leakage_ratio,
        threshold,
        warnings,
    })
}

/// Residual of `Gamma - dK - K^2 = 0` along a straight control line.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaIdentity {
    pub gamma: DMatrix<f64>,
    pub dk: DMatrix<f64>,
    pub k_squared: DMatrix<f64>,
    /// Largest entry of the residual on the retained block.
    pub residual: f64,
}

/// Evaluates `Gamma = <phi|d^2 phi>`, `dK` and `K^2` at `r` along the unit
/// direction `u`.
///
/// `Gamma` is the central second difference of trapezoid overlaps between
/// gauge-chained spectra spaced by `step`; `K` comes from [`connection_hf`]
/// and `dK` is its central difference. The grid operator is only C^3 in the
/// step positions, so no extrapolation in `step` is attempted.
/// `K^2` is summed over all `cfg.levels` levels and the residual is reported
/// on the leading `retained` block. The direction must keep the well width
/// fixed so that all spectra share one grid.
pub fn gamma_identity(
    model: &PotentialModel,
    r: &ControlVector,
    u: &[f64],
    step: f64,
    cfg: &SolverConfig,
    retained: usize,
) -> Result<GammaIdentity> {
    if u.len() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            found: u.len(),
        });
    }
    if retained > cfg.levels {
        return Err(Error::IndexOutOfRange {
            index: retained,
            dim: cfg.levels,
        });
    }
    let d0 = model.extent(r)?;
    let points: Vec<ControlVector> = (-1..=1)
        .map(|j| {
            let c: Vec<f64> = r
                .components()
                .iter()
                .zip(u)
                .map(|(x, d)| x + j as f64 * step * d)
                .collect();
            ControlVector::new(c)
        })
        .collect::<Result<_>>()?;
    for p in &points {
        if (model.extent(p)? - d0).abs() > 1e-12 * d0 {
            return Err(Error::Validation(
                "direction changes the well width; spectra would not share a grid".into(),
            ));
        }
    }
    let center = eigensolve_with(model, &points[1], cfg)?;
    let mut spectra = Vec::with_capacity(3);
    for (j, p) in points.iter().enumerate() {
        spectra.push(if j == 1 {
            center.clone()
        } else {
            fix_gauge(eigensolve_with(model, p, cfg)?, Some(&center))?
        });
    }
    let k_along = |s: &SpectralSolution| -> Result<DMatrix<f64>> {
        let mut k = DMatrix::zeros(cfg.levels, cfg.levels);
        for (dir, c) in u.iter().enumerate() {
            if *c != 0.0 {
                k += connection_hf(model, &s.control, s, dir)? * *c;
            }
        }
        Ok(k)
    };
    let ks: Vec<DMatrix<f64>> = spectra.iter().map(k_along).collect::<Result<_>>()?;
    let n = cfg.levels;
    let inner = |a: usize, b: usize| {
        let (sa, sb) = (&spectra[a], &spectra[b]);
        DMatrix::from_fn(n, n, |l, m| {
            sa.h * sa.eigenvectors[l]
                .iter()
                .zip(&sb.eigenvectors[m])
                .map(|(x, y)| x * y)
                .sum::<f64>()
        })
    };
    let gamma = (inner(1, 2) - inner(1, 1) * 2.0 + inner(1, 0)) / (step * step);
    let dk = (&ks[2] - &ks[0]) / (2.0 * step);
    let k_squared = &ks[1] * &ks[1];
    let block = |m: &DMatrix<f64>| m.view((0, 0), (retained, retained)).into_owned();
    let res = &gamma - &dk - &k_squared;
    let residual = block(&res).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    Ok(GammaIdentity {
        gamma: block(&gamma),
        dk: block(&dk),
        k_squared: block(&k_squared),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{build_path, PathSpec, Rectangle, Tabulated};
    use crate::spectrum::{eigensolve, solve_along_path};
    use std::f64::consts::PI;

    fn cv(l: f64, w: f64) -> ControlVector {
        ControlVector::new(vec![l, w]).unwrap()
    }

    #[test]
    fn samples_are_antisymmetrized() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, 5.0, 1.0, -1.0, 4.0, 7.0]);
        let s = ConnectionSample::new(cv(0.3, 0.0), vec![m.clone(), m]).unwrap();
        for c in s.components() {
            assert_eq!(c, &(-c.transpose()));
            assert!((0..3).all(|i| c[(i, i)] == 0.0));
        }
        assert_eq!(s.component(0)[(0, 1)], 1.0);
    }

    #[test]
    fn static_family_has_no_connection() {
        let model =
            PotentialModel::Tabulated(Tabulated::new(2, vec![0.0, 0.4, 1.0], vec![0.0, 5.0, 0.0]).unwrap());
        let s = eigensolve(&model, &cv(0.2, 0.1), 2, 1000).unwrap();
        for dir in 0..2 {
            assert_eq!(connection_hf(&model, &s.control, &s, dir).unwrap(), DMatrix::zeros(3, 3));
        }
    }

    #[test]
    fn box_wall_connection_matches_closed_form() {
        // a bare box of width D: <phi_0 | d_D phi_1> = 4 / (3 D)
        let model = PotentialModel::structured_well();
        let r = cv(0.0, 0.2);
        let s = eigensolve(&model, &r, 1, 2000).unwrap();
        let exact = 4.0 / (3.0 * 1.2);
        for k in [
            connection_hf(&model, &r, &s, 1).unwrap(),
            connection_hf_boundary(&model, &r, &s, 1).unwrap(),
        ] {
            assert!((k[(0, 1)] - exact).abs() / exact < 1e-4, "{}", k[(0, 1)]);
        }
    }

    #[test]
    fn step_connection_is_the_barrier_term() {
        let model = PotentialModel::structured_well();
        let r = cv(0.35, 0.0);
        let s = eigensolve(&model, &r, 2, 2000).unwrap();
        let analytic = structured_well_step_connection(&model, &s).unwrap();
        let x = 0.5 + 0.35;
        let expected = 9.0 * PI * PI * s.value_at(0, x) * s.value_at(1, x)
            / (s.eigenvalues[1] - s.eigenvalues[0]);
        assert!((analytic[0][(0, 1)] - expected).abs() < 1e-12);
        assert_eq!(analytic[1], DMatrix::zeros(3, 3));
    }

    #[test]
    fn hf_agrees_with_overlap_differences() {
        let model = PotentialModel::structured_well();
        let cfg = SolverConfig::default();
        for (l, w) in [(0.35, 0.0), (0.6, 0.0), (0.45, 0.03)] {
            let r = cv(l, w);
            let s = eigensolve_with(&model, &r, &cfg).unwrap();
            let fd = connection_fd_richardson(&model, &r, DEFAULT_FD_STEP, &cfg).unwrap();
            for (dir, fd) in fd.iter().enumerate() {
                let hf = connection_hf(&model, &r, &s, dir).unwrap();
                let scale = hf.abs().max();
                assert!(
                    (&hf - fd).abs().max() < 1e-4 * scale,
                    "R=({l},{w}) dir {dir}\nhf {hf}\nfd {fd}"
                );
            }
        }
    }

    #[test]
    fn boundary_terms_converge_to_the_grid_derivative() {
        let model = PotentialModel::structured_well();
        let r = cv(0.45, 0.03);
        let s = eigensolve(&model, &r, 2, 2000).unwrap();
        for dir in 0..2 {
            let a = connection_hf(&model, &r, &s, dir).unwrap();
            let b = connection_hf_boundary(&model, &r, &s, dir).unwrap();
            assert!((&a - &b).abs().max() < 1e-4 * a.abs().max());
        }
    }

    #[test]
    fn lambda_along_rectangle_and_warnings() {
        let model = PotentialModel::structured_well();
        let path = build_path(&PathSpec::Rectangle {
            rect: Rectangle {
                l_in: 0.35,
                l_fin: 0.5,
                w_in: 0.0,
                w_fin: 0.02,
            },
            per_edge: 4,
        })
        .unwrap();
        let cfg = SolverConfig {
            n_interior: 600,
            ..SolverConfig::default()
        };
        let spectra = solve_along_path(&model, &path, &cfg).unwrap();
        let field = ConnectionField::analytic_structured_well(&model, &path, &spectra).unwrap();
        let lam = two_level_lambda(&field, 1e9).unwrap();
        assert_eq!(lam.lambda.len(), path.len());
        assert!(lam.lambda.iter().all(|v| v[1] == 0.0));
        assert!(lam.is_valid());
        let strict = two_level_lambda(&field, 0.0).unwrap();
        assert!(!strict.is_valid());
    }

    #[test]
    fn zero_field_gives_zero_lambda() {
        let path = build_path(&PathSpec::Explicit(vec![(0.0, vec![0.3, 0.0]), (1.0, vec![0.4, 0.0])])).unwrap();
        let samples = path
            .samples()
            .iter()
            .map(|s| ConnectionSample::new(s.control.clone(), vec![DMatrix::zeros(3, 3); 2]).unwrap())
            .collect();
        let field = ConnectionField::from_samples(&path, samples, ConnectionMethod::HellmannFeynman).unwrap();
        let lam = two_level_lambda(&field, 0.05).unwrap();
        assert!(lam.lambda.iter().flatten().all(|x| *x == 0.0));
        assert_eq!(lam.max_ratio(), 0.0);
    }

    #[test]
    fn generator_and_k_y_are_consistent() {
        let path = build_path(&PathSpec::Explicit(vec![(0.0, vec![0.3, 0.0]), (2.0, vec![0.4, 0.1])])).unwrap();
        let m = |a: f64| DMatrix::from_row_slice(2, 2, &[0.0, a, -a, 0.0]);
        let samples = vec![
            ConnectionSample::new(cv(0.3, 0.0), vec![m(1.0), m(2.0)]).unwrap(),
            ConnectionSample::new(cv(0.4, 0.1), vec![m(3.0), m(0.0)]).unwrap(),
        ];
        let field = ConnectionField::from_samples(&path, samples, ConnectionMethod::HellmannFeynman).unwrap();
        let g = field.segment_generator(0);
        // mean of K_y over the segment times dy equals the generator
        let mean = (field.k_y(0, 0.0) + field.k_y(0, 1.0)) * 0.5 * 2.0;
        assert!((g - mean).abs().max() < 1e-15);
        assert!((field.k_y(0, 0.5)[(0, 1)] - 0.15).abs() < 1e-14);
    }

    #[test]
    fn gamma_identity_rejects_width_changes() {
        let model = PotentialModel::structured_well();
        let cfg = SolverConfig {
            n_interior: 400,
            levels: 3,
            ..SolverConfig::default()
        };
        assert!(gamma_identity(&model, &cv(0.3, 0.02), &[1.0, 0.0], 1e-4, &cfg, 2).is_err());
    }
}
