//! Longitudinal propagation of mode amplitudes.
//!
//! The coupled-mode equation `(d/dy + K_y)^2 C + (eps - Omega_y) C = 0` is
//! integrated forward as the first-order system
//!
//! ```text
//! C' = P - K C
//! P' = -K P - (eps - Omega) C
//! ```
//!
//! with `P = C' + K C`, fixed-step RK4 and `K_y`, `Omega_y` interpolated
//! linearly between path samples. The entry condition `P = i sqrt(eps - Omega) C`
//! selects the right-moving branch.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::connection::ConnectionField;
use crate::error::{Error, Result};
use crate::holonomy::{ordered_exponential, ordered_exponential_trajectory, Holonomy};
use crate::potential::ControlPath;
use crate::spectrum::SpectralSolution;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Diagonal `Omega_y` along a path, with the two-level `omega_y` and `Delta_y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaSamples {
    pub ys: Vec<f64>,
    /// `levels[k][l] = eps^(l)` at sample `k`.
    pub levels: Vec<Vec<f64>>,
    /// `(eps^(0) + eps^(1)) / 2`.
    pub omega: Vec<f64>,
    /// `eps^(1) - eps^(0)`.
    pub delta: Vec<f64>,
}

impl OmegaSamples {
    /// Builds samples directly; every row must be strictly increasing.
    pub fn new(ys: Vec<f64>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if ys.len() != levels.len() {
            return Err(Error::DimensionMismatch {
                expected: ys.len(),
                found: levels.len(),
            });
        }
        let n = levels.first().map_or(0, |l| l.len());
        if n < 2 {
            return Err(Error::Validation("Omega needs at least two levels".into()));
        }
        for (k, row) in levels.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|e| !e.is_finite()) || row.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::Validation(format!(
                    "eigenvalues at sample {k} are not strictly increasing"
                )));
            }
        }
        let omega = levels.iter().map(|l| 0.5 * (l[0] + l[1])).collect();
        let delta = levels.iter().map(|l| l[1] - l[0]).collect();
        Ok(Self {
            ys,
            levels,
            omega,
            delta,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels[0].len()
    }

    pub fn max_level(&self, count: usize) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.iter().take(count))
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn assemble_omega(path: &ControlPath, spectra: &[SpectralSolution]) -> Result<OmegaSamples> {
    if spectra.len() != path.len() {
        return Err(Error::DimensionMismatch {
            expected: path.len(),
            found: spectra.len(),
        });
    }
    OmegaSamples::new(path.ys(), spectra.iter().map(|s| s.eigenvalues.clone()).collect())
}

/// Amplitudes and their `y`-derivative at one longitudinal position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub y: f64,
    pub c: Vec<Complex64>,
    pub dc: Vec<Complex64>,
    pub epsilon: f64,
}

impl ModeState {
    pub fn populations(&self) -> Vec<f64> {
        self.c.iter().map(|z| z.norm_sqr()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Substeps chosen so that `sqrt(eps) dy` stays below the given value.
    Resolution(f64),
    /// Substeps no longer than the given `dy`.
    MaxStep(f64),
}

/// Largest admissible `sqrt(eps) dy`.
pub const STEP_BOUND: f64 = 0.2;

/// Thresholds above which a validity metric raises a flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub adiabatic: f64,
    pub gap_ratio: f64,
    pub wkb: f64,
    pub step_norm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            adiabatic: 0.1,
            gap_ratio: 0.1,
            wkb: 0.01,
            step_norm: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// `(C, P)` with `P = C' + K C`.
    FirstOrder,
    /// `(C, C')` with `C'' = -2 K C' - (K' + K^2) C - (eps - Omega) C`.
    Expanded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Highest level populated at entry.
    pub ell0: usize,
    /// Highest level kept in the propagation.
    pub ell_off: usize,
    pub step: StepRule,
    pub thresholds: Thresholds,
    pub formulation: Formulation,
    /// Store the state at every path sample.
    pub record_trace: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            ell0: 1,
            ell_off: 2,
            step: StepRule::Resolution(0.1),
            thresholds: Thresholds::default(),
            formulation: Formulation::FirstOrder,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticIntegral {
    pub low: usize,
    pub high: usize,
    /// `int |[K_y]_{low, high}| dy`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub adiabatic: Vec<AdiabaticIntegral>,
    /// `max_y (eps^(ell0) - eps^(0)) / (eps^(ell_off+1) - eps^(ell0))`.
    pub gap_ratio: Option<f64>,
    /// `max_y |d eps^(l)/dy| / (2 eps^(3/2))` over `l <= ell_off`.
    pub wkb_ratio: f64,
    /// Largest Frobenius norm of a segment generator `K . dR`.
    pub max_step_norm: f64,
    pub thresholds: Thresholds,
    pub flags: Vec<String>,
}

impl ValidityReport {
    pub fn is_green(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Validity diagnostics of a propagation.
///
/// Adiabatic integrals need `field` to carry level `ell_off + 1`, the gap
/// ratio needs `omega` to carry it; missing data raises a flag.
pub fn validity_report(
    field: &ConnectionField,
    omega: &OmegaSamples,
    epsilon: f64,
    cfg: &DynamicsConfig,
) -> Result<ValidityReport> {
    check_alignment(field, omega)?;
    if cfg.ell0 > cfg.ell_off {
        return Err(Error::Validation(format!(
            "ell0 = {} exceeds ell_off = {}",
            cfg.ell0, cfg.ell_off
        )));
    }
    let th = cfg.thresholds;
    let mut flags = Vec::new();
    let segments = field.len() - 1;
    let gens: Vec<DMatrix<f64>> = (0..segments).map(|k| field.segment_generator(k)).collect();

    let mut adiabatic = Vec::new();
    if field.levels() > cfg.ell_off + 1 {
        for high in cfg.ell_off + 1..field.levels() {
            for low in 0..=cfg.ell0 {
                // |K_y| dy is speed independent: sum |K . dR| over segments.
                let value = gens.iter().map(|g| g[(low, high)].abs()).sum();
                if value > th.adiabatic {
                    flags.push(format!(
                        "adiabatic integral ({low}, {high}) = {value:.3e} exceeds {}",
                        th.adiabatic
                    ));
                }
                adiabatic.push(AdiabaticIntegral { low, high, value });
            }
        }
    } else {
        flags.push(format!(
            "connection has no level above ell_off = {}; adiabatic cutoff not checked",
            cfg.ell_off
        ));
    }

    let gap_ratio = (omega.n_levels() > cfg.ell_off + 1).then(|| {
        omega
            .levels
            .iter()
            .map(|l| (l[cfg.ell0] - l[0]) / (l[cfg.ell_off + 1] - l[cfg.ell0]))
            .fold(0.0, f64::max)
    });
    match gap_ratio {
        Some(g) if g > th.gap_ratio => flags.push(format!(
            "quasi-degeneracy ratio {g:.3e} exceeds {}",
            th.gap_ratio
        )),
        None => flags.push("spectra do not reach level ell_off + 1; gap ratio not checked".into()),
        _ => {}
    }

    let kept = (cfg.ell_off + 1).min(omega.n_levels());
    let mut slope = 0.0_f64;
    for k in 0..segments {
        let dy = omega.ys[k + 1] - omega.ys[k];
        for l in 0..kept {
            slope = slope.max(((omega.levels[k + 1][l] - omega.levels[k][l]) / dy).abs());
        }
    }
    let wkb_ratio = slope / (2.0 * epsilon.powf(1.5));
    if wkb_ratio > th.wkb {
        flags.push(format!("WKB ratio {wkb_ratio:.3e} exceeds {}", th.wkb));
    }

    let max_step_norm = gens.iter().map(|g| g.norm()).fold(0.0, f64::max);
    if max_step_norm > th.step_norm {
        flags.push(format!(
            "segment generator norm {max_step_norm:.3e} exceeds {}",
            th.step_norm
        ));
    }
    Ok(ValidityReport {
        adiabatic,
        gap_ratio,
        wkb_ratio,
        max_step_norm,
        thresholds: th,
        flags,
    })
}

fn check_alignment(field: &ConnectionField, omega: &OmegaSamples) -> Result<()> {
    if field.len() != omega.ys.len() {
        return Err(Error::DimensionMismatch {
            expected: field.len(),
            found: omega.ys.len(),
        });
    }
    if field.len() < 2 {
        return Err(Error::Validation("propagation needs at least one segment".into()));
    }
    if field
        .ys()
        .iter()
        .zip(&omega.ys)
        .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::Validation("connection and Omega sampled at different y".into()));
    }
    Ok(())
}

/// Longitudinal phase factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WkbPhase {
    /// `int sqrt(eps - omega_y) dy`.
    pub refined_phase: f64,
    /// `sqrt(eps) (Y - Y0)`.
    pub crude_phase: f64,
    pub refined: Complex64,
    pub crude: Complex64,
}

/// `W = exp(sign i int sqrt(eps - omega_y) dy)` with `omega_y` linear between
/// samples (integrated exactly), and the crude `exp(sign i sqrt(eps) (Y - Y0))`.
pub fn wkb_propagator(omega: &OmegaSamples, epsilon: f64, sign: f64) -> Result<WkbPhase> {
    let sign = if sign < 0.0 { -1.0 } else { 1.0 };
    if let Some(k) = omega.omega.iter().position(|w| epsilon - w <= 0.0) {
        return Err(Error::Evanescent {
            y: omega.ys[k],
            margin: epsilon - omega.omega[k],
        });
    }
    let refined_phase = (0..omega.ys.len() - 1)
        .map(|k| {
            sqrt_segment(
                epsilon - omega.omega[k],
                epsilon - omega.omega[k + 1],
                omega.ys[k + 1] - omega.ys[k],
            )
        })
        .sum::<f64>();
    let crude_phase = epsilon.sqrt() * (omega.ys[omega.ys.len() - 1] - omega.ys[0]);
    Ok(WkbPhase {
        refined_phase,
        crude_phase,
        refined: Complex64::from_polar(1.0, sign * refined_phase),
        crude: Complex64::from_polar(1.0, sign * crude_phase),
    })
}

/// `int_0^len sqrt(q(s)) ds` for `q` linear from `qa` to `qb`, both positive.
fn sqrt_segment(qa: f64, qb: f64, len: f64) -> f64 {
    let (u, v) = (qa.sqrt(), qb.sqrt());
    2.0 / 3.0 * len * (u * u + u * v + v * v) / (u + v)
}

/// `C_pred = phase U C0`.
pub fn predict_output(c0: &[Complex64], u: &Holonomy, phase: Complex64) -> Result<Vec<Complex64>> {
    Ok(u.apply(c0)?.into_iter().map(|z| z * phase).collect())
}

/// `|<a|b>| / (|a| |b|)`, zero when either vector vanishes.
pub fn fidelity(a: &[Complex64], b: &[Complex64]) -> f64 {
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nb = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot.norm() / (na * nb)).min(1.0)
    }
}

/// `C~_y = U_{Y0 -> y}^T C_y` at every sample (`U` is real orthogonal).
pub fn gauge_transform(states: &[Vec<Complex64>], us: &[DMatrix<f64>]) -> Result<Vec<Vec<Complex64>>> {
    if states.len() != us.len() {
        return Err(Error::DimensionMismatch {
            expected: us.len(),
            found: states.len(),
        });
    }
    states
        .iter()
        .zip(us)
        .map(|(c, u)| {
            if c.len() != u.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: u.nrows(),
                    found: c.len(),
                });
            }
            Ok((0..u.ncols())
                .map(|i| (0..u.nrows()).map(|j| c[j] * u[(j, i)]).sum())
                .collect())
        })
        .collect()
}

/// Inverse of [`gauge_transform`]: `C = U C~`.
pub fn gauge_restore(gauged: &[Vec<Complex64>], us: &[DMatrix<f64>]) -> Result<Vec<Vec<Complex64>>> {
    let transposed: Vec<DMatrix<f64>> = us.iter().map(|u| u.transpose()).collect();
    gauge_transform(gauged, &transposed)
}

/// Magnitudes of the left-moving amplitudes `|B_l|` from
/// `C = A e^{i k y} + B e^{-i k y}` with `k_l = sqrt(eps - Omega_l)`; valid
/// where the connection vanishes.
pub fn left_moving(state: &ModeState, omega_diag: &[f64]) -> Vec<f64> {
    state
        .c
        .iter()
        .zip(&state.dc)
        .zip(omega_diag)
        .map(|((c, dc), w)| {
            let k = (state.epsilon - w).sqrt();
            (I * k * c - dc).norm() / (2.0 * k)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub initial: ModeState,
    pub final_state: ModeState,
    /// `exp(i phase) U C0` on the propagated levels.
    pub predicted: Vec<Complex64>,
    /// Fidelity on levels `0..=ell0` after renormalization.
    pub fidelity: f64,
    /// Final population outside levels `0..=ell0`, relative to the total.
    pub leakage: f64,
    /// `int sqrt(eps - omega) dy`.
    pub dynamical_phase: f64,
    /// Rotation angle of the holonomy when it is a single plane rotation.
    pub alpha: Option<f64>,
    pub steps: usize,
    pub validity: ValidityReport,
    pub warnings: Vec<String>,
    /// States at every path sample when requested.
    pub trace: Vec<ModeState>,
}

/// Linear segment data in row-major `n x n` / length-`n` arrays.
struct Segment {
    ka: Vec<f64>,
    kb: Vec<f64>,
    oa: Vec<f64>,
    ob: Vec<f64>,
    dy: f64,
}

impl Segment {
    fn k_at(&self, t: f64, out: &mut [f64]) {
        for (o, (a, b)) in out.iter_mut().zip(self.ka.iter().zip(&self.kb)) {
            *o = a + t * (b - a);
        }
    }
}

fn matvec(n: usize, m: &[f64], v: &[Complex64], out: &mut [Complex64]) {
    for i in 0..n {
        let mut s = Complex64::default();
        for j in 0..n {
            s += v[j] * m[i * n + j];
        }
        out[i] = s;
    }
}

struct Rhs {
    n: usize,
    epsilon: f64,
    formulation: Formulation,
    k: Vec<f64>,
    k2: Vec<f64>,
    dk: Vec<f64>,
    tmp: Vec<Complex64>,
    tmp2: Vec<Complex64>,
}

impl Rhs {
    /// Writes `(x', z')` for the state `(x, z)` at fraction `t` of `seg`.
    fn eval(&mut self, seg: &Segment, t: f64, x: &[Complex64], z: &[Complex64], dx: &mut [Complex64], dz: &mut [Complex64]) {
        let n = self.n;
        seg.k_at(t, &mut self.k);
        let scale = 1.0 / seg.dy;
        for v in self.k.iter_mut() {
            *v *= scale;
        }
        match self.formulation {
            Formulation::FirstOrder => {
                matvec(n, &self.k, x, &mut self.tmp);
                matvec(n, &self.k, z, &mut self.tmp2);
                for i in 0..n {
                    let om = seg.oa[i] + t * (seg.ob[i] - seg.oa[i]);
                    dx[i] = z[i] - self.tmp[i];
                    dz[i] = -self.tmp2[i] - x[i] * (self.epsilon - om);
                }
            }
            Formulation::Expanded => {
                for i in 0..n {
                    for j in 0..n {
                        self.dk[i * n + j] = (seg.kb[i * n + j] - seg.ka[i * n + j]) * scale * scale;
                        self.k2[i * n + j] = (0..n).map(|l| self.k[i * n + l] * self.k[l * n + j]).sum::<f64>();
                    }
                }
                for v in 0..n * n {
                    self.k2[v] += self.dk[v];
                }
                matvec(n, &self.k, z, &mut self.tmp);
                matvec(n, &self.k2, x, &mut self.tmp2);
                for i in 0..n {
                    let om = seg.oa[i] + t * (seg.ob[i] - seg.oa[i]);
                    dx[i] = z[i];
                    dz[i] = -self.tmp[i] * 2.0 - self.tmp2[i] - x[i] * (self.epsilon - om);
                }
            }
        }
    }
}

/// Integrates the coupled-mode equation over the path of `field`.
///
/// Levels `0..=cfg.ell_off` are propagated; `field` and `omega` may carry
/// more (used by the validity report). `c0` lists the entry amplitudes of the
/// propagated levels.
pub fn integrate_coupled(
    field: &ConnectionField,
    omega: &OmegaSamples,
    epsilon: f64,
    c0: &[Complex64],
    cfg: &DynamicsConfig,
) -> Result<PropagationResult> {
    check_alignment(field, omega)?;
    let n = cfg.ell_off + 1;
    if field.levels() < n || omega.n_levels() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: field.levels().min(omega.n_levels()),
        });
    }
    if c0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c0.len(),
        });
    }
    if cfg.ell0 >= n {
        return Err(Error::IndexOutOfRange {
            index: cfg.ell0,
            dim: n,
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Validation(format!("energy {epsilon} must be positive")));
    }
    if c0.iter().all(|z| z.norm() == 0.0) || c0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Validation("initial amplitudes must be finite and not all zero".into()));
    }
    for (k, row) in omega.levels.iter().enumerate() {
        let margin = epsilon - row[n - 1];
        if margin <= 0.0 {
            return Err(Error::Evanescent {
                y: omega.ys[k],
                margin,
            });
        }
    }
    let sqrt_eps = epsilon.sqrt();
    let max_dy = match cfg.step {
        StepRule::Resolution(kdy) => {
            if !(kdy > 0.0) || kdy > STEP_BOUND {
                return Err(Error::StepSize { kdy, bound: STEP_BOUND });
            }
            kdy / sqrt_eps
        }
        StepRule::MaxStep(dy) => {
            if !(dy > 0.0) || sqrt_eps * dy > STEP_BOUND {
                return Err(Error::StepSize {
                    kdy: sqrt_eps * dy,
                    bound: STEP_BOUND,
                });
            }
            dy
        }
    };

    let mut warnings = Vec::new();
    let top = omega.max_level(n);
    if epsilon < 10.0 * top {
        warnings.push(format!(
            "energy {epsilon} is not large against the highest propagated level {top:.4}"
        ));
    }

    let local = field.truncated(n);
    let ys = field.ys();
    let flat = |m: DMatrix<f64>| -> Vec<f64> { (0..n * n).map(|v| m[(v / n, v % n)]).collect() };
    let segments: Vec<Segment> = (0..field.len() - 1)
        .map(|k| {
            let dr = local.segment_delta(k);
            Segment {
                ka: flat(local.samples()[k].contract(&dr)),
                kb: flat(local.samples()[k + 1].contract(&dr)),
                oa: omega.levels[k][..n].to_vec(),
                ob: omega.levels[k + 1][..n].to_vec(),
                dy: ys[k + 1] - ys[k],
            }
        })
        .collect();

    let mut rhs = Rhs {
        n,
        epsilon,
        formulation: cfg.formulation,
        k: vec![0.0; n * n],
        k2: vec![0.0; n * n],
        dk: vec![0.0; n * n],
        tmp: vec![Complex64::default(); n],
        tmp2: vec![Complex64::default(); n],
    };

    let kappa0: Vec<f64> = omega.levels[0][..n].iter().map(|w| (epsilon - w).sqrt()).collect();
    let mut x: Vec<Complex64> = c0.to_vec();
    let p0: Vec<Complex64> = x.iter().zip(&kappa0).map(|(c, k)| I * k * c).collect();
    // dC = P - K C at entry.
    let mut k0c = vec![Complex64::default(); n];
    {
        let mut k = vec![0.0; n * n];
        segments[0].k_at(0.0, &mut k);
        for v in k.iter_mut() {
            *v /= segments[0].dy;
        }
        matvec(n, &k, &x, &mut k0c);
    }
    let dc0: Vec<Complex64> = p0.iter().zip(&k0c).map(|(p, kc)| p - kc).collect();
    let mut z = match cfg.formulation {
        Formulation::FirstOrder => p0.clone(),
        Formulation::Expanded => dc0.clone(),
    };
    let initial = ModeState {
        y: ys[0],
        c: x.clone(),
        dc: dc0,
        epsilon,
    };
    let norm0: f64 = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();

    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(initial.clone());
    }
    let mut steps = 0usize;
    let (mut k1x, mut k1z) = (vec![Complex64::default(); n], vec![Complex64::default(); n]);
    let (mut k2x, mut k2z) = (k1x.clone(), k1z.clone());
    let (mut k3x, mut k3z) = (k1x.clone(), k1z.clone());
    let (mut k4x, mut k4z) = (k1x.clone(), k1z.clone());
    let (mut sx, mut sz) = (k1x.clone(), k1z.clone());
    let mut dc_end = vec![Complex64::default(); n];
    for (k, seg) in segments.iter().enumerate() {
        let m = (seg.dy / max_dy).ceil().max(1.0) as usize;
        let h = seg.dy / m as f64;
        let dt = 1.0 / m as f64;
        for j in 0..m {
            let t = j as f64 * dt;
            rhs.eval(seg, t, &x, &z, &mut k1x, &mut k1z);
            for i in 0..n {
                sx[i] = x[i] + k1x[i] * (0.5 * h);
                sz[i] = z[i] + k1z[i] * (0.5 * h);
            }
            rhs.eval(seg, t + 0.5 * dt, &sx, &sz, &mut k2x, &mut k2z);
            for i in 0..n {
                sx[i] = x[i] + k2x[i] * (0.5 * h);
                sz[i] = z[i] + k2z[i] * (0.5 * h);
            }
            rhs.eval(seg, t + 0.5 * dt, &sx, &sz, &mut k3x, &mut k3z);
            for i in 0..n {
                sx[i] = x[i] + k3x[i] * h;
                sz[i] = z[i] + k3z[i] * h;
            }
            rhs.eval(seg, t + dt, &sx, &sz, &mut k4x, &mut k4z);
            for i in 0..n {
                x[i] += (k1x[i] + (k2x[i] + k3x[i]) * 2.0 + k4x[i]) * (h / 6.0);
                z[i] += (k1z[i] + (k2z[i] + k3z[i]) * 2.0 + k4z[i]) * (h / 6.0);
            }
            steps += 1;
        }
        let y = ys[k + 1];
        let size: f64 = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !size.is_finite() || size > 1e6 * norm0 {
            return Err(Error::Divergence { y });
        }
        // dC at the segment end, from the right end of this segment.
        match cfg.formulation {
            Formulation::FirstOrder => {
                let mut kk = vec![0.0; n * n];
                seg.k_at(1.0, &mut kk);
                for v in kk.iter_mut() {
                    *v /= seg.dy;
                }
                matvec(n, &kk, &x, &mut k0c);
                for i in 0..n {
                    dc_end[i] = z[i] - k0c[i];
                }
            }
            Formulation::Expanded => dc_end.copy_from_slice(&z),
        }
        if cfg.record_trace {
            trace.push(ModeState {
                y,
                c: x.clone(),
                dc: dc_end.clone(),
                epsilon,
            });
        }
    }
    let final_state = ModeState {
        y: ys[ys.len() - 1],
        c: x,
        dc: dc_end,
        epsilon,
    };

    let holonomy = ordered_exponential(&local, false)?;
    let phase = wkb_propagator(omega, epsilon, 1.0)?;
    let predicted = predict_output(c0, &holonomy, phase.refined)?;
    let kept = cfg.ell0 + 1;
    let fid = fidelity(&predicted[..kept], &final_state.c[..kept]);
    let total: f64 = final_state.c.iter().map(|c| c.norm_sqr()).sum();
    let outside: f64 = final_state.c[kept..].iter().map(|c| c.norm_sqr()).sum();
    let validity = validity_report(field, omega, epsilon, cfg)?;
    Ok(PropagationResult {
        initial,
        final_state,
        predicted,
        fidelity: fid,
        leakage: outside / total,
        dynamical_phase: phase.refined_phase,
        alpha: holonomy.alpha,
        steps,
        validity,
        warnings,
        trace,
    })
}

/// Gauge frames `U_{Y0 -> y}` at every path sample for the propagated levels.
pub fn gauge_frames(field: &ConnectionField, levels: usize) -> Result<Vec<DMatrix<f64>>> {
    ordered_exponential_trajectory(&field.truncated(levels))
}

/// Largest population outside level `keep` along a sequence of states,
/// relative to the total.
pub fn mixing(states: &[Vec<Complex64>], keep: usize) -> f64 {
    states
        .iter()
        .map(|c| {
            let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
            let off: f64 = c
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != keep)
                .map(|(_, z)| z.norm_sqr())
                .sum();
            off / total
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{ConnectionMethod, ConnectionSample};
    use crate::potential::{build_path, PathSpec};
    use crate::holonomy::embed_two_level;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn line_path(n: usize, span: f64) -> ControlPath {
        build_path(&PathSpec::Polyline {
            vertices: vec![vec![0.0], vec![1.0]],
            per_edge: n,
        })
        .unwrap()
        .map_to_span(0.0, span)
        .unwrap()
    }

    fn field_on(path: &ControlPath, k: impl Fn(f64) -> DMatrix<f64>) -> ConnectionField {
        let samples = path
            .samples()
            .iter()
            .map(|s| ConnectionSample::new(s.control.clone(), vec![k(s.control.get(0))]).unwrap())
            .collect();
        ConnectionField::from_samples(path, samples, ConnectionMethod::HellmannFeynman).unwrap()
    }

    fn constant_omega(path: &ControlPath, row: &[f64]) -> OmegaSamples {
        OmegaSamples::new(path.ys(), vec![row.to_vec(); path.len()]).unwrap()
    }

    /// Smooth rotating three-level connection and spectrum along `[0, 1]`.
    fn rotating(path: &ControlPath) -> (ConnectionField, OmegaSamples) {
        let field = field_on(path, |s| {
            let a = 1.2 * (1.0 + s);
            let b = 0.3 * s;
            DMatrix::from_row_slice(3, 3, &[0.0, a, b, -a, 0.0, 0.1, -b, -0.1, 0.0])
        });
        let levels = path
            .samples()
            .iter()
            .map(|p| {
                let s = p.control.get(0);
                vec![10.0 + s, 10.5 + 2.0 * s, 40.0]
            })
            .collect();
        (field, OmegaSamples::new(path.ys(), levels).unwrap())
    }

    #[test]
    fn plane_wave_with_constant_coefficients() {
        let path = line_path(20, 5.0);
        let field = field_on(&path, |_| DMatrix::zeros(3, 3));
        let omega = constant_omega(&path, &[3.0, 5.0, 9.0]);
        let eps = 400.0;
        let c0 = vec![c(0.6, 0.1), c(-0.2, 0.5), c(0.3, -0.4)];
        let cfg = DynamicsConfig {
            record_trace: true,
            step: StepRule::Resolution(0.025),
            ..Default::default()
        };
        let r = integrate_coupled(&field, &omega, eps, &c0, &cfg).unwrap();
        for (l, (z, z0)) in r.final_state.c.iter().zip(&c0).enumerate() {
            let k = (eps - [3.0, 5.0, 9.0][l]).sqrt();
            let exact = z0 * Complex64::from_polar(1.0, k * 5.0);
            assert!((z - exact).norm() < 1e-6, "level {l}: {z} vs {exact}");
        }
        for s in &r.trace {
            for b in left_moving(s, &[3.0, 5.0, 9.0]) {
                assert!(b < 1e-8, "left-moving amplitude {b}");
            }
        }
        let g = gauge_transform(
            &r.trace.iter().map(|s| s.c.clone()).collect::<Vec<_>>(),
            &gauge_frames(&field, 3).unwrap(),
        )
        .unwrap();
        for (a, b) in g.iter().zip(&r.trace) {
            assert_eq!(a, &b.c);
        }
    }

    #[test]
    fn step_refinement_is_fourth_order() {
        let path = line_path(40, 4.0);
        let (field, omega) = rotating(&path);
        let c0 = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let run = |kdy: f64| {
            let cfg = DynamicsConfig {
                step: StepRule::Resolution(kdy),
                ..Default::default()
            };
            integrate_coupled(&field, &omega, 900.0, &c0, &cfg).unwrap().final_state.c
        };
        let (a, b, d) = (run(0.2), run(0.1), run(0.05));
        let diff = |u: &[Complex64], v: &[Complex64]| {
            u.iter().zip(v).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
        };
        let ratio = diff(&a, &b) / diff(&b, &d);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn expanded_form_agrees_with_first_order_form() {
        let path = line_path(40, 4.0);
        let (field, omega) = rotating(&path);
        let c0 = vec![c(0.8, 0.0), c(0.0, 0.6), c(0.0, 0.0)];
        let run = |formulation| {
            let cfg = DynamicsConfig {
                formulation,
                step: StepRule::Resolution(0.05),
                ..Default::default()
            };
            integrate_coupled(&field, &omega, 900.0, &c0, &cfg).unwrap()
        };
        let (a, b) = (run(Formulation::FirstOrder), run(Formulation::Expanded));
        for (x, y) in a.final_state.c.iter().zip(&b.final_state.c) {
            assert!((x - y).norm() < 1e-7, "{x} vs {y}");
        }
        for (x, y) in a.final_state.dc.iter().zip(&b.final_state.dc) {
            assert!((x - y).norm() < 1e-5 * 30.0, "{x} vs {y}");
        }
    }

    #[test]
    fn gauge_round_trip() {
        let path = line_path(40, 4.0);
        let (field, omega) = rotating(&path);
        let cfg = DynamicsConfig {
            record_trace: true,
            ..Default::default()
        };
        let r = integrate_coupled(&field, &omega, 900.0, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], &cfg)
            .unwrap();
        let states: Vec<Vec<Complex64>> = r.trace.iter().map(|s| s.c.clone()).collect();
        let frames = gauge_frames(&field, 3).unwrap();
        let g = gauge_transform(&states, &frames).unwrap();
        assert_eq!(g[0], states[0]);
        let back = gauge_restore(&g, &frames).unwrap();
        for (a, b) in back.iter().zip(&states) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fidelity_ignores_global_phases() {
        let a = vec![c(0.3, 0.2), c(-0.5, 0.1), c(0.0, 0.7)];
        let b = vec![c(0.1, 0.4), c(-0.2, 0.3), c(0.6, 0.1)];
        let f = fidelity(&a, &b);
        assert!((0.0..=1.0).contains(&f));
        for theta in [0.3, 1.7, -2.9] {
            let p = Complex64::from_polar(1.0, theta);
            let rot: Vec<Complex64> = b.iter().map(|z| z * p).collect();
            assert!((fidelity(&a, &rot) - f).abs() < 1e-14);
            assert!((fidelity(&a, &a.iter().map(|z| z * p).collect::<Vec<_>>()) - 1.0).abs() < 1e-14);
        }
        assert_eq!(fidelity(&a, &[Complex64::default(); 3]), 0.0);
    }

    #[test]
    fn gate_predictions() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let g = Complex64::from_polar(1.0, 0.7);
        // Rotation [[cos, -sin], [sin, cos]] with alpha = pi/2 sends (1, 0) to (0, 1).
        let quarter = embed_two_level(-std::f64::consts::FRAC_PI_2, (0, 1), 2).unwrap();
        let p = predict_output(&[one, zero], &quarter, g).unwrap();
        assert!((fidelity(&p, &[zero, one]) - 1.0).abs() < 1e-15);
        let id = embed_two_level(0.0, (0, 1), 2).unwrap();
        assert_eq!(predict_output(&[one, zero], &id, g).unwrap(), vec![g, zero]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let eighth = embed_two_level(-std::f64::consts::FRAC_PI_4, (0, 1), 2).unwrap();
        let p = predict_output(&[c(s, 0.0), c(s, 0.0)], &eighth, one).unwrap();
        // (a cos - b sin, b cos + a sin) at a = b = 1/sqrt 2, alpha = pi/4.
        assert!(p[0].norm() < 1e-15 && (p[1] - one).norm() < 1e-15);
        assert!(predict_output(&[one], &id, g).is_err());
    }

    #[test]
    fn wkb_phases() {
        let path = line_path(10, 3.0);
        let zero = constant_omega(&path, &[-1.0, 1.0]);
        let w = wkb_propagator(&zero, 100.0, 1.0).unwrap();
        assert!((w.refined_phase - 30.0).abs() < 1e-12);
        assert!((w.refined - Complex64::from_polar(1.0, 30.0)).norm() < 1e-12);
        assert_eq!(w.crude_phase, 30.0);
        let shifted = constant_omega(&path, &[3.0, 5.0]);
        let w = wkb_propagator(&shifted, 100.0, -1.0).unwrap();
        assert!((w.refined_phase - 96.0_f64.sqrt() * 3.0).abs() < 1e-12);
        assert!((w.refined - Complex64::from_polar(1.0, -96.0_f64.sqrt() * 3.0)).norm() < 1e-12);
        assert!((w.refined.norm() - 1.0).abs() < 1e-15);
        assert!(matches!(
            wkb_propagator(&shifted, 4.0, 1.0),
            Err(Error::Evanescent { .. })
        ));
    }

    #[test]
    fn linear_omega_phase_is_exact() {
        let path = line_path(1, 2.0);
        let om = OmegaSamples::new(path.ys(), vec![vec![0.0, 2.0], vec![6.0, 10.0]]).unwrap();
        // omega runs 1 -> 8 over y in [0, 2]: int sqrt(50 - 1 - 3.5 y) dy.
        let exact = 2.0 / 3.0 / 3.5 * (49.0_f64.powf(1.5) - 42.0_f64.powf(1.5));
        let w = wkb_propagator(&om, 50.0, 1.0).unwrap();
        assert!((w.refined_phase - exact).abs() < 1e-12);
    }

    #[test]
    fn omega_rejects_unsorted_levels() {
        assert!(OmegaSamples::new(vec![0.0], vec![vec![2.0, 1.0]]).is_err());
        assert!(OmegaSamples::new(vec![0.0, 1.0], vec![vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn step_and_energy_guards() {
        let path = line_path(40, 1.0);
        let (field, omega) = rotating(&path);
        let c0 = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let big = DynamicsConfig {
            step: StepRule::Resolution(0.3),
            ..Default::default()
        };
        assert!(matches!(
            integrate_coupled(&field, &omega, 900.0, &c0, &big),
            Err(Error::StepSize { .. })
        ));
        let fixed = DynamicsConfig {
            step: StepRule::MaxStep(0.01),
            ..Default::default()
        };
        assert!(matches!(
            integrate_coupled(&field, &omega, 900.0, &c0, &fixed),
            Err(Error::StepSize { .. })
        ));
        assert!(matches!(
            integrate_coupled(&field, &omega, 30.0, &c0, &DynamicsConfig::default()),
            Err(Error::Evanescent { .. })
        ));
        let r = integrate_coupled(&field, &omega, 100.0, &c0, &DynamicsConfig::default()).unwrap();
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn static_family_has_zero_adiabatic_integrals() {
        let path = line_path(8, 10.0);
        let field = field_on(&path, |_| DMatrix::zeros(4, 4));
        let omega = constant_omega(&path, &[1.0, 1.5, 9.0, 16.0]);
        let rep = validity_report(&field, &omega, 1e4, &DynamicsConfig::default()).unwrap();
        assert!(rep.adiabatic.iter().all(|a| a.value == 0.0));
        assert_eq!(rep.adiabatic.len(), 2);
        assert_eq!(rep.wkb_ratio, 0.0);
        assert!((rep.gap_ratio.unwrap() - 0.5 / 14.5).abs() < 1e-15);
        assert!(rep.is_green(), "{:?}", rep.flags);
    }
}
