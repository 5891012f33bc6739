//! Transverse potential families `V(x; R)` and control-space trajectories `R_y`.
//!
//! Units throughout: `hbar = 2m = 1` and lengths in units of the fixed well
//! segment `a`, so energies are the rescaled `eps = 2mE/hbar^2`.
//!
//! Every family lives on `[0, D(R)]` with hard walls at both ends. The left
//! wall is pinned at `x = 0`; the right wall may move with the controls.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Barrier height of the structured well, `9 pi^2` in units of `hbar^2/(2 m a^2)`.
pub const STRUCTURED_WELL_V0: f64 = 9.0 * PI * PI;

/// Default tolerance for declaring a path closed.
pub const CLOSURE_TOL: f64 = 1e-12;

/// A point in control space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlVector(Vec<f64>);

impl ControlVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Validation("control vector has no components".into()));
        }
        if let Some(bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(Error::Validation(format!("non-finite control component {bad}")));
        }
        Ok(Self(components))
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Copy of `self` displaced by `delta` along control direction `dir`.
    pub fn displaced(&self, dir: usize, delta: f64) -> Result<Self> {
        if dir >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: dir,
                dim: self.dim(),
            });
        }
        let mut c = self.0.clone();
        c[dir] += delta;
        Self::new(c)
    }

    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<ControlVector> for Vec<f64> {
    fn from(c: ControlVector) -> Self {
        c.0
    }
}

/// A step-edge position that depends affinely on the controls:
/// `x = offset + sum_i gains[i] * R[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineEdge {
    pub offset: f64,
    pub gains: Vec<f64>,
}

impl AffineEdge {
    pub fn fixed(offset: f64, n_controls: usize) -> Self {
        Self {
            offset,
            gains: vec![0.0; n_controls],
        }
    }

    pub fn position(&self, r: &ControlVector) -> f64 {
        self.offset
            + self
                .gains
                .iter()
                .zip(r.components())
                .map(|(g, c)| g * c)
                .sum::<f64>()
    }

    /// `d x / d R[dir]`.
    pub fn velocity(&self, dir: usize) -> f64 {
        self.gains.get(dir).copied().unwrap_or(0.0)
    }
}

/// Piecewise-constant potential inside an infinite well.
///
/// `values[k]` holds on `[edges[k-1], edges[k])` with `edges[-1] = 0` and the
/// last segment closing at the right wall `extent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub n_controls: usize,
    pub edges: Vec<AffineEdge>,
    pub values: Vec<f64>,
    pub extent: AffineEdge,
    /// Lower bounds on each control component (`None` = unbounded).
    pub lower_bounds: Vec<Option<f64>>,
}

impl PiecewiseConstant {
    pub fn new(
        n_controls: usize,
        edges: Vec<AffineEdge>,
        values: Vec<f64>,
        extent: AffineEdge,
    ) -> Result<Self> {
        if n_controls == 0 {
            return Err(Error::Validation("family needs at least one control".into()));
        }
        if values.len() != edges.len() + 1 {
            return Err(Error::Validation(format!(
                "{} edges need {} segment values, got {}",
                edges.len(),
                edges.len() + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("segment values must be finite".into()));
        }
        for e in edges.iter().chain(std::iter::once(&extent)) {
            if e.gains.len() != n_controls || !e.offset.is_finite() {
                return Err(Error::Validation(format!(
                    "edge must have a finite offset and {n_controls} gains"
                )));
            }
        }
        Ok(Self {
            n_controls,
            edges,
            values,
            extent,
            lower_bounds: vec![None; n_controls],
        })
    }

    pub fn with_lower_bounds(mut self, bounds: Vec<Option<f64>>) -> Result<Self> {
        if bounds.len() != self.n_controls {
            return Err(Error::DimensionMismatch {
                expected: self.n_controls,
                found: bounds.len(),
            });
        }
        self.lower_bounds = bounds;
        Ok(self)
    }

    fn edge_positions(&self, r: &ControlVector) -> Vec<f64> {
        self.edges.iter().map(|e| e.position(r)).collect()
    }

    fn validate(&self, r: &ControlVector) -> Result<()> {
        if r.dim() != self.n_controls {
            return Err(Error::DimensionMismatch {
                expected: self.n_controls,
                found: r.dim(),
            });
        }
        for (i, (c, lb)) in r.components().iter().zip(&self.lower_bounds).enumerate() {
            if let Some(lb) = lb {
                if *c < *lb {
                    return Err(Error::Validation(format!(
                        "control component {i} = {c} is below its lower bound {lb}"
                    )));
                }
            }
        }
        let d = self.extent.position(r);
        if !(d > 0.0) {
            return Err(Error::Validation(format!("non-positive well extent {d}")));
        }
        let mut prev = 0.0;
        for x in self.edge_positions(r).into_iter().chain(std::iter::once(d)) {
            if x < prev {
                return Err(Error::Validation(format!(
                    "step edges out of order at R = {:?}",
                    r.components()
                )));
            }
            prev = x;
        }
        Ok(())
    }

    fn evaluate(&self, x: f64, r: &ControlVector) -> f64 {
        // left-closed segments: an edge belongs to the segment that starts there
        let k = self
            .edge_positions(r)
            .iter()
            .take_while(|&&e| e <= x)
            .count();
        self.values[k]
    }

    fn cell_average(&self, lo: f64, hi: f64, r: &ControlVector) -> f64 {
        let mut acc = 0.0;
        let mut left = 0.0_f64;
        let bounds = self
            .edge_positions(r)
            .into_iter()
            .chain(std::iter::once(f64::INFINITY));
        for (v, right) in self.values.iter().zip(bounds) {
            let overlap = right.min(hi) - left.max(lo);
            if overlap > 0.0 {
                acc += v * overlap;
            }
            left = right;
        }
        acc / (hi - lo)
    }

    fn smoothed_average(&self, center: f64, h: f64, r: &ControlVector) -> f64 {
        let mut acc = 0.0;
        let mut left = f64::NEG_INFINITY;
        let bounds = self
            .edge_positions(r)
            .into_iter()
            .chain(std::iter::once(f64::INFINITY));
        for (v, right) in self.values.iter().zip(bounds) {
            acc += v * (bspline_primitive(center, h, right) - bspline_primitive(center, h, left));
            left = right;
        }
        acc
    }
}

/// `int_{-inf}^{x} B((t - center) / h) dt / h` for the cubic B-spline `B`
/// (support `[-2, 2]`, unit area).
fn bspline_primitive(center: f64, h: f64, x: f64) -> f64 {
    let t = (x - center) / h;
    if t > 0.0 {
        1.0 - bspline_cdf(-t)
    } else {
        bspline_cdf(t)
    }
}

fn bspline_cdf(t: f64) -> f64 {
    if t <= -2.0 {
        0.0
    } else if t <= -1.0 {
        (t + 2.0).powi(4) / 24.0
    } else {
        (4.0 * t - 2.0 * t.powi(3) - 0.75 * t.powi(4) + 2.75) / 6.0 + 1.0 / 24.0
    }
}

/// Cubic B-spline `B(t)`, the density of [`bspline_primitive`] in units of `h`.
pub fn bspline(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

/// The structured infinite well: barrier of height `v0` and width `L` starting
/// at `a/2`, total width `D = a + L + w`. Controls are `(L, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredWell {
    pub a: f64,
    pub v0: f64,
}

impl Default for StructuredWell {
    fn default() -> Self {
        Self {
            a: 1.0,
            v0: STRUCTURED_WELL_V0,
        }
    }
}

impl StructuredWell {
    pub fn as_piecewise(&self) -> PiecewiseConstant {
        let a = self.a;
        PiecewiseConstant {
            n_controls: 2,
            edges: vec![
                AffineEdge::fixed(a / 2.0, 2),
                AffineEdge {
                    offset: a / 2.0,
                    gains: vec![1.0, 0.0],
                },
            ],
            values: vec![0.0, self.v0, 0.0],
            extent: AffineEdge {
                offset: a,
                gains: vec![1.0, 1.0],
            },
            lower_bounds: vec![Some(0.0), Some(0.0)],
        }
    }
}

/// A control-independent potential sampled as `(x, V)` pairs on `[0, x_last]`,
/// linearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    pub n_controls: usize,
    pub xs: Vec<f64>,
    pub vs: Vec<f64>,
}

impl Tabulated {
    pub fn new(n_controls: usize, xs: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != vs.len() {
            return Err(Error::Validation(
                "tabulated potential needs >= 2 matching (x, V) rows".into(),
            ));
        }
        if xs[0] != 0.0 {
            return Err(Error::Validation("tabulated potential must start at x = 0".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("tabulated x must be strictly increasing".into()));
        }
        if vs.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::Validation("tabulated values must be finite".into()));
        }
        Ok(Self { n_controls, xs, vs })
    }

    /// Parses two-column `x,V` CSV text. Lines starting with `#` and a
    /// non-numeric header row are skipped.
    pub fn from_csv(n_controls: usize, text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
            match parsed {
                Some(v) if v.len() == 2 => {
                    xs.push(v[0]);
                    vs.push(v[1]);
                }
                None if xs.is_empty() => continue,
                _ => {
                    return Err(Error::Validation(format!(
                        "line {}: expected two numeric columns x,V",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(n_controls, xs, vs)
    }

    fn evaluate(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&xi| xi <= x);
        if i == 0 {
            return self.vs[0];
        }
        if i >= self.xs.len() {
            return *self.vs.last().unwrap();
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let t = (x - x0) / (x1 - x0);
        self.vs[i - 1] + t * (self.vs[i] - self.vs[i - 1])
    }
}

/// A parameterized family `V(x; R)` together with its domain rule `D(R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PotentialModel {
    StructuredWell(StructuredWell),
    PiecewiseConstant(PiecewiseConstant),
    Tabulated(Tabulated),
}

/// Moving discontinuities of `V` along one control direction, from which
/// `<phi| dV/dR |phi'>` is assembled as boundary terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryMotion {
    /// `(x_k, (V_left - V_right) * dx_k/dR)` for each interior step edge.
    pub steps: Vec<(f64, f64)>,
    /// `dD/dR` of the right hard wall.
    pub wall_velocity: f64,
}

impl PotentialModel {
    pub fn structured_well() -> Self {
        Self::StructuredWell(StructuredWell::default())
    }

    pub fn n_controls(&self) -> usize {
        match self {
            Self::StructuredWell(_) => 2,
            Self::PiecewiseConstant(p) => p.n_controls,
            Self::Tabulated(t) => t.n_controls,
        }
    }

    pub fn validate_control(&self, r: &ControlVector) -> Result<()> {
        match self {
            Self::StructuredWell(s) => s.as_piecewise().validate(r),
            Self::PiecewiseConstant(p) => p.validate(r),
            Self::Tabulated(t) if r.dim() != t.n_controls => Err(Error::DimensionMismatch {
                expected: t.n_controls,
                found: r.dim(),
            }),
            Self::Tabulated(_) => Ok(()),
        }
    }

    /// Well width `D(R)`.
    pub fn extent(&self, r: &ControlVector) -> Result<f64> {
        self.validate_control(r)?;
        Ok(self.extent_unchecked(r))
    }

    fn extent_unchecked(&self, r: &ControlVector) -> f64 {
        match self {
            Self::StructuredWell(s) => s.a + r.get(0) + r.get(1),
            Self::PiecewiseConstant(p) => p.extent.position(r),
            Self::Tabulated(t) => *t.xs.last().unwrap(),
        }
    }

    /// `V(x; R)` for `0 <= x <= D(R)`.
    pub fn evaluate(&self, x: f64, r: &ControlVector) -> Result<f64> {
        let d = self.extent(r)?;
        if !(0.0..=d).contains(&x) {
            return Err(Error::Domain { x, extent: d });
        }
        Ok(match self {
            Self::StructuredWell(s) => {
                let (l, a) = (r.get(0), s.a);
                if x >= a / 2.0 && x < a / 2.0 + l {
                    s.v0
                } else {
                    0.0
                }
            }
            Self::PiecewiseConstant(p) => p.evaluate(x, r),
            Self::Tabulated(t) => t.evaluate(x),
        })
    }

    /// Mean of `V` over `[lo, hi]`, used to place sub-grid step edges on the
    /// finite-difference grid. Assumes a validated control.
    pub fn cell_average(&self, lo: f64, hi: f64, r: &ControlVector) -> f64 {
        match self {
            Self::StructuredWell(s) => {
                let (b0, b1) = (s.a / 2.0, s.a / 2.0 + r.get(0));
                let overlap = (hi.min(b1) - lo.max(b0)).max(0.0);
                s.v0 * overlap / (hi - lo)
            }
            Self::PiecewiseConstant(p) => p.cell_average(lo, hi, r),
            Self::Tabulated(t) => t.evaluate(0.5 * (lo + hi)),
        }
    }

    /// Mean of `V` weighted by the cubic B-spline of node spacing `h` centred
    /// on `center`. As a grid potential this makes the discrete spectrum a
    /// C^3 function of every step position, with no ripple at the grid period
    /// (the shifted splines sum to one). Assumes a validated control.
    pub fn smoothed_average(&self, center: f64, h: f64, r: &ControlVector) -> f64 {
        match self {
            Self::StructuredWell(s) => {
                let (b0, b1) = (s.a / 2.0, s.a / 2.0 + r.get(0));
                s.v0 * (bspline_primitive(center, h, b1) - bspline_primitive(center, h, b0))
            }
            Self::PiecewiseConstant(p) => p.smoothed_average(center, h, r),
            Self::Tabulated(t) => t.evaluate(center),
        }
    }

    /// Smallest value of `V` on the domain.
    pub fn min_value(&self, r: &ControlVector) -> f64 {
        match self {
            Self::StructuredWell(s) => 0.0_f64.min(s.v0),
            Self::PiecewiseConstant(p) => {
                let d = p.extent.position(r);
                let mut left = 0.0;
                let mut min = f64::INFINITY;
                for (k, v) in p.values.iter().enumerate() {
                    let right = p.edges.get(k).map_or(d, |e| e.position(r));
                    if right > left || p.values.len() == 1 {
                        min = min.min(*v);
                    }
                    left = right;
                }
                min
            }
            Self::Tabulated(t) => t.vs.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// The family as explicit step segments, if it is piecewise constant.
    pub fn as_piecewise(&self) -> Option<PiecewiseConstant> {
        match self {
            Self::StructuredWell(s) => Some(s.as_piecewise()),
            Self::PiecewiseConstant(p) => Some(p.clone()),
            Self::Tabulated(_) => None,
        }
    }

    /// Boundary motion generated by `d/dR[dir]`.
    pub fn boundary_motion(&self, r: &ControlVector, dir: usize) -> Result<BoundaryMotion> {
        self.validate_control(r)?;
        if dir >= self.n_controls() {
            return Err(Error::IndexOutOfRange {
                index: dir,
                dim: self.n_controls(),
            });
        }
        let p = match self {
            Self::StructuredWell(s) => s.as_piecewise(),
            Self::PiecewiseConstant(p) => p.clone(),
            Self::Tabulated(_) => return Ok(BoundaryMotion::default()),
        };
        let steps = p
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.velocity(dir) != 0.0)
            .map(|(k, e)| {
                let jump = p.values[k] - p.values[k + 1];
                (e.position(r), jump * e.velocity(dir))
            })
            .filter(|(_, weight)| *weight != 0.0)
            .collect();
        Ok(BoundaryMotion {
            steps,
            wall_velocity: p.extent.velocity(dir),
        })
    }
}

/// One sample `(y, R_y)` of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub y: f64,
    pub control: ControlVector,
}

/// A sampled trajectory in control space, parameterized by the longitudinal
/// coordinate `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    samples: Vec<PathSample>,
    closed: bool,
}

impl ControlPath {
    /// Validates monotone `y` and a common control dimension. The path is
    /// flagged closed when its endpoints agree within `closure_tol`.
    pub fn new(samples: Vec<PathSample>, closure_tol: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "a path needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].control.dim();
        if let Some(s) = samples.iter().find(|s| s.control.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.control.dim(),
            });
        }
        if samples.iter().any(|s| !s.y.is_finite()) {
            return Err(Error::Validation("non-finite y sample".into()));
        }
        if let Some(k) = samples.windows(2).position(|w| !(w[1].y > w[0].y)) {
            return Err(Error::Validation(format!(
                "y must be strictly increasing (samples {k} and {})",
                k + 1
            )));
        }
        let closed = samples[0]
            .control
            .components()
            .iter()
            .zip(samples.last().unwrap().control.components())
            .all(|(a, b)| (a - b).abs() <= closure_tol);
        Ok(Self { samples, closed })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn dim(&self) -> usize {
        self.samples[0].control.dim()
    }

    pub fn y0(&self) -> f64 {
        self.samples[0].y
    }

    pub fn y_end(&self) -> f64 {
        self.samples.last().unwrap().y
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Euclidean length of the polyline in control space.
    pub fn control_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].control.distance(&w[1].control))
            .sum()
    }

    /// Affinely maps `[Y0, Y]` onto `[y0, y1]`.
    pub fn map_to_span(&self, y0: f64, y1: f64) -> Result<Self> {
        if !(y1 > y0) {
            return Err(Error::Validation(format!("empty span [{y0}, {y1}]")));
        }
        let (a, b) = (self.y0(), self.y_end());
        self.reparameterize_with(|y| y0 + (y - a) * (y1 - y0) / (b - a))
    }

    /// Same `y` grid, control points traversed in the opposite order.
    pub fn reversed(&self) -> Self {
        let ys = self.ys();
        let samples = ys
            .into_iter()
            .zip(self.samples.iter().rev())
            .map(|(y, s)| PathSample {
                y,
                control: s.control.clone(),
            })
            .collect();
        Self {
            samples,
            closed: self.closed,
        }
    }

    pub fn reparameterize(&self, profile: &SpeedProfile) -> Result<Self> {
        let (a, b) = (self.y0(), self.y_end());
        match *profile {
            SpeedProfile::Identity => Ok(self.clone()),
            SpeedProfile::Affine { scale, shift } => {
                if !(scale > 0.0) {
                    return Err(Error::Validation(format!(
                        "affine profile needs a positive scale, got {scale}"
                    )));
                }
                self.reparameterize_with(|y| scale * y + shift)
            }
            SpeedProfile::CubicRamp => self.reparameterize_with(|y| {
                let t = (y - a) / (b - a);
                a + (b - a) * 0.5 * (t + t * t * t)
            }),
        }
    }

    /// Applies `y -> f(y)` to every sample; `f` must be strictly increasing on
    /// the sampled points.
    pub fn reparameterize_with(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples: Vec<PathSample> = self
            .samples
            .iter()
            .map(|s| PathSample {
                y: f(s.y),
                control: s.control.clone(),
            })
            .collect();
        if samples.iter().any(|s| !s.y.is_finite())
            || samples.windows(2).any(|w| !(w[1].y > w[0].y))
        {
            return Err(Error::Validation("speed profile is not strictly increasing".into()));
        }
        Ok(Self {
            samples,
            closed: self.closed,
        })
    }
}

/// Monotone maps `y -> y'` used to change traversal speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpeedProfile {
    Identity,
    /// `y -> scale * y + shift`.
    Affine { scale: f64, shift: f64 },
    /// `t -> (t + t^3)/2` on the normalized interval; endpoints fixed.
    CubicRamp,
}

impl SpeedProfile {
    pub fn dilation(scale: f64) -> Self {
        Self::Affine { scale, shift: 0.0 }
    }
}

/// The rectangle `(L_in, w_in) -> (L_in, w_fin) -> (L_fin, w_fin) -> (L_fin, w_in) -> (L_in, w_in)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub l_in: f64,
    pub l_fin: f64,
    pub w_in: f64,
    pub w_fin: f64,
}

impl Rectangle {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.l_in, self.w_in],
            [self.l_in, self.w_fin],
            [self.l_fin, self.w_fin],
            [self.l_fin, self.w_in],
        ]
    }

    /// `+1` when the traversal is counter-clockwise in the `(L, w)` plane,
    /// `-1` when clockwise, `0` when degenerate.
    pub fn orientation(&self) -> f64 {
        let s = -(self.l_fin - self.l_in) * (self.w_fin - self.w_in);
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PathSpec {
    /// Each edge occupies a quarter of `y in [0, 1]` and carries
    /// `per_edge` segments.
    Rectangle { rect: Rectangle, per_edge: usize },
    /// Explicit `(y, R)` samples.
    Explicit(Vec<(f64, Vec<f64>)>),
    /// Polyline through `vertices`; each edge gets an equal share of
    /// `y in [0, 1]` and `per_edge` segments.
    Polyline {
        vertices: Vec<Vec<f64>>,
        per_edge: usize,
    },
}

/// Default number of segments per rectangle edge.
pub const DEFAULT_SAMPLES_PER_EDGE: usize = 64;

pub fn build_path(spec: &PathSpec) -> Result<ControlPath> {
    match spec {
        PathSpec::Rectangle { rect, per_edge } => {
            let mut vertices: Vec<Vec<f64>> = rect.corners().iter().map(|c| c.to_vec()).collect();
            vertices.push(vertices[0].clone());
            polyline(&vertices, *per_edge)
        }
        PathSpec::Polyline { vertices, per_edge } => polyline(vertices, *per_edge),
        PathSpec::Explicit(rows) => {
            let samples = rows
                .iter()
                .map(|(y, r)| {
                    Ok(PathSample {
                        y: *y,
                        control: ControlVector::new(r.clone())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ControlPath::new(samples, CLOSURE_TOL)
        }
    }
}

fn polyline(vertices: &[Vec<f64>], per_edge: usize) -> Result<ControlPath> {
    if vertices.len() < 2 {
        return Err(Error::Validation("a polyline needs at least 2 vertices".into()));
    }
    if per_edge == 0 {
        return Err(Error::Validation("per_edge must be positive".into()));
    }
    let vs = vertices
        .iter()
        .map(|v| ControlVector::new(v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let edges = vs.len() - 1;
    let total = (edges * per_edge) as f64;
    let mut samples = Vec::with_capacity(edges * per_edge + 1);
    for (e, pair) in vs.windows(2).enumerate() {
        for j in 0..per_edge {
            let t = j as f64 / per_edge as f64;
            samples.push(PathSample {
                y: (e * per_edge + j) as f64 / total,
                control: pair[0].lerp(&pair[1], t),
            });
        }
    }
    samples.push(PathSample {
        y: 1.0,
        control: vs[edges].clone(),
    });
    ControlPath::new(samples, CLOSURE_TOL)
}

/// Reads `(y, R...)` rows from CSV text into an explicit path spec.
pub fn path_spec_from_csv(text: &str) -> Result<PathSpec> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Option<Vec<f64>> = line.split(',').map(|c| c.trim().parse().ok()).collect();
        match parsed {
            Some(v) if v.len() >= 2 => rows.push((v[0], v[1..].to_vec())),
            None if rows.is_empty() => continue,
            _ => {
                return Err(Error::Validation(format!(
                    "line {}: expected numeric columns y,R1,...",
                    lineno + 1
                )))
            }
        }
    }
    Ok(PathSpec::Explicit(rows))
}
