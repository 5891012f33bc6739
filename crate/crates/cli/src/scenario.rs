//! Typed scenario description built from a parsed [`Document`].
//!
//! Sections and keys (defaults in parentheses):
//!
//! ```text
//! [scenario]  kind (fig2b-energies), name (= kind)
//! [potential] family (structured-well): a (1.0), v0 (9 pi^2)
//!             family = tabulated: csv (x,V file), n_controls (2)
//! [path]      kind (rectangle): l_in (0.3; 0.35 for fig3) l_fin (0.5) w_in (0.0) w_fin (0.02)
//!             kind = polyline: vertices (list of control lists)
//!             kind = csv: csv (y,R file)
//!             per_edge (64), span (100.0), profile (identity | cubic-ramp)
//! [solver]    n_interior (2000), l_max (2; ell_off + 1 for gate-validation), fd_step (1e-4), eigen_tol (1e-10),
//!             residual_tol (1e-10), min_points_per_half_wave (20.0),
//!             connection (hellmann-feynman | finite-difference | step-edge)
//! [dynamics]  energies ([1000.0, 10000.0, 100000.0]), ell0 (1), ell_off (2),
//!             kdy (0.1), formulation (first-order | expanded),
//!             initial ([1.0, 0.0, 0.0]), adiabatic_threshold (0.1),
//!             gap_threshold (0.1), wkb_threshold (0.01),
//!             step_norm_threshold (0.1), leakage_threshold (0.1)
//! [grid]      l ([min, max]), w ([min, max]), l_points, w_points;
//!             fig2b/fig3: L in [0.1, 0.6] x w in [0, 0.05], 40 x 20;
//!             fig4: L_fin in [0.3, 0.6] x w_fin in [0, 0.05], 30 x 20
//! [su3]       alpha (pi/4), alpha_prime (pi/4)
//! [output]    dir ("out"), csv (true), json (true)
//! ```

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::{parse_document, semantic, ConfigError, Document, Entry, Loader, Location, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Fig2bEnergies,
    Fig3Couplings,
    Fig4Alpha,
    GateValidation,
    Su3Concat,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        Self::Fig2bEnergies,
        Self::Fig3Couplings,
        Self::Fig4Alpha,
        Self::GateValidation,
        Self::Su3Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fig2bEnergies => "fig2b-energies",
            Self::Fig3Couplings => "fig3-couplings",
            Self::Fig4Alpha => "fig4-alpha",
            Self::GateValidation => "gate-validation",
            Self::Su3Concat => "su3-concat",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::Fig2bEnergies => "lowest three energies over an (L, w) grid",
            Self::Fig3Couplings => "|K_ll'| over an (L, w) grid plus the trace along the inset path",
            Self::Fig4Alpha => "rotation angle over (L_fin, w_fin) rectangles from (L_in, w_in)",
            Self::GateValidation => "coupled-mode propagation against the holonomy prediction per energy",
            Self::Su3Concat => "product of two embedded two-level rotations in a three-level space",
        }
    }

}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PotentialSpec {
    StructuredWell { a: f64, v0: f64 },
    Tabulated { csv: String, n_controls: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PathShape {
    Rectangle { l_in: f64, l_fin: f64, w_in: f64, w_fin: f64 },
    Polyline { vertices: Vec<Vec<f64>> },
    Csv { csv: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Identity,
    CubicRamp,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathConfig {
    pub shape: PathShape,
    pub per_edge: usize,
    /// Length `Lambda` of the `y` interval the path is mapped onto.
    pub span: f64,
    pub profile: Profile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionChoice {
    HellmannFeynman,
    FiniteDifference,
    StepEdge,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverParams {
    pub n_interior: usize,
    pub l_max: usize,
    pub fd_step: f64,
    pub eigen_tol: f64,
    pub residual_tol: f64,
    pub min_points_per_half_wave: f64,
    pub connection: ConnectionChoice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulationChoice {
    FirstOrder,
    Expanded,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DynamicsParams {
    pub energies: Vec<f64>,
    pub ell0: usize,
    pub ell_off: usize,
    pub kdy: f64,
    pub formulation: FormulationChoice,
    pub initial: Vec<f64>,
    pub adiabatic_threshold: f64,
    pub gap_threshold: f64,
    pub wkb_threshold: f64,
    pub step_norm_threshold: f64,
    pub leakage_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridParams {
    pub l: [f64; 2],
    pub w: [f64; 2],
    pub l_points: usize,
    pub w_points: usize,
}

impl GridParams {
    pub fn ls(&self) -> Vec<f64> {
        axis(self.l, self.l_points)
    }

    pub fn ws(&self) -> Vec<f64> {
        axis(self.w, self.w_points)
    }
}

fn axis([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Su3Params {
    pub alpha: f64,
    pub alpha_prime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputParams {
    pub dir: String,
    pub csv: bool,
    pub json: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub potential: PotentialSpec,
    pub path: PathConfig,
    pub solver: SolverParams,
    pub dynamics: DynamicsParams,
    pub grid: GridParams,
    pub su3: Su3Params,
    pub output: OutputParams,
}

/// Typed access to one section; every key read is marked as known.
struct Section<'d> {
    name: &'static str,
    entries: Option<&'d BTreeMap<String, Entry>>,
    header: Location,
    known: Vec<&'static str>,
}

impl<'d> Section<'d> {
    fn entry(&mut self, key: &'static str) -> Option<&'d Entry> {
        self.known.push(key);
        self.entries.and_then(|t| t.get(key))
    }

    fn type_error(&self, key: &str, e: &Entry, want: &str) -> ConfigError {
        semantic(
            e.value_at.clone(),
            format!("{}.{key} must be {want}, found {}", self.name, e.value.type_name()),
        )
    }

    fn float(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => match &e.value {
                Value::Float(x) => Ok(*x),
                Value::Int(i) => Ok(*i as f64),
                _ => Err(self.type_error(key, e, "a number")),
            },
        }
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        let v = self.float(key, default)?;
        self.check(key, v > 0.0, "must be positive")?;
        Ok(v)
    }

    fn non_negative(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        let v = self.float(key, default)?;
        self.check(key, v >= 0.0, "must be non-negative")?;
        Ok(v)
    }

    fn uint(&mut self, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => match &e.value {
                Value::Int(i) if *i >= 0 => Ok(*i as usize),
                Value::Int(_) => Err(semantic(e.value_at.clone(), format!("{}.{key} must be non-negative", self.name))),
                _ => Err(self.type_error(key, e, "an integer")),
            },
        }
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => match &e.value {
                Value::Bool(b) => Ok(*b),
                _ => Err(self.type_error(key, e, "true or false")),
            },
        }
    }

    /// A string or bare identifier.
    fn word(&mut self, key: &'static str, default: &str) -> Result<String, ConfigError> {
        match self.entry(key) {
            None => Ok(default.to_string()),
            Some(e) => match &e.value {
                Value::Str(s) | Value::Ident(s) => Ok(s.clone()),
                _ => Err(self.type_error(key, e, "a name")),
            },
        }
    }

    fn choice<T: Copy>(&mut self, key: &'static str, default: T, options: &[(&str, T)]) -> Result<T, ConfigError> {
        let Some(e) = self.entry(key) else {
            return Ok(default);
        };
        let (Value::Str(s) | Value::Ident(s)) = &e.value else {
            return Err(self.type_error(key, e, "a name"));
        };
        options.iter().find(|(n, _)| n == s).map(|(_, v)| *v).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            semantic(
                e.value_at.clone(),
                format!("{}.{key}: unknown value {s:?} (expected one of {})", self.name, names.join(", ")),
            )
        })
    }

    fn floats(&mut self, key: &'static str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        let Some(e) = self.entry(key) else {
            return Ok(default.to_vec());
        };
        list_of_floats(&e.value).ok_or_else(|| self.type_error(key, e, "a list of numbers"))
    }

    fn range(&mut self, key: &'static str, default: [f64; 2]) -> Result<[f64; 2], ConfigError> {
        let at = self.entry(key).map(|e| e.value_at.clone());
        let v = self.floats(key, &default)?;
        match (v.as_slice(), at) {
            ([lo, hi], _) if lo <= hi => Ok([*lo, *hi]),
            (_, Some(at)) => Err(semantic(at, format!("{}.{key} must be [min, max] with min <= max", self.name))),
            _ => Ok(default),
        }
    }

    fn check(&self, key: &str, ok: bool, what: &str) -> Result<(), ConfigError> {
        if ok {
            return Ok(());
        }
        let at = self
            .entries
            .and_then(|t| t.get(key))
            .map_or_else(|| self.header.clone(), |e| e.value_at.clone());
        Err(semantic(at, format!("{}.{key} {what}", self.name)))
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (k, e) in self.entries.into_iter().flatten() {
            if !self.known.contains(&k.as_str()) {
                return Err(semantic(
                    e.key_at.clone(),
                    format!("unknown key {k} in [{}]", self.name),
                ));
            }
        }
        Ok(())
    }
}

fn list_of_floats(v: &Value) -> Option<Vec<f64>> {
    let Value::List(items) = v else {
        return None;
    };
    items
        .iter()
        .map(|x| match x {
            Value::Float(f) => Some(*f),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        })
        .collect()
}

const SECTIONS: [&str; 8] = [
    "scenario", "potential", "path", "solver", "dynamics", "grid", "su3", "output",
];

fn section<'d>(doc: &'d Document, name: &'static str) -> Section<'d> {
    let header = doc.section_at.get(name).cloned().unwrap_or(Location {
        source: "<defaults>".into(),
        line: 0,
        column: 0,
    });
    Section {
        name,
        entries: doc.sections.get(name),
        header,
        known: Vec::new(),
    }
}

/// Resolves a data-file path against the config directory.
fn data_path(doc: &Document, p: &str) -> String {
    match &doc.base_dir {
        Some(dir) if Path::new(p).is_relative() => dir.join(p).display().to_string(),
        _ => p.to_string(),
    }
}

impl Scenario {
    pub fn from_document(doc: &Document) -> Result<Self, ConfigError> {
        for (name, at) in &doc.section_at {
            if !SECTIONS.contains(&name.as_str()) {
                return Err(semantic(at.clone(), format!("unknown section [{name}]")));
            }
        }

        let mut s = section(doc, "scenario");
        let kind = {
            let names: Vec<(&str, ScenarioKind)> = ScenarioKind::ALL.iter().map(|k| (k.as_str(), *k)).collect();
            s.choice("kind", ScenarioKind::Fig2bEnergies, &names)?
        };
        let name = s.word("name", kind.as_str())?;
        s.check("name", !name.is_empty() && !name.contains(['/', '\\']), "must be a non-empty file-name stem")?;
        s.finish()?;

        let mut s = section(doc, "potential");
        let family = s.choice(
            "family",
            "structured-well",
            &[("structured-well", "structured-well"), ("tabulated", "tabulated")],
        )?;
        let potential = if family == "structured-well" {
            PotentialSpec::StructuredWell {
                a: s.positive("a", 1.0)?,
                v0: s.non_negative("v0", 9.0 * PI * PI)?,
            }
        } else {
            let csv = s.word("csv", "")?;
            s.check("csv", !csv.is_empty(), "is required for a tabulated potential")?;
            PotentialSpec::Tabulated {
                csv: data_path(doc, &csv),
                n_controls: s.uint("n_controls", 2)?,
            }
        };
        s.finish()?;

        let mut s = section(doc, "path");
        let shape_kind = s.choice(
            "kind",
            "rectangle",
            &[("rectangle", "rectangle"), ("polyline", "polyline"), ("csv", "csv")],
        )?;
        let shape = match shape_kind {
            "rectangle" => PathShape::Rectangle {
                l_in: s.non_negative("l_in", if kind == ScenarioKind::Fig3Couplings { 0.35 } else { 0.3 })?,
                l_fin: s.non_negative("l_fin", 0.5)?,
                w_in: s.non_negative("w_in", 0.0)?,
                w_fin: s.non_negative("w_fin", 0.02)?,
            },
            "polyline" => {
                let Some(e) = s.entry("vertices") else {
                    return Err(semantic(s.header.clone(), "path.vertices is required for a polyline path"));
                };
                let vertices = match &e.value {
                    Value::List(items) => items.iter().map(list_of_floats).collect::<Option<Vec<_>>>(),
                    _ => None,
                }
                .ok_or_else(|| s.type_error("vertices", e, "a list of number lists"))?;
                let ok = vertices.len() >= 2
                    && vertices.iter().all(|v| !v.is_empty() && v.len() == vertices[0].len());
                s.check("vertices", ok, "needs >= 2 vertices of equal, non-zero dimension")?;
                PathShape::Polyline { vertices }
            }
            _ => {
                let csv = s.word("csv", "")?;
                s.check("csv", !csv.is_empty(), "is required for a csv path")?;
                PathShape::Csv { csv: data_path(doc, &csv) }
            }
        };
        if kind == ScenarioKind::Fig4Alpha && !matches!(shape, PathShape::Rectangle { .. }) {
            s.check("kind", false, "must be rectangle for fig4-alpha")?;
        }
        let per_edge = s.uint("per_edge", 64)?;
        s.check("per_edge", per_edge >= 1, "must be at least 1")?;
        let path = PathConfig {
            shape,
            per_edge,
            span: s.positive("span", 100.0)?,
            profile: s.choice(
                "profile",
                Profile::Identity,
                &[("identity", Profile::Identity), ("cubic-ramp", Profile::CubicRamp)],
            )?,
        };
        s.finish()?;

        let mut s = section(doc, "dynamics");
        let energies = s.floats("energies", &[1e3, 1e4, 1e5])?;
        s.check(
            "energies",
            !energies.is_empty() && energies.iter().all(|e| *e > 0.0),
            "must be a non-empty list of positive energies",
        )?;
        let ell0 = s.uint("ell0", 1)?;
        let ell_off = s.uint("ell_off", 2)?;
        s.check("ell_off", ell_off >= ell0, "must be >= ell0")?;
        let kdy = s.positive("kdy", 0.1)?;
        s.check("kdy", kdy <= geophase_core::dynamics::STEP_BOUND, "must not exceed 0.2")?;
        let formulation = s.choice(
            "formulation",
            FormulationChoice::FirstOrder,
            &[("first-order", FormulationChoice::FirstOrder), ("expanded", FormulationChoice::Expanded)],
        )?;
        let mut default_initial = vec![0.0; ell_off + 1];
        default_initial[0] = 1.0;
        let initial = s.floats("initial", &default_initial)?;
        s.check("initial", initial.len() == ell_off + 1, "must have ell_off + 1 amplitudes")?;
        s.check("initial", initial.iter().any(|c| *c != 0.0), "must not be all zero")?;
        let dynamics = DynamicsParams {
            energies,
            ell0,
            ell_off,
            kdy,
            formulation,
            initial,
            adiabatic_threshold: s.positive("adiabatic_threshold", 0.1)?,
            gap_threshold: s.positive("gap_threshold", 0.1)?,
            wkb_threshold: s.positive("wkb_threshold", 0.01)?,
            step_norm_threshold: s.positive("step_norm_threshold", 0.1)?,
            leakage_threshold: s.positive("leakage_threshold", 0.1)?,
        };
        s.finish()?;

        let mut s = section(doc, "solver");
        let n_interior = s.uint("n_interior", 2000)?;
        s.check("n_interior", n_interior >= 10, "must be at least 10")?;
        let l_max_default = match kind {
            ScenarioKind::GateValidation => dynamics.ell_off + 1,
            _ => 2,
        };
        let l_max = s.uint("l_max", l_max_default)?;
        s.check("l_max", l_max >= 1, "must be at least 1")?;
        match kind {
            ScenarioKind::Fig3Couplings | ScenarioKind::Fig4Alpha => {
                s.check("l_max", l_max >= 2, "must be at least 2 for this scenario")?
            }
            ScenarioKind::GateValidation => s.check(
                "l_max",
                l_max > dynamics.ell_off,
                "must exceed dynamics.ell_off (validity diagnostics need level ell_off + 1)",
            )?,
            _ => {}
        }
        let solver = SolverParams {
            n_interior,
            l_max,
            fd_step: s.positive("fd_step", 1e-4)?,
            eigen_tol: s.positive("eigen_tol", 1e-10)?,
            residual_tol: s.positive("residual_tol", 1e-10)?,
            min_points_per_half_wave: s.positive("min_points_per_half_wave", 20.0)?,
            connection: s.choice(
                "connection",
                ConnectionChoice::HellmannFeynman,
                &[
                    ("hellmann-feynman", ConnectionChoice::HellmannFeynman),
                    ("finite-difference", ConnectionChoice::FiniteDifference),
                    ("step-edge", ConnectionChoice::StepEdge),
                ],
            )?,
        };
        s.finish()?;

        let mut s = section(doc, "grid");
        let (dl, dn) = match kind {
            ScenarioKind::Fig4Alpha => ([0.3, 0.6], 30),
            _ => ([0.1, 0.6], 40),
        };
        let grid = GridParams {
            l: s.range("l", dl)?,
            w: s.range("w", [0.0, 0.05])?,
            l_points: s.uint("l_points", dn)?,
            w_points: s.uint("w_points", 20)?,
        };
        s.check("l_points", grid.l_points >= 1, "must be at least 1")?;
        s.check("w_points", grid.w_points >= 1, "must be at least 1")?;
        s.check("l", grid.l[0] >= 0.0, "must not go below 0")?;
        s.check("w", grid.w[0] >= 0.0, "must not go below 0")?;
        s.finish()?;

        let mut s = section(doc, "su3");
        let su3 = Su3Params {
            alpha: s.float("alpha", FRAC_PI_4)?,
            alpha_prime: s.float("alpha_prime", FRAC_PI_4)?,
        };
        s.finish()?;

        let mut s = section(doc, "output");
        let output = OutputParams {
            dir: s.word("dir", "out")?,
            csv: s.boolean("csv", true)?,
            json: s.boolean("json", true)?,
        };
        s.finish()?;

        Ok(Self {
            name,
            kind,
            potential,
            path,
            solver,
            dynamics,
            grid,
            su3,
            output,
        })
    }

    /// Writes the fully resolved scenario back as config text.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut sec = |title: &str, rows: Vec<(&str, Value)>| {
            let _ = writeln!(out, "[{title}]");
            for (k, v) in rows {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        };
        let f = Value::Float;
        let u = |n: usize| Value::Int(n as i64);
        let s = |x: &str| Value::Str(x.to_string());
        let fl = |xs: &[f64]| Value::List(xs.iter().copied().map(Value::Float).collect());

        sec("scenario", vec![("kind", Value::Ident(self.kind.as_str().into())), ("name", s(&self.name))]);
        sec(
            "potential",
            match &self.potential {
                PotentialSpec::StructuredWell { a, v0 } => {
                    vec![("family", Value::Ident("structured-well".into())), ("a", f(*a)), ("v0", f(*v0))]
                }
                PotentialSpec::Tabulated { csv, n_controls } => vec![
                    ("family", Value::Ident("tabulated".into())),
                    ("csv", s(csv)),
                    ("n_controls", u(*n_controls)),
                ],
            },
        );
        let mut path = match &self.path.shape {
            PathShape::Rectangle { l_in, l_fin, w_in, w_fin } => vec![
                ("kind", Value::Ident("rectangle".into())),
                ("l_in", f(*l_in)),
                ("l_fin", f(*l_fin)),
                ("w_in", f(*w_in)),
                ("w_fin", f(*w_fin)),
            ],
            PathShape::Polyline { vertices } => vec![
                ("kind", Value::Ident("polyline".into())),
                ("vertices", Value::List(vertices.iter().map(|v| fl(v)).collect())),
            ],
            PathShape::Csv { csv } => vec![("kind", Value::Ident("csv".into())), ("csv", s(csv))],
        };
        path.push(("per_edge", u(self.path.per_edge)));
        path.push(("span", f(self.path.span)));
        path.push((
            "profile",
            Value::Ident(
                match self.path.profile {
                    Profile::Identity => "identity",
                    Profile::CubicRamp => "cubic-ramp",
                }
                .into(),
            ),
        ));
        sec("path", path);
        let sv = &self.solver;
        sec(
            "solver",
            vec![
                ("n_interior", u(sv.n_interior)),
                ("l_max", u(sv.l_max)),
                ("fd_step", f(sv.fd_step)),
                ("eigen_tol", f(sv.eigen_tol)),
                ("residual_tol", f(sv.residual_tol)),
                ("min_points_per_half_wave", f(sv.min_points_per_half_wave)),
                (
                    "connection",
                    Value::Ident(
                        match sv.connection {
                            ConnectionChoice::HellmannFeynman => "hellmann-feynman",
                            ConnectionChoice::FiniteDifference => "finite-difference",
                            ConnectionChoice::StepEdge => "step-edge",
                        }
                        .into(),
                    ),
                ),
            ],
        );
        let d = &self.dynamics;
        sec(
            "dynamics",
            vec![
                ("energies", fl(&d.energies)),
                ("ell0", u(d.ell0)),
                ("ell_off", u(d.ell_off)),
                ("kdy", f(d.kdy)),
                (
                    "formulation",
                    Value::Ident(
                        match d.formulation {
                            FormulationChoice::FirstOrder => "first-order",
                            FormulationChoice::Expanded => "expanded",
                        }
                        .into(),
                    ),
                ),
                ("initial", fl(&d.initial)),
                ("adiabatic_threshold", f(d.adiabatic_threshold)),
                ("gap_threshold", f(d.gap_threshold)),
                ("wkb_threshold", f(d.wkb_threshold)),
                ("step_norm_threshold", f(d.step_norm_threshold)),
                ("leakage_threshold", f(d.leakage_threshold)),
            ],
        );
        let g = &self.grid;
        sec(
            "grid",
            vec![
                ("l", fl(&g.l)),
                ("w", fl(&g.w)),
                ("l_points", u(g.l_points)),
                ("w_points", u(g.w_points)),
            ],
        );
        sec("su3", vec![("alpha", f(self.su3.alpha)), ("alpha_prime", f(self.su3.alpha_prime))]);
        sec(
            "output",
            vec![
                ("dir", s(&self.output.dir)),
                ("csv", Value::Bool(self.output.csv)),
                ("json", Value::Bool(self.output.json)),
            ],
        );
        out
    }
}

/// Parses config text into a scenario.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    parse_config_with(text, "<config>", None, &crate::config::FsLoader)
}

pub fn parse_config_with(
    text: &str,
    source: &str,
    dir: Option<&Path>,
    loader: &dyn Loader,
) -> Result<Scenario, ConfigError> {
    Scenario::from_document(&parse_document(text, source, dir, loader)?)
}

/// Reads and parses a config file; paths inside it resolve against its directory.
pub fn load_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        semantic(
            Location {
                source: path.display().to_string(),
                line: 0,
                column: 0,
            },
            format!("cannot read config: {e}"),
        )
    })?;
    parse_config_with(&text, &path.display().to_string(), path.parent(), &crate::config::FsLoader)
}
