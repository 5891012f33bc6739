//! Executes scenarios and renders their artifacts in memory.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value as Json};

use geophase_core::connection::{connection_fd, structured_well_step_connection};
use geophase_core::dynamics::{Formulation, StepRule, Thresholds};
use geophase_core::holonomy::{abelian_phase_line, compose, embed_two_level, ordered_exponential};
use geophase_core::potential::{path_spec_from_csv, StructuredWell, Tabulated};
use geophase_core::spectrum::{eigensolve_with, solve_along_path};
use geophase_core::{
    assemble_omega, build_path, connection_hf, integrate_coupled, two_level_lambda, Complex64,
    ConnectionField, ControlPath, ControlVector, DynamicsConfig, Holonomy, PathSpec, PotentialModel,
    Rectangle, SolverConfig, SpectralSolution, SpeedProfile,
};

use crate::scenario::{
    ConnectionChoice, FormulationChoice, PathShape, PotentialSpec, Profile, Scenario, ScenarioKind,
};

/// Version of every CSV schema and of the JSON report layout.
pub const FORMAT_VERSION: u32 = 1;

/// Largest accepted unitarity defect of a computed holonomy.
const UNITARITY_TOL: f64 = 1e-8;

/// Doublings of `per_edge` tried when a segment is too long for the
/// ordered exponential.
const MAX_REFINEMENTS: u32 = 4;

#[derive(Debug)]
pub enum RunError {
    /// The scenario references something that cannot be built.
    Config(String),
    /// A computation failed or a numerical self-check did not pass.
    Numerical(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

fn numerical(e: geophase_core::Error) -> RunError {
    RunError::Numerical(e.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub artifacts: Vec<Artifact>,
    /// Validity flags raised during the run.
    pub flags: Vec<String>,
}

/// Built inputs shared by the scenarios.
pub struct Resolved {
    pub model: PotentialModel,
    pub solver: SolverConfig,
    pub path: ControlPath,
}

pub fn resolve(sc: &Scenario) -> Result<Resolved, RunError> {
    let read = |p: &str| std::fs::read_to_string(p).map_err(|e| RunError::Config(format!("cannot read {p}: {e}")));
    let model = match &sc.potential {
        PotentialSpec::StructuredWell { a, v0 } => PotentialModel::StructuredWell(StructuredWell { a: *a, v0: *v0 }),
        PotentialSpec::Tabulated { csv, n_controls } => PotentialModel::Tabulated(
            Tabulated::from_csv(*n_controls, &read(csv)?).map_err(|e| RunError::Config(format!("{csv}: {e}")))?,
        ),
    };
    let path = build_scenario_path(sc, &sc.path.shape, sc.path.per_edge, &read)?;
    if path.dim() != model.n_controls() {
        return Err(RunError::Config(format!(
            "path has {} control components but the potential takes {}",
            path.dim(),
            model.n_controls()
        )));
    }
    let solver = SolverConfig {
        n_interior: sc.solver.n_interior,
        levels: sc.solver.l_max + 1,
        eigen_tol: sc.solver.eigen_tol,
        residual_tol: sc.solver.residual_tol,
        min_points_per_half_wave: sc.solver.min_points_per_half_wave,
        ..SolverConfig::default()
    };
    Ok(Resolved { model, solver, path })
}

fn build_scenario_path(
    sc: &Scenario,
    shape: &PathShape,
    per_edge: usize,
    read: &dyn Fn(&str) -> Result<String, RunError>,
) -> Result<ControlPath, RunError> {
    let spec = match shape {
        PathShape::Rectangle { l_in, l_fin, w_in, w_fin } => PathSpec::Rectangle {
            rect: Rectangle {
                l_in: *l_in,
                l_fin: *l_fin,
                w_in: *w_in,
                w_fin: *w_fin,
            },
            per_edge,
        },
        PathShape::Polyline { vertices } => PathSpec::Polyline {
            vertices: vertices.clone(),
            per_edge,
        },
        PathShape::Csv { csv } => path_spec_from_csv(&read(csv)?).map_err(|e| RunError::Config(format!("{csv}: {e}")))?,
    };
    let bad = |e: geophase_core::Error| RunError::Config(format!("path: {e}"));
    let mut path = build_path(&spec).map_err(bad)?;
    if !matches!(shape, PathShape::Csv { .. }) {
        path = path.map_to_span(0.0, sc.path.span).map_err(bad)?;
    }
    if sc.path.profile == Profile::CubicRamp {
        path = path.reparameterize(&SpeedProfile::CubicRamp).map_err(bad)?;
    }
    Ok(path)
}

fn connection_at(
    sc: &Scenario,
    res: &Resolved,
    r: &ControlVector,
    s: &SpectralSolution,
) -> geophase_core::Result<Vec<DMatrix<f64>>> {
    match sc.solver.connection {
        ConnectionChoice::HellmannFeynman => (0..r.dim()).map(|i| connection_hf(&res.model, r, s, i)).collect(),
        ConnectionChoice::FiniteDifference => connection_fd(&res.model, r, sc.solver.fd_step, &res.solver, Some(s)),
        ConnectionChoice::StepEdge => structured_well_step_connection(&res.model, s),
    }
}

fn field_along(
    sc: &Scenario,
    res: &Resolved,
    path: &ControlPath,
    spectra: &[SpectralSolution],
) -> geophase_core::Result<ConnectionField> {
    match sc.solver.connection {
        ConnectionChoice::HellmannFeynman => ConnectionField::hellmann_feynman(&res.model, path, spectra),
        ConnectionChoice::FiniteDifference => {
            ConnectionField::finite_difference(&res.model, path, spectra, sc.solver.fd_step, &res.solver)
        }
        ConnectionChoice::StepEdge => ConnectionField::analytic_structured_well(&res.model, path, spectra),
    }
}

/// Number formatting shared by all CSV files.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn params_json(sc: &Scenario) -> Json {
    serde_json::to_value(sc).expect("scenario serializes")
}

fn csv_artifact(sc: &Scenario, file: String, schema: &str, header: &[&str], rows: Vec<Vec<String>>) -> Artifact {
    let mut out = format!(
        "# geophase {schema} v{FORMAT_VERSION}\n# params {}\n",
        serde_json::to_string(&params_json(sc)).expect("json")
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8"));
    Artifact { file, contents: out }
}

#[derive(Serialize)]
struct Report<'a> {
    format: &'static str,
    format_version: u32,
    tool_version: &'static str,
    scenario: &'a str,
    kind: ScenarioKind,
    seed: Option<u64>,
    params: Json,
    status: &'static str,
    flags: &'a [String],
    results: Json,
}

fn json_artifact(sc: &Scenario, seed: Option<u64>, flags: &[String], results: Json) -> Artifact {
    let report = Report {
        format: "geophase-report",
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        scenario: &sc.name,
        kind: sc.kind,
        seed,
        params: params_json(sc),
        status: if flags.is_empty() { "ok" } else { "flagged" },
        flags,
        results,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    Artifact {
        file: format!("{}.report.json", sc.name),
        contents: text,
    }
}

fn grid_points(sc: &Scenario) -> Vec<(f64, f64)> {
    let ws = sc.grid.ws();
    sc.grid
        .ls()
        .into_iter()
        .flat_map(|l| ws.iter().map(move |&w| (l, w)))
        .collect()
}

fn control(l: f64, w: f64) -> Result<ControlVector, RunError> {
    ControlVector::new(vec![l, w]).map_err(numerical)
}

fn require_two_controls(res: &Resolved) -> Result<(), RunError> {
    if res.model.n_controls() != 2 {
        return Err(RunError::Config("grid scenarios need a potential with two controls (L, w)".into()));
    }
    Ok(())
}

/// Runs a scenario. `seed` is recorded in the report; no scenario draws
/// random numbers.
pub fn run_scenario(sc: &Scenario, seed: Option<u64>) -> Result<RunOutcome, RunError> {
    let res = resolve(sc)?;
    let (mut artifacts, flags, results) = match sc.kind {
        ScenarioKind::Fig2bEnergies => fig2b(sc, &res)?,
        ScenarioKind::Fig3Couplings => fig3(sc, &res)?,
        ScenarioKind::Fig4Alpha => fig4(sc, &res)?,
        ScenarioKind::GateValidation => gate(sc, &res)?,
        ScenarioKind::Su3Concat => su3(sc)?,
    };
    if !sc.output.csv {
        artifacts.clear();
    }
    if sc.output.json {
        artifacts.push(json_artifact(sc, seed, &flags, results));
    }
    Ok(RunOutcome { artifacts, flags })
}

type Produced = (Vec<Artifact>, Vec<String>, Json);

fn fig2b(sc: &Scenario, res: &Resolved) -> Result<Produced, RunError> {
    require_two_controls(res)?;
    let pts = grid_points(sc);
    let rows: Vec<SpectralSolution> = pts
        .par_iter()
        .map(|&(l, w)| eigensolve_with(&res.model, &control(l, w)?, &res.solver).map_err(numerical))
        .collect::<Result<_, _>>()?;
    let levels = res.solver.levels;
    let mut header = vec!["l".to_string(), "w".to_string()];
    header.extend((0..levels).map(|k| format!("e{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let table = pts
        .iter()
        .zip(&rows)
        .map(|(&(l, w), s)| {
            let mut r = vec![num(l), num(w)];
            r.extend(s.eigenvalues.iter().map(|&e| num(e)));
            r
        })
        .collect();
    let csv = csv_artifact(sc, format!("{}.csv", sc.name), "fig2b-energies", &header, table);

    let ortho = rows.iter().map(|s| s.orthonormality_residual()).fold(0.0, f64::max);
    if ortho > UNITARITY_TOL {
        return Err(RunError::Numerical(format!("orthonormality residual {ortho:e} exceeds {UNITARITY_TOL:e}")));
    }
    let mut results = json!({ "points": pts.len(), "levels": levels, "max_orthonormality_residual": ortho });
    if let (PotentialSpec::StructuredWell { v0, .. }, true) = (&sc.potential, levels >= 3) {
        let dev = pts
            .iter()
            .zip(&rows)
            .filter(|((_, w), _)| *w == 0.0)
            .map(|(_, s)| (s.eigenvalues[2] / v0 - 1.0).abs())
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
        results["w0_max_rel_dev_e2_from_v0"] = json!(dev);
    }
    Ok((vec![csv], Vec::new(), results))
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn leakage_ratio(k: &[DMatrix<f64>]) -> f64 {
    let k01 = k.iter().fold(0.0_f64, |a, m| a.max(m[(0, 1)].abs()));
    let k2 = k.iter().fold(0.0_f64, |a, m| a.max(m[(0, 2)].abs()).max(m[(1, 2)].abs()));
    if k2 == 0.0 {
        0.0
    } else {
        k2 / k01
    }
}

fn fig3(sc: &Scenario, res: &Resolved) -> Result<Produced, RunError> {
    require_two_controls(res)?;
    let pts = grid_points(sc);
    let ks: Vec<Vec<DMatrix<f64>>> = pts
        .par_iter()
        .map(|&(l, w)| {
            let r = control(l, w)?;
            let s = eigensolve_with(&res.model, &r, &res.solver).map_err(numerical)?;
            connection_at(sc, res, &r, &s).map_err(numerical)
        })
        .collect::<Result<_, _>>()?;
    let header = [
        "l", "w", "abs_kl_01", "abs_kl_02", "abs_kl_12", "abs_kw_01", "abs_kw_02", "abs_kw_12", "leakage_ratio",
    ];
    let table = pts
        .iter()
        .zip(&ks)
        .map(|(&(l, w), k)| {
            let mut r = vec![num(l), num(w)];
            for m in k {
                r.extend(PAIRS.iter().map(|&p| num(m[p].abs())));
            }
            r.push(num(leakage_ratio(k)));
            r
        })
        .collect();
    let surface = csv_artifact(sc, format!("{}.csv", sc.name), "fig3-couplings", &header, table);

    let spectra = solve_along_path(&res.model, &res.path, &res.solver).map_err(numerical)?;
    let field = field_along(sc, res, &res.path, &spectra).map_err(numerical)?;
    let lam = two_level_lambda(&field, sc.dynamics.leakage_threshold).map_err(numerical)?;
    let header = ["y", "l", "w", "kl_01", "kw_01", "kl_02", "kw_02", "kl_12", "kw_12", "leakage_ratio"];
    let table = res
        .path
        .samples()
        .iter()
        .zip(field.samples())
        .zip(&lam.leakage_ratio)
        .map(|((p, k), ratio)| {
            let mut r = vec![num(p.y)];
            r.extend(p.control.components().iter().map(|&c| num(c)));
            for &pair in &PAIRS {
                r.extend(k.components().iter().map(|m| num(m[pair])));
            }
            r.push(num(*ratio));
            r
        })
        .collect();
    let inset = csv_artifact(sc, format!("{}-inset.csv", sc.name), "fig3-inset", &header, table);

    let grid_max = ks.iter().map(|k| leakage_ratio(k)).fold(0.0, f64::max);
    let mut flags = Vec::new();
    if !lam.is_valid() {
        flags.push(format!(
            "two-level reduction: leakage ratio reaches {:.3e} on the inset path ({} samples above {})",
            lam.max_ratio(),
            lam.warnings.len(),
            lam.threshold
        ));
    }
    let results = json!({
        "grid_points": pts.len(),
        "grid_max_leakage_ratio": grid_max,
        "path_samples": res.path.len(),
        "path_max_leakage_ratio": lam.max_ratio(),
        "path_warnings": lam.warnings,
    });
    Ok((vec![surface, inset], flags, results))
}

struct Cell {
    per_edge: usize,
    alpha_line: f64,
    alpha_step: Option<f64>,
    u: Holonomy,
    leakage: f64,
}

fn off_block(u: &Holonomy) -> f64 {
    let n = u.dim();
    let mut m = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if (i < 2) != (j < 2) {
                m = m.max(u.u[(i, j)].norm());
            }
        }
    }
    m
}

fn fig4_cell(sc: &Scenario, res: &Resolved, rect: Rectangle) -> Result<Cell, RunError> {
    let mut per_edge = sc.path.per_edge;
    for attempt in 0..=MAX_REFINEMENTS {
        let path = build_path(&PathSpec::Rectangle { rect, per_edge }).map_err(numerical)?;
        let spectra = solve_along_path(&res.model, &path, &res.solver).map_err(numerical)?;
        let field = field_along(sc, res, &path, &spectra).map_err(numerical)?;
        let u = match ordered_exponential(&field, path.is_closed()) {
            Err(geophase_core::Error::SubdivisionRequired { .. }) if attempt < MAX_REFINEMENTS => {
                per_edge *= 2;
                continue;
            }
            other => other.map_err(numerical)?,
        };
        let alpha_line = abelian_phase_line(&field, path.is_closed()).map_err(numerical)?.alpha;
        let alpha_step = match &res.model {
            PotentialModel::StructuredWell(_) => {
                let step = ConnectionField::analytic_structured_well(&res.model, &path, &spectra).map_err(numerical)?;
                Some(abelian_phase_line(&step, path.is_closed()).map_err(numerical)?.alpha)
            }
            _ => None,
        };
        let leakage = two_level_lambda(&field, sc.dynamics.leakage_threshold)
            .map_err(numerical)?
            .max_ratio();
        return Ok(Cell {
            per_edge,
            alpha_line,
            alpha_step,
            u,
            leakage,
        });
    }
    unreachable!("the last attempt returns")
}

fn fig4(sc: &Scenario, res: &Resolved) -> Result<Produced, RunError> {
    require_two_controls(res)?;
    let PathShape::Rectangle { l_in, w_in, .. } = sc.path.shape else {
        return Err(RunError::Config("fig4-alpha needs a rectangle path".into()));
    };
    let pts = grid_points(sc);
    let cells: Vec<Cell> = pts
        .par_iter()
        .map(|&(l_fin, w_fin)| {
            fig4_cell(
                sc,
                res,
                Rectangle {
                    l_in,
                    l_fin,
                    w_in,
                    w_fin,
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let header = [
        "l_fin",
        "w_fin",
        "per_edge",
        "alpha_line",
        "alpha_step_edge",
        "alpha_holonomy",
        "u_off_block",
        "unitarity_defect",
        "leakage_ratio",
    ];
    let table = pts
        .iter()
        .zip(&cells)
        .map(|(&(l, w), c)| {
            vec![
                num(l),
                num(w),
                c.per_edge.to_string(),
                num(c.alpha_line),
                opt(c.alpha_step),
                opt(c.u.alpha),
                num(off_block(&c.u)),
                num(c.u.unitarity_defect()),
                num(c.leakage),
            ]
        })
        .collect();
    let worst = cells.iter().map(|c| c.u.unitarity_defect()).fold(0.0, f64::max);
    if worst > UNITARITY_TOL {
        return Err(RunError::Numerical(format!("holonomy unitarity defect {worst:e} exceeds {UNITARITY_TOL:e}")));
    }
    let max_leak = cells.iter().map(|c| c.leakage).fold(0.0, f64::max);
    let mut flags = Vec::new();
    if max_leak > sc.dynamics.leakage_threshold {
        flags.push(format!(
            "two-level reduction: leakage ratio reaches {max_leak:.3e} (threshold {})",
            sc.dynamics.leakage_threshold
        ));
    }
    let csv = csv_artifact(sc, format!("{}.csv", sc.name), "fig4-alpha", &header, table);
    let results = json!({
        "rectangles": pts.len(),
        "l_in": l_in,
        "w_in": w_in,
        "max_unitarity_defect": worst,
        "max_off_block": cells.iter().map(|c| off_block(&c.u)).fold(0.0, f64::max),
        "max_leakage_ratio": max_leak,
        "max_per_edge": cells.iter().map(|c| c.per_edge).max(),
    });
    Ok((vec![csv], flags, results))
}

fn complex_json(c: &[Complex64]) -> Json {
    json!(c.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
}

fn gate(sc: &Scenario, res: &Resolved) -> Result<Produced, RunError> {
    let d = &sc.dynamics;
    let spectra = solve_along_path(&res.model, &res.path, &res.solver).map_err(numerical)?;
    let field = field_along(sc, res, &res.path, &spectra).map_err(numerical)?;
    let omega = assemble_omega(&res.path, &spectra).map_err(numerical)?;
    let cfg = DynamicsConfig {
        ell0: d.ell0,
        ell_off: d.ell_off,
        step: StepRule::Resolution(d.kdy),
        thresholds: Thresholds {
            adiabatic: d.adiabatic_threshold,
            gap_ratio: d.gap_threshold,
            wkb: d.wkb_threshold,
            step_norm: d.step_norm_threshold,
        },
        formulation: match d.formulation {
            FormulationChoice::FirstOrder => Formulation::FirstOrder,
            FormulationChoice::Expanded => Formulation::Expanded,
        },
        record_trace: false,
    };
    let c0: Vec<Complex64> = d.initial.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let u = ordered_exponential(&field.truncated(d.ell_off + 1), res.path.is_closed()).map_err(numerical)?;
    if u.unitarity_defect() > UNITARITY_TOL {
        return Err(RunError::Numerical(format!(
            "holonomy unitarity defect {:e} exceeds {UNITARITY_TOL:e}",
            u.unitarity_defect()
        )));
    }
    let runs: Vec<_> = d
        .energies
        .par_iter()
        .map(|&eps| integrate_coupled(&field, &omega, eps, &c0, &cfg).map_err(numerical))
        .collect::<Result<_, _>>()?;

    let header = [
        "epsilon",
        "fidelity",
        "infidelity",
        "leakage",
        "dynamical_phase",
        "alpha",
        "steps",
        "flags",
    ];
    let table = d
        .energies
        .iter()
        .zip(&runs)
        .map(|(&eps, r)| {
            vec![
                num(eps),
                num(r.fidelity),
                num(1.0 - r.fidelity),
                num(r.leakage),
                num(r.dynamical_phase),
                opt(r.alpha),
                r.steps.to_string(),
                r.validity.flags.len().to_string(),
            ]
        })
        .collect();
    let csv = csv_artifact(sc, format!("{}.csv", sc.name), "gate-validation", &header, table);

    let mut flags = Vec::new();
    for (eps, r) in d.energies.iter().zip(&runs) {
        flags.extend(r.validity.flags.iter().map(|f| format!("eps = {eps:e}: {f}")));
    }
    let per_energy: Vec<Json> = d
        .energies
        .iter()
        .zip(&runs)
        .map(|(&eps, r)| {
            json!({
                "epsilon": eps,
                "fidelity": r.fidelity,
                "leakage": r.leakage,
                "dynamical_phase": r.dynamical_phase,
                "alpha": r.alpha,
                "steps": r.steps,
                "final": complex_json(&r.final_state.c),
                "predicted": complex_json(&r.predicted),
                "validity": r.validity,
                "warnings": r.warnings,
            })
        })
        .collect();
    let results = json!({
        "path_samples": res.path.len(),
        "closed": res.path.is_closed(),
        "holonomy": { "alpha": u.alpha, "plane": u.plane, "u": u.rows(), "unitarity_defect": u.unitarity_defect() },
        "runs": per_energy,
    });
    Ok((vec![csv], flags, results))
}

fn su3(sc: &Scenario) -> Result<Produced, RunError> {
    let a = embed_two_level(sc.su3.alpha, (0, 1), 3).map_err(numerical)?;
    let b = embed_two_level(sc.su3.alpha_prime, (0, 2), 3).map_err(numerical)?;
    let ab = compose(&a, &b).map_err(numerical)?;
    let ba = compose(&b, &a).map_err(numerical)?;
    let defect = ab.unitarity_defect().max(ba.unitarity_defect());
    if defect > 1e-10 {
        return Err(RunError::Numerical(format!("unitarity defect {defect:e} exceeds 1e-10")));
    }
    let commutator = (&ab.u - &ba.u).norm();
    let mut rows = Vec::new();
    for (order, h) in [("u01_u02", &ab), ("u02_u01", &ba)] {
        for (i, row) in h.rows().iter().enumerate() {
            for (j, z) in row.iter().enumerate() {
                rows.push(vec![order.to_string(), i.to_string(), j.to_string(), num(z[0]), num(z[1])]);
            }
        }
    }
    let csv = csv_artifact(sc, format!("{}.csv", sc.name), "su3-concat", &["order", "row", "col", "re", "im"], rows);
    let mut c0 = vec![Complex64::new(1.0, 0.0), Complex64::default(), Complex64::default()];
    if sc.dynamics.initial.len() == 3 {
        c0 = sc.dynamics.initial.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    }
    let results = json!({
        "commutator_frobenius": commutator,
        "unitarity_defect": defect,
        "u01_u02": ab.rows(),
        "u02_u01": ba.rows(),
        "initial": complex_json(&c0),
        "u01_u02_applied": complex_json(&ab.apply(&c0).map_err(numerical)?),
        "u02_u01_applied": complex_json(&ba.apply(&c0).map_err(numerical)?),
    });
    Ok((vec![csv], Vec::new(), results))
}
