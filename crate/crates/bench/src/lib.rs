//! Shared fixtures for the criterion benches in `benches/`.

use geophase_core::spectrum::solve_along_path;
use geophase_core::{
    assemble_omega, build_path, ConnectionField, ControlPath, OmegaSamples, PathSpec, PotentialModel,
    Rectangle, SolverConfig,
};

/// The `(0.3, 0) -> (0.5, 0.02)` loop with its spectra, connection and
/// `Omega`, `levels` levels per sample.
pub struct LoopFixture {
    pub model: PotentialModel,
    pub path: ControlPath,
    pub field: ConnectionField,
    pub omega: OmegaSamples,
}

pub fn fig4_loop(per_edge: usize, levels: usize) -> LoopFixture {
    let model = PotentialModel::structured_well();
    let rect = Rectangle {
        l_in: 0.3,
        l_fin: 0.5,
        w_in: 0.0,
        w_fin: 0.02,
    };
    let path = build_path(&PathSpec::Rectangle { rect, per_edge })
        .and_then(|p| p.map_to_span(0.0, 100.0))
        .expect("fixed rectangle is valid");
    let cfg = SolverConfig {
        levels,
        ..SolverConfig::default()
    };
    let spectra = solve_along_path(&model, &path, &cfg).expect("spectra");
    let field = ConnectionField::hellmann_feynman(&model, &path, &spectra).expect("field");
    let omega = assemble_omega(&path, &spectra).expect("omega");
    LoopFixture {
        model,
        path,
        field,
        omega,
    }
}
