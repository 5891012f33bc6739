//! Geometric phases and holonomies of a particle guided along `y` through a
//! slowly modulated transverse potential `V_y(x)`.
//!
//! The transverse problem is solved on a grid ([`spectrum`]), its Berry
//! connection is assembled over control space ([`connection`]), path-ordered
//! into a holonomy ([`holonomy`]) and checked against direct integration of
//! the coupled-mode equation ([`dynamics`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod connection;
pub mod dynamics;
pub mod error;
pub mod holonomy;
pub mod potential;
pub mod spectrum;

pub use connection::{
    connection_fd, connection_fd_richardson, connection_hf, gamma_identity, two_level_lambda,
    ConnectionField, ConnectionMethod, ConnectionSample, TwoLevelLambda,
};
pub use dynamics::{
    assemble_omega, fidelity, gauge_transform, integrate_coupled, predict_output,
    validity_report, wkb_propagator, DynamicsConfig, ModeState, OmegaSamples, PropagationResult,
    StepRule, ValidityReport,
};
pub use error::{Error, Result};
pub use holonomy::{
    abelian_phase_line, abelian_phase_stokes, compose, embed_two_level, ordered_exponential,
    CurvatureSample, Holonomy, HolonomyMethod, LambdaGrid,
};
pub use num_complex::Complex64;
pub use potential::{
    build_path, ControlPath, ControlVector, PathSample, PathSpec, PotentialModel, Rectangle,
    SpeedProfile,
};
pub use spectrum::{eigensolve, eigensolve_with, fix_gauge, overlap, SolverConfig, SpectralSolution};
