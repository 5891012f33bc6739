use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("x = {x} lies outside the well domain [0, {extent}]")]
    Domain { x: f64, extent: f64 },

    #[error("invalid input: {0}")]
    Validation(String),

    /// The grid cannot resolve the highest requested level.
    #[error(
        "grid too coarse: level {level} has {points_per_half_wave:.1} points per half-oscillation (need >= {required})"
    )]
    Resolution {
        level: usize,
        points_per_half_wave: f64,
        required: f64,
    },

    #[error("eigensolver did not converge for level {level}: relative residual {residual:.3e}")]
    Solver { level: usize, residual: f64 },

    #[error("levels {level} and {} are nearly degenerate (gap {gap:.3e})", level + 1)]
    NearDegenerate { level: usize, gap: f64 },

    #[error(
        "gauge tracking lost on level {level}: overlap {overlap:.4} with the reference (refine the path or reduce the step)"
    )]
    GaugeTracking { level: usize, overlap: f64 },

    #[error("segment {segment} has generator norm {norm:.3e} above {bound}; subdivide the path")]
    SubdivisionRequired {
        segment: usize,
        norm: f64,
        bound: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("integration step too large: sqrt(eps)*dy = {kdy:.3} exceeds {bound}")]
    StepSize { kdy: f64, bound: f64 },

    #[error("integration diverged at y = {y}")]
    Divergence { y: f64 },

    #[error("evanescent regime at y = {y}: eps - omega = {margin:.4e} <= 0")]
    Evanescent { y: f64, margin: f64 },
}
