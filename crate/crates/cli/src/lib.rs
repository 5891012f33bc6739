//! Scenario runner for the `geophase` command: config parsing, scenario
//! execution and artifact rendering.

pub mod config;
pub mod runner;
pub mod scenario;

pub use config::{ConfigError, ErrorKind, Location};
pub use runner::{run_scenario, Artifact, RunError, RunOutcome};
pub use scenario::{load_config, parse_config, Scenario, ScenarioKind};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    /// Output could not be written.
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    /// Validity flags were raised under `--strict`.
    pub const VALIDITY: i32 = 4;
}

/// Environment variable that overrides the output directory of the config.
pub const OUT_DIR_ENV: &str = "GEOPHASE_OUT_DIR";
