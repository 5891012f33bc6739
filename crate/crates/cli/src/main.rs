use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geophase_cli::{exit, load_config, run_scenario, RunError, ScenarioKind, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "geophase", version, about = "Geometric phases of confined waves: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Exit with status 4 when validity flags are raised.
        #[arg(long)]
        strict: bool,
        /// Worker threads for grid scenarios (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Recorded in the report.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Parse and resolve a config, then print it with all defaults filled in.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::ListScenarios => {
            for k in ScenarioKind::ALL {
                println!("{:<16} {}", k.as_str(), k.describe());
            }
            exit::OK
        }
        Command::Validate { config } => validate(&config),
        Command::Run {
            config,
            out,
            strict,
            threads,
            seed,
        } => run(&config, out, strict, threads, seed),
    };
    ExitCode::from(code as u8)
}

fn validate(config: &Path) -> i32 {
    let sc = match load_config(config) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("{e}");
            return exit::CONFIG;
        }
    };
    if let Err(e) = geophase_cli::runner::resolve(&sc) {
        eprintln!("{e}");
        return exit::CONFIG;
    }
    print!("{}", sc.to_config_text());
    exit::OK
}

fn run(config: &Path, out: Option<PathBuf>, strict: bool, threads: Option<usize>, seed: Option<u64>) -> i32 {
    let sc = match load_config(config) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("{e}");
            return exit::CONFIG;
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return exit::CONFIG;
        }
    }
    let outcome = match run_scenario(&sc, seed) {
        Ok(o) => o,
        Err(e @ RunError::Config(_)) => {
            eprintln!("{e}");
            return exit::CONFIG;
        }
        Err(e @ RunError::Numerical(_)) => {
            eprintln!("{e}");
            return exit::NUMERICAL;
        }
    };
    let dir = out.unwrap_or_else(|| PathBuf::from(&sc.output.dir));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("cannot create {}: {e}", dir.display());
        return exit::IO;
    }
    for a in &outcome.artifacts {
        let path = dir.join(&a.file);
        if let Err(e) = std::fs::write(&path, &a.contents) {
            eprintln!("cannot write {}: {e}", path.display());
            return exit::IO;
        }
        println!("wrote {}", path.display());
    }
    for f in &outcome.flags {
        eprintln!("validity flag: {f}");
    }
    if strict && !outcome.flags.is_empty() {
        return exit::VALIDITY;
    }
    exit::OK
}
