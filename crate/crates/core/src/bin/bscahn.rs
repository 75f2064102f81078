use std::path::PathBuf;
use std::process::ExitCode;

use bscahn::harness::{parse_config_at, run_scenario, Experiment, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bscahn",
    version,
    about = "Bulk-surface Cahn-Hilliard simulator and verification suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time evolution with diagnostics and snapshots.
    Evolve(Common),
    /// Continuous-dependence experiment on a perturbed pair of data.
    Cdep(Common),
    /// Poincare, interpolation and norm-equivalence suite.
    Verify(Common),
    /// Manufactured-solution convergence study of the elliptic solver.
    Elliptic(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (flat TOML keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `initial.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `mesh.level`.
    #[arg(long)]
    level: Option<usize>,
}

fn load(common: &Common) -> bscahn::Result<ScenarioConfig> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| bscahn::Error::from(e).context(path.display().to_string()))?;
            parse_config_at(&text, path.parent())
        }
        None => parse_config_at("", None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BSCAHN_LOG", "warn")).init();
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Evolve(c) => (Experiment::Evolve, c),
        Command::Cdep(c) => (Experiment::ContinuousDependence, c),
        Command::Verify(c) => (Experiment::InequalitySuite, c),
        Command::Elliptic(c) => (Experiment::EllipticConvergence, c),
    };
    let result = load(common).and_then(|mut cfg| {
        cfg.experiment = experiment;
        if let Some(s) = common.seed {
            cfg.initial.seed = Some(s);
        }
        if let Some(l) = common.level {
            cfg.level = l;
        }
        run_scenario(&cfg, &common.out)
    });
    match result {
        Ok(outcome) if outcome.passed => {
            println!("ok: {}", common.out.join("summary.json").display());
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("FAILED: {f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
