//! Runs a scenario from an inline TOML configuration and prints the summary.
//!
//! `cargo run --release --example scenario -- [out_dir]`

use bscahn::harness::{parse_config, run_scenario};

const SCENARIO: &str = r#"
experiment = "evolve"

[mesh]
level = 2

[model]
K = 1.0
L = "inf"

[potential]
theta0 = 6.0

[mobility.bulk]
kind = "polynomial"
coeffs = [1.0, 0.0, 0.5]

[initial]
generator = "random"
seed = 5
amplitude = 0.05
mean = 0.1

[run]
t_final = 0.5
snapshot_every = 100
"#;

fn main() -> bscahn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "scenario_out".into());
    let cfg = parse_config(SCENARIO)?;
    let outcome = run_scenario(&cfg, out.as_ref())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.summary["results"])?
    );
    println!("passed: {}", outcome.passed);
    Ok(())
}
