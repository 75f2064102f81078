//! Chain-rule identity for the dissipation with a variable mobility, and its
//! first-order decay under time-step halving.
//!
//! `cargo run --release --example chain_rule`

use bscahn::diagnostics::{chain_rule_residual, random_smooth_pair};
use bscahn::evolution::{run, SchemeConfig, TimeState};
use bscahn::physics::MobilitySpec;
use bscahn::{assemble_fem, build_disk_mesh, ExtReal, ModelParams};

fn main() -> bscahn::Result<()> {
    let mesh = build_disk_mesh(3)?;
    let fem = assemble_fem(&mesh)?;
    let mut params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
    params.mobility_bulk = MobilitySpec::polynomial(vec![1.0, 0.5]);
    params.mobility_surf = params.mobility_bulk.clone();
    let init = random_smooth_pair(&fem, 31, 0.4).map(|v| v + 0.05);
    let mut previous = None;
    for dt in [2e-3, 1e-3, 5e-4] {
        let traj = run(
            &init,
            0.1,
            &SchemeConfig::with_dt(dt),
            &params,
            &mesh,
            &fem,
            &mut [],
        )?;
        let window: Vec<TimeState> = traj
            .states
            .into_iter()
            .filter(|s| s.t >= 0.05 - 1e-12)
            .collect();
        let r = chain_rule_residual(&window, &params, &fem)?;
        let factor = previous.map_or(String::new(), |p: f64| {
            format!(" (factor {:.3})", p / r.normalized)
        });
        println!(
            "dt={dt:e}: normalized residual {:.4e}{factor}",
            r.normalized
        );
        previous = Some(r.normalized);
    }
    Ok(())
}
