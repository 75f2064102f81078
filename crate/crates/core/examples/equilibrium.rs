//! Long run towards a stationary state and comparison of the limiting
//! chemical potentials with their prediction from the final phase.
//!
//! `cargo run --release --example equilibrium -- [t_final]`

use bscahn::diagnostics::stationarity_report;
use bscahn::evolution::{run, SchemeConfig};
use bscahn::harness::{generate_initial, Generator, InitialSpec};
use bscahn::{assemble_fem, build_disk_mesh, ExtReal, ModelParams};

fn main() -> bscahn::Result<()> {
    let t_final: f64 = std::env::args().nth(1).map_or(50.0, |s| s.parse().unwrap());
    let mesh = build_disk_mesh(3)?;
    let fem = assemble_fem(&mesh)?;
    let mut params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
    params.alpha = 0.5;
    params.beta = 2.0;
    let spec = InitialSpec {
        generator: Generator::Smooth,
        seed: Some(8),
        amplitude: 0.3,
        mean: 0.2,
    };
    let mut phase = generate_initial(&spec, &params, &fem)?;
    let mut t = 0.0;
    let mut dt = 0.01;
    while t < t_final - 1e-12 {
        let span = (10.0 * t).max(10.0).min(t_final - t);
        let mut cfg = SchemeConfig::with_dt(dt);
        cfg.output_every = usize::MAX;
        let traj = run(&phase, span, &cfg, &params, &mesh, &fem, &mut [])?;
        let last = traj.last();
        t += span;
        phase = last.phase.clone();
        let r = stationarity_report(last, &params, &fem)?;
        println!(
            "t={t:>8.2} dt={dt:<5} stdev mu={:.3e} theta={:.3e} |beta theta - mu|={:.3e} theta={:.8} predicted={:.8}",
            r.stdev_mu, r.stdev_theta, r.beta_theta_minus_mu, r.mean_theta, r.predicted_theta
        );
        dt = (dt * 5.0).min(0.25);
    }
    Ok(())
}
