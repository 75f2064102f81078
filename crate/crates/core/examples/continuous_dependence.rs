//! Two nearby solutions with the same masses: the squared distance in the
//! dual norm against the fitted growth bound.
//!
//! `cargo run --release --example continuous_dependence -- [t_final] [eps]`

use bscahn::diagnostics::continuous_dependence_experiment;
use bscahn::evolution::SchemeConfig;
use bscahn::harness::{generate_initial, mean_zero_perturbation, Generator, InitialSpec};
use bscahn::{assemble_fem, build_disk_mesh, ExtReal, ModelParams};

fn main() -> bscahn::Result<()> {
    let t_final: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().unwrap());
    let eps: f64 = std::env::args().nth(2).map_or(0.02, |s| s.parse().unwrap());
    let mesh = build_disk_mesh(3)?;
    let fem = assemble_fem(&mesh)?;
    let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
    let spec = InitialSpec {
        generator: Generator::Smooth,
        seed: Some(21),
        amplitude: 0.4,
        mean: 0.1,
    };
    let a = generate_initial(&spec, &params, &fem)?;
    let d = mean_zero_perturbation(&params, &fem, 22)?;
    let mut cfg = SchemeConfig::with_dt(1e-3);
    cfg.output_every = 50;
    for e in [eps, eps / 2.0] {
        let r = continuous_dependence_experiment(
            &a,
            &a.axpy(e, &d),
            t_final,
            &cfg,
            &params,
            &mesh,
            &fem,
        )?;
        println!(
            "eps={e}: fitted C={:.5}, max violation {:.2e}, y(T)^1/2={:.5e}",
            r.fitted_c, r.max_violation, r.y_final_sqrt
        );
        for (t, y) in r
            .times
            .iter()
            .zip(&r.y)
            .step_by((r.times.len() / 10).max(1))
        {
            println!("  t={t:.3}  y={y:.4e}");
        }
    }
    Ok(())
}
