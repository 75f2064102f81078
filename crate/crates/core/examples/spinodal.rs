//! Spinodal decomposition from small random noise on the unit disk.
//!
//! `cargo run --release --example spinodal -- [level] [steps] [dt] [theta0] [K] [L]`

use std::time::Instant;

use bscahn::bsfield::{ExtReal, FieldPair, ModelParams};
use bscahn::evolution::{run, SchemeConfig};
use bscahn::physics::PotentialSpec;
use bscahn::{assemble_fem, build_disk_mesh};
use rand::{Rng, SeedableRng};

fn main() -> bscahn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let level: usize = arg(0, "3").parse().unwrap();
    let steps: usize = arg(1, "200").parse().unwrap();
    let dt: f64 = arg(2, "1e-3").parse().unwrap();
    let theta0: f64 = arg(3, "2").parse().unwrap();
    let k: ExtReal = arg(4, "1").parse().unwrap();
    let l: ExtReal = arg(5, "1").parse().unwrap();

    let mesh = build_disk_mesh(level)?;
    let fem = assemble_fem(&mesh)?;
    let mut params = ModelParams::with_kl(k, l);
    params.potential = PotentialSpec::flory_huggins(1.0, theta0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let bulk: Vec<f64> = (0..fem.n_bulk())
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    let surf: Vec<f64> = (0..fem.n_surf())
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    let init = FieldPair::new(bulk, surf);

    let cfg = SchemeConfig::with_dt(dt);
    let start = Instant::now();
    let traj = run(
        &init,
        dt * steps as f64,
        &cfg,
        &params,
        &mesh,
        &fem,
        &mut [],
    )?;
    let every = (steps / 10).max(1);
    println!(
        "{:>10} {:>14} {:>10} {:>12} {:>6}",
        "t", "E", "delta", "|phi|_max", "newton"
    );
    for (i, r) in traj.records.iter().enumerate() {
        if i % every == 0 || i + 1 == traj.records.len() {
            println!(
                "{:>10.4} {:>14.8} {:>10.6} {:>12.6} {:>6}",
                r.t,
                r.energy,
                r.delta,
                1.0 - r.delta,
                r.newton_iterations
            );
        }
    }
    println!("{} steps in {:.2?}", traj.steps, start.elapsed());
    Ok(())
}
