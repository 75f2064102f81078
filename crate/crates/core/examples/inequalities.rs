//! Poincare constant and interpolation ratios across refinement levels.
//!
//! `cargo run --release --example inequalities`

use bscahn::diagnostics::{verify_interpolation, verify_poincare};
use bscahn::{assemble_fem, build_disk_mesh, ExtReal, ModelParams};

fn main() -> bscahn::Result<()> {
    let rs = [2.0, 4.0, 8.0];
    for k in [ExtReal::Finite(1.0), ExtReal::Finite(0.0)] {
        let params = ModelParams::with_kl(k, ExtReal::Finite(1.0));
        println!("K={k}");
        for level in 2..=5 {
            let mesh = build_disk_mesh(level)?;
            let fem = assemble_fem(&mesh)?;
            let p = verify_poincare(&mesh, &fem, &params)?;
            let i = verify_interpolation(&mesh, &fem, &rs, 20, 5)?;
            println!(
                "  level {level}: lambda1={:.6} C_P={:.6} ({} iterations) interpolation {:?}",
                p.lambda1, p.c_p, p.iterations, i.worst_ratio
            );
        }
    }
    Ok(())
}
