//! Manufactured-solution study of the bulk-surface elliptic solver.
//!
//! `cargo run --release --example elliptic_convergence`

use bscahn::harness::elliptic_convergence;
use bscahn::physics::MobilitySpec;
use bscahn::{ExtReal, ModelParams};

fn main() -> bscahn::Result<()> {
    for l in [ExtReal::Finite(1.0), ExtReal::Infinite] {
        for variable in [false, true] {
            let mut p = ModelParams::with_kl(ExtReal::Infinite, l);
            if variable {
                p.mobility_bulk = MobilitySpec::polynomial(vec![1.0, 0.0, 0.5]);
                p.mobility_surf = p.mobility_bulk.clone();
            }
            let r = elliptic_convergence(&p, &[2, 3, 4, 5], 8)?;
            println!("L={l} variable mobility={variable}");
            for ((lv, h), e) in r.levels.iter().zip(&r.h).zip(&r.l2_errors) {
                println!("  level {lv}  h={h:.4}  L2 error={e:.4e}");
            }
            println!("  fitted order {:.3}", r.order);
        }
    }
    Ok(())
}
