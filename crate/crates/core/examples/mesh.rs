//! Builds the disk meshes and prints sizes, measures and the first surface
//! eigenvalue against the exact value on a circle of the same perimeter.
//!
//! `cargo run --release --example mesh -- [max_level]`

use bscahn::{assemble_fem, build_disk_mesh};

fn main() -> bscahn::Result<()> {
    let top: usize = std::env::args().nth(1).map_or(4, |s| s.parse().unwrap());
    println!(
        "{:>5} {:>7} {:>7} {:>9} {:>10} {:>10} {:>12}",
        "level", "bulk", "surf", "h", "|Omega|", "|Gamma|", "lambda1_rel"
    );
    for level in 0..=top {
        let mesh = build_disk_mesh(level)?;
        let fem = assemble_fem(&mesh)?;
        let u = fem.interpolate_surf(|x, _| x);
        let lambda = fem.a_surf.bilinear(&u, &u) / fem.m_surf.bilinear(&u, &u);
        let exact = (2.0 * std::f64::consts::PI / fem.perimeter).powi(2);
        println!(
            "{level:>5} {:>7} {:>7} {:>9.5} {:>10.6} {:>10.6} {:>12.3e}",
            mesh.n_bulk(),
            mesh.n_surf(),
            mesh.mesh_size(),
            fem.area,
            fem.perimeter,
            (lambda - exact) / exact
        );
    }
    Ok(())
}
