//! Legacy ASCII VTK writers and snapshot files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bsfield::FieldPair;
use crate::error::Result;
use crate::evolution::TimeState;
use crate::geometry::Mesh;

fn point_data<W: Write>(w: &mut W, n: usize, fields: &[(&str, &[f64])]) -> Result<()> {
    writeln!(w, "POINT_DATA {n}")?;
    for (name, values) in fields {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values.iter() {
            writeln!(w, "{v:.17e}")?;
        }
    }
    Ok(())
}

/// Triangle mesh (cell type 5) with nodal bulk fields.
pub fn write_vtk_bulk<W: Write>(
    mesh: &Mesh,
    title: &str,
    fields: &[(&str, &[f64])],
    mut w: W,
) -> Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_bulk())?;
    for p in &mesh.bulk_vertices {
        writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let nt = mesh.triangles.len();
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    point_data(&mut w, mesh.n_bulk(), fields)
}

/// Boundary curve as line cells (type 3) with nodal surface fields.
pub fn write_vtk_surface<W: Write>(
    mesh: &Mesh,
    title: &str,
    fields: &[(&str, &[f64])],
    mut w: W,
) -> Result<()> {
    let ns = mesh.n_surf();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {ns} double")?;
    for j in 0..ns {
        let p = mesh.surface_point(j);
        writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let ne = mesh.surface_edges.len();
    writeln!(w, "CELLS {ne} {}", 3 * ne)?;
    for e in &mesh.surface_edges {
        writeln!(w, "2 {} {}", e[0], e[1])?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "3")?;
    }
    point_data(&mut w, ns, fields)
}

/// CSV and VTK files of one state, named by the step index.
pub fn write_snapshot(dir: &Path, mesh: &Mesh, step: usize, state: &TimeState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let name = |what: &str, ext: &str| dir.join(format!("{what}_{step:06}.{ext}"));
    state
        .phase
        .write_csv(&name("phi", "csv"), &name("psi", "csv"))?;
    state
        .potential
        .write_csv(&name("mu", "csv"), &name("theta", "csv"))?;
    let title = format!("bscahn step {step} t={:.17e}", state.t);
    let FieldPair {
        bulk: phi,
        surf: psi,
    } = &state.phase;
    let FieldPair {
        bulk: mu,
        surf: theta,
    } = &state.potential;
    write_vtk_bulk(
        mesh,
        &title,
        &[("phi", phi), ("mu", mu)],
        BufWriter::new(File::create(name("bulk", "vtk"))?),
    )?;
    write_vtk_surface(
        mesh,
        &title,
        &[("psi", psi), ("theta", theta)],
        BufWriter::new(File::create(name("surface", "vtk"))?),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_disk_mesh;

    #[test]
    fn vtk_layout() {
        let mesh = build_disk_mesh(1).unwrap();
        let values: Vec<f64> = (0..mesh.n_bulk()).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_vtk_bulk(&mesh, "t", &[("phi", &values)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[4], format!("POINTS {} double", mesh.n_bulk()));
        let nt = mesh.triangles.len();
        assert!(text.contains(&format!("CELLS {nt} {}", 4 * nt)));
        let start = lines
            .iter()
            .position(|l| l.starts_with("CELL_TYPES"))
            .unwrap();
        assert!(lines[start + 1..=start + nt].iter().all(|l| *l == "5"));

        let s: Vec<f64> = vec![0.5; mesh.n_surf()];
        let mut buf = Vec::new();
        write_vtk_surface(&mesh, "t", &[("psi", &s)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(&format!("CELL_TYPES {}\n3\n", mesh.surface_edges.len())));
        assert!(text.contains(&format!("POINT_DATA {}", mesh.n_surf())));
    }
}
