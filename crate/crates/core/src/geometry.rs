//! Disk triangulation, its boundary loop, and the P1 mass/stiffness matrices.
//!
//! The mesh is built from concentric rings: ring `j` of `k` carries `6j`
//! vertices equally spaced on the circle of radius `j/k`, so the outer ring
//! lies exactly on the unit circle and the discrete domain is the inscribed
//! regular `6k`-gon. Level 0 is the hexagon with its center (`k = 1`); level
//! `l >= 1` uses `k = 2^(l+1)`, so the mesh size halves with every level
//! after the first.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_MAX_LEVEL: usize = 8;
const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// Number of boundary segments per hexagon side at a refinement level.
pub fn ring_count(level: usize) -> usize {
    if level == 0 {
        1
    } else {
        1usize << (level + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub bulk_vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Boundary loop in counter-clockwise order, as bulk vertex indices.
    pub surface_vertices: Vec<usize>,
    /// Consecutive pairs of surface-node indices `(j, j + 1 mod n)`.
    pub surface_edges: Vec<[usize; 2]>,
    pub level: Option<usize>,
}

/// The disk mesh at `refinement_level`, capped at [`DEFAULT_MAX_LEVEL`].
pub fn build_disk_mesh(refinement_level: usize) -> Result<Mesh> {
    build_disk_mesh_capped(refinement_level, DEFAULT_MAX_LEVEL)
}

pub fn build_disk_mesh_capped(refinement_level: usize, max_level: usize) -> Result<Mesh> {
    if refinement_level > max_level {
        return Err(Error::ResourceLimit {
            level: refinement_level,
            max: max_level,
        });
    }
    let k = ring_count(refinement_level);
    let ring_start = |j: usize| if j == 0 { 0 } else { 1 + 3 * j * (j - 1) };
    let vertex = |j: usize, i: usize| {
        if j == 0 {
            0
        } else {
            ring_start(j) + i % (6 * j)
        }
    };

    let mut bulk_vertices = Vec::with_capacity(ring_start(k + 1));
    bulk_vertices.push([0.0, 0.0]);
    for j in 1..=k {
        let r = j as f64 / k as f64;
        let n = 6 * j;
        for i in 0..n {
            let a = 2.0 * PI * i as f64 / n as f64;
            if j == k {
                bulk_vertices.push([a.cos(), a.sin()]);
            } else {
                bulk_vertices.push([r * a.cos(), r * a.sin()]);
            }
        }
    }

    let mut triangles = Vec::with_capacity(6 * k * k);
    for j in 1..=k {
        for s in 0..6 {
            for t in 0..j {
                triangles.push([
                    vertex(j - 1, s * (j - 1) + t),
                    vertex(j, s * j + t),
                    vertex(j, s * j + t + 1),
                ]);
            }
            for t in 0..j.saturating_sub(1) {
                triangles.push([
                    vertex(j - 1, s * (j - 1) + t),
                    vertex(j, s * j + t + 1),
                    vertex(j - 1, s * (j - 1) + t + 1),
                ]);
            }
        }
    }

    let nb = 6 * k;
    let surface_vertices: Vec<usize> = (0..nb).map(|i| ring_start(k) + i).collect();
    let surface_edges = (0..nb).map(|i| [i, (i + 1) % nb]).collect();
    let mesh = Mesh {
        bulk_vertices,
        triangles,
        surface_vertices,
        surface_edges,
        level: Some(refinement_level),
    };
    mesh.validate()?;
    Ok(mesh)
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn n_bulk(&self) -> usize {
        self.bulk_vertices.len()
    }

    pub fn n_surf(&self) -> usize {
        self.surface_vertices.len()
    }

    /// Surface node → bulk node.
    pub fn trace_map(&self) -> &[usize] {
        &self.surface_vertices
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(
            self.bulk_vertices[a],
            self.bulk_vertices[b],
            self.bulk_vertices[c],
        )
    }

    pub fn surface_point(&self, j: usize) -> [f64; 2] {
        self.bulk_vertices[self.surface_vertices[j]]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.surface_edges[e];
        let (p, q) = (self.surface_point(a), self.surface_point(b));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Largest triangle edge length.
    pub fn mesh_size(&self) -> f64 {
        let d = |a: usize, b: usize| {
            let (p, q) = (self.bulk_vertices[a], self.bulk_vertices[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        self.triangles
            .iter()
            .map(|&[a, b, c]| d(a, b).max(d(b, c)).max(d(c, a)))
            .fold(0.0, f64::max)
    }

    /// Checks orientation, the boundary loop, and the trace map.
    pub fn validate(&self) -> Result<()> {
        let nv = self.n_bulk();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area"
                )));
            }
        }
        let ns = self.n_surf();
        if ns < 3 {
            return Err(Error::InvalidMesh(
                "boundary loop needs at least 3 vertices".into(),
            ));
        }
        if self.surface_edges.len() != ns {
            return Err(Error::InvalidMesh("boundary loop is not closed".into()));
        }
        for (e, edge) in self.surface_edges.iter().enumerate() {
            if *edge != [e, (e + 1) % ns] {
                return Err(Error::InvalidMesh(format!(
                    "surface edge {e} is not consecutive"
                )));
            }
        }
        let mut seen = vec![false; nv];
        for &v in &self.surface_vertices {
            if v >= nv || seen[v] {
                return Err(Error::InvalidMesh("trace map is not injective".into()));
            }
            seen[v] = true;
        }

        // Edges used by exactly one triangle form the topological boundary.
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        let mut boundary = Vec::new();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            match j - i {
                1 => boundary.push(edges[i]),
                2 => {}
                _ => return Err(Error::InvalidMesh("non-manifold edge".into())),
            }
            i = j;
        }
        let mut loop_edges: Vec<(usize, usize)> = self
            .surface_edges
            .iter()
            .map(|&[a, b]| {
                let (u, v) = (self.surface_vertices[a], self.surface_vertices[b]);
                (u.min(v), u.max(v))
            })
            .collect();
        loop_edges.sort_unstable();
        if loop_edges != boundary {
            return Err(Error::InvalidMesh(
                "boundary loop does not match the triangulation boundary".into(),
            ));
        }
        Ok(())
    }

    /// Plain-text serialization (`bscahn-mesh v1`).
    pub fn to_text(&self) -> String {
        let mut s = String::from("bscahn-mesh v1\n");
        let _ = writeln!(s, "{}", self.n_bulk());
        for p in &self.bulk_vertices {
            let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
        }
        let _ = writeln!(s, "{}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "{}", self.n_surf());
        for v in &self.surface_vertices {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("mesh file truncated before {what}")))
        };
        if next("header")? != "bscahn-mesh v1" {
            return Err(Error::Parse("missing `bscahn-mesh v1` header".into()));
        }
        let count = |l: &str, what: &str| {
            l.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad {what} count `{l}`")))
        };
        let nv = count(next("vertex count")?, "vertex")?;
        let mut bulk_vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let l = next("coordinates")?;
            let xy: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad coordinate line `{l}`")))?;
            if xy.len() != 2 {
                return Err(Error::Parse(format!("expected 2 coordinates in `{l}`")));
            }
            bulk_vertices.push([xy[0], xy[1]]);
        }
        let nt = count(next("triangle count")?, "triangle")?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = next("triangles")?;
            let ids: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad triangle line `{l}`")))?;
            if ids.len() != 3 {
                return Err(Error::Parse(format!("expected 3 indices in `{l}`")));
            }
            triangles.push([ids[0], ids[1], ids[2]]);
        }
        let ns = count(next("boundary count")?, "boundary")?;
        let mut surface_vertices = Vec::with_capacity(ns);
        for _ in 0..ns {
            let l = next("boundary loop")?;
            surface_vertices.push(
                l.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad boundary index `{l}`")))?,
            );
        }
        let surface_edges = (0..ns).map(|i| [i, (i + 1) % ns]).collect();
        let mesh = Mesh {
            bulk_vertices,
            triangles,
            surface_vertices,
            surface_edges,
            level: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MassKind {
    #[default]
    Consistent,
    Lumped,
}

/// Element-level data and global P1 matrices on a fixed mesh. Immutable.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    pub m_bulk: CsrMatrix,
    pub a_bulk: CsrMatrix,
    pub m_surf: CsrMatrix,
    pub a_surf: CsrMatrix,
    /// Row sums of the consistent mass matrices: nodal quadrature weights.
    pub lumped_bulk: Vec<f64>,
    pub lumped_surf: Vec<f64>,
    pub area: f64,
    pub perimeter: f64,
    pub trace: Vec<usize>,
    pub mass_kind: MassKind,
    pub(crate) triangles: Vec<[usize; 3]>,
    pub(crate) tri_area: Vec<f64>,
    pub(crate) tri_stiffness: Vec<[[f64; 3]; 3]>,
    pub(crate) tri_positions: Vec<[usize; 9]>,
    pub(crate) edge_len: Vec<f64>,
    pub(crate) edges: Vec<[usize; 2]>,
    pub(crate) edge_positions: Vec<[usize; 4]>,
    pub(crate) bulk_points: Vec<[f64; 2]>,
}

pub fn assemble_fem(mesh: &Mesh) -> Result<FemMatrices> {
    assemble_fem_with(mesh, MassKind::Consistent)
}

pub fn assemble_fem_with(mesh: &Mesh, mass_kind: MassKind) -> Result<FemMatrices> {
    let nb = mesh.n_bulk();
    let ns = mesh.n_surf();
    let nt = mesh.triangles.len();

    let mut tri_area = Vec::with_capacity(nt);
    let mut tri_stiffness = Vec::with_capacity(nt);
    let mut mass_t = Vec::with_capacity(9 * nt);
    let mut stiff_t = Vec::with_capacity(9 * nt);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        if area < MIN_TRIANGLE_AREA {
            return Err(Error::MeshQuality(format!(
                "triangle {t} has area {area:e} below {MIN_TRIANGLE_AREA:e}"
            )));
        }
        let p = tri.map(|v| mesh.bulk_vertices[v]);
        // Gradient of barycentric coordinate i is (b_i, c_i) / (2 area).
        let mut b = [0.0; 3];
        let mut c = [0.0; 3];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            b[i] = p[j][1] - p[k][1];
            c[i] = p[k][0] - p[j][0];
        }
        let mut ke = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                ke[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                stiff_t.push((tri[i], tri[j], ke[i][j]));
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                mass_t.push((tri[i], tri[j], m));
            }
        }
        tri_area.push(area);
        tri_stiffness.push(ke);
    }
    let a_bulk = CsrMatrix::from_triplets(nb, nb, stiff_t);
    let m_bulk_consistent = CsrMatrix::from_triplets(nb, nb, mass_t);

    let mut edge_len = Vec::with_capacity(ns);
    let mut sm = Vec::with_capacity(4 * ns);
    let mut sa = Vec::with_capacity(4 * ns);
    for (e, &[a, b]) in mesh.surface_edges.iter().enumerate() {
        let l = mesh.edge_length(e);
        if l < 1e-14 {
            return Err(Error::MeshQuality(format!(
                "surface edge {e} has length {l:e}"
            )));
        }
        edge_len.push(l);
        for (i, j, m, k) in [
            (a, a, l / 3.0, 1.0 / l),
            (b, b, l / 3.0, 1.0 / l),
            (a, b, l / 6.0, -1.0 / l),
            (b, a, l / 6.0, -1.0 / l),
        ] {
            sm.push((i, j, m));
            sa.push((i, j, k));
        }
    }
    let a_surf = CsrMatrix::from_triplets(ns, ns, sa);
    let m_surf_consistent = CsrMatrix::from_triplets(ns, ns, sm);

    let lumped_bulk = m_bulk_consistent.row_sums();
    let lumped_surf = m_surf_consistent.row_sums();
    let (m_bulk, m_surf) = match mass_kind {
        MassKind::Consistent => (m_bulk_consistent, m_surf_consistent),
        MassKind::Lumped => (
            CsrMatrix::diagonal(&lumped_bulk),
            CsrMatrix::diagonal(&lumped_surf),
        ),
    };

    let tri_positions = mesh
        .triangles
        .iter()
        .map(|tri| {
            let mut pos = [0usize; 9];
            for i in 0..3 {
                for j in 0..3 {
                    pos[3 * i + j] = a_bulk.position(tri[i], tri[j]).expect("stiffness pattern");
                }
            }
            pos
        })
        .collect();
    let edge_positions = mesh
        .surface_edges
        .iter()
        .map(|&[a, b]| {
            [
                a_surf.position(a, a).unwrap(),
                a_surf.position(a, b).unwrap(),
                a_surf.position(b, a).unwrap(),
                a_surf.position(b, b).unwrap(),
            ]
        })
        .collect();

    Ok(FemMatrices {
        area: tri_area.iter().sum(),
        perimeter: edge_len.iter().sum(),
        m_bulk,
        a_bulk,
        m_surf,
        a_surf,
        lumped_bulk,
        lumped_surf,
        trace: mesh.surface_vertices.clone(),
        mass_kind,
        triangles: mesh.triangles.clone(),
        tri_area,
        tri_stiffness,
        tri_positions,
        edge_len,
        edges: mesh.surface_edges.clone(),
        edge_positions,
        bulk_points: mesh.bulk_vertices.clone(),
    })
}

impl FemMatrices {
    pub fn n_bulk(&self) -> usize {
        self.lumped_bulk.len()
    }

    pub fn n_surf(&self) -> usize {
        self.lumped_surf.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Bulk stiffness with one weight per triangle.
    pub fn weighted_bulk_stiffness(&self, weights: &[f64]) -> CsrMatrix {
        assert_eq!(weights.len(), self.n_triangles());
        let mut a = self.a_bulk.clone();
        let vals = a.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for ((ke, pos), w) in self
            .tri_stiffness
            .iter()
            .zip(&self.tri_positions)
            .zip(weights)
        {
            for i in 0..3 {
                for j in 0..3 {
                    vals[pos[3 * i + j]] += w * ke[i][j];
                }
            }
        }
        a
    }

    /// Surface stiffness with one weight per boundary edge.
    pub fn weighted_surf_stiffness(&self, weights: &[f64]) -> CsrMatrix {
        assert_eq!(weights.len(), self.n_edges());
        let mut a = self.a_surf.clone();
        let vals = a.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for ((l, pos), w) in self.edge_len.iter().zip(&self.edge_positions).zip(weights) {
            let k = w / l;
            vals[pos[0]] += k;
            vals[pos[1]] -= k;
            vals[pos[2]] -= k;
            vals[pos[3]] += k;
        }
        a
    }

    /// Element averages of nodal bulk values (the midpoint value of the P1 field).
    pub fn triangle_means(&self, bulk: &[f64]) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|&[a, b, c]| (bulk[a] + bulk[b] + bulk[c]) / 3.0)
            .collect()
    }

    pub fn edge_means(&self, surf: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&[a, b]| 0.5 * (surf[a] + surf[b]))
            .collect()
    }

    /// Squared gradient magnitude of a P1 bulk field on each triangle.
    pub fn triangle_grad_sq(&self, bulk: &[f64]) -> Vec<f64> {
        self.triangles
            .iter()
            .zip(&self.tri_stiffness)
            .zip(&self.tri_area)
            .map(|((tri, ke), area)| {
                let u = tri.map(|v| bulk[v]);
                let mut q = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        q += u[i] * ke[i][j] * u[j];
                    }
                }
                q / area
            })
            .collect()
    }

    pub fn edge_grad_sq(&self, surf: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .zip(&self.edge_len)
            .map(|(&[a, b], l)| ((surf[b] - surf[a]) / l).powi(2))
            .collect()
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.tri_area
    }

    pub fn edge_lengths(&self) -> &[f64] {
        &self.edge_len
    }

    pub fn bulk_points(&self) -> &[[f64; 2]] {
        &self.bulk_points
    }

    pub fn surf_point(&self, j: usize) -> [f64; 2] {
        self.bulk_points[self.trace[j]]
    }

    /// Samples `f` at bulk nodes.
    pub fn interpolate_bulk(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.bulk_points.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Samples `f` at surface nodes.
    pub fn interpolate_surf(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.trace
            .iter()
            .map(|&v| {
                let p = self.bulk_points[v];
                f(p[0], p[1])
            })
            .collect()
    }
}
