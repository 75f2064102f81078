//! Finite-element simulation of the bulk-surface Cahn–Hilliard system with
//! dynamic boundary conditions, concentration-dependent mobilities and
//! logarithmic potentials on the unit disk, together with the diagnostics
//! used to check its structural properties numerically.

pub mod bsfield;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod harness;
pub mod physics;
pub mod quadrature;
pub mod sparse;

pub use bsfield::{chi, ExtReal, FieldPair, FormSpec, MeanValue, ModelParams, Slot};
pub use error::{Error, Result};
pub use geometry::{assemble_fem, build_disk_mesh, FemMatrices, Mesh};
