//! Weighted bulk-surface elliptic operator, its mean-zero solution operator
//! and the induced dual norm.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use crate::bsfield::{form_matrix, FieldPair, FormSpec, ModelParams, Slot};
use crate::error::{Error, Result};
use crate::geometry::{FemMatrices, Mesh};
use crate::physics::MobilitySpec;
use crate::sparse::{dot, norm_inf, reduced_triplets, CsrMatrix, KernelSolver, Reduction};

const PHASE_CLAMP_SLACK: f64 = 1e-12;
const BOUND_TOL: f64 = 1e-12;

/// Sparse operator of a (possibly weighted) bulk-surface bilinear form on
/// `[bulk, surf]`, together with its constrained saddle-point factorization.
pub struct AssembledForm<'a> {
    pub fem: &'a FemMatrices,
    pub spec: FormSpec,
    pub matrix: CsrMatrix,
    pub bulk_weights: Vec<f64>,
    pub surf_weights: Vec<f64>,
    /// Hash of the phase pair the weights were evaluated at.
    pub snapshot_id: u64,
    beta: f64,
    reduction: Reduction,
    lu: OnceLock<std::result::Result<KernelSolver, String>>,
}

#[derive(Clone, Debug)]
pub struct EllipticSolution {
    pub pair: FieldPair,
    /// Max-norm of the reduced weak-form residual relative to the load.
    pub residual: f64,
    pub constraint_multiplier: Vec<f64>,
}

fn phase_hash(phase: &FieldPair) -> u64 {
    let mut h = DefaultHasher::new();
    for v in phase.bulk.iter().chain(&phase.surf) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn clamp_phase(values: &[f64], what: &str) -> Vec<f64> {
    let worst = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > 1.0 + PHASE_CLAMP_SLACK {
        log::warn!(
            "{what} phase reaches |s| = {worst}; clamping into [-1, 1] for mobility weights"
        );
    }
    values.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// Mobility values at the given element averages, checked against the declared bounds.
pub fn mobility_weights(mob: &MobilitySpec, averages: &[f64], what: &str) -> Result<Vec<f64>> {
    let w: Vec<f64> = averages.iter().map(|&s| mob.eval(s)).collect();
    let tol = BOUND_TOL * (1.0 + mob.big_m_star);
    if let Some((i, v)) = w
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= mob.m_star - tol && **v <= mob.big_m_star + tol))
    {
        return Err(Error::Assumption(format!(
            "{what} mobility {v} at element {i} violates [{}, {}]",
            mob.m_star, mob.big_m_star
        )));
    }
    Ok(w)
}

/// Weighted form at the phase `(φ, ψ)`: mobilities for the `L` slot, unit
/// weights for the `K` slot.
pub fn assemble_weighted_form<'a>(
    mesh: &Mesh,
    fem: &'a FemMatrices,
    phase: &FieldPair,
    params: &ModelParams,
    slot: Slot,
) -> Result<AssembledForm<'a>> {
    if mesh.n_bulk() != fem.n_bulk() || mesh.n_surf() != fem.n_surf() {
        return Err(Error::ShapeMismatch {
            expected: format!("mesh with ({}, {}) nodes", fem.n_bulk(), fem.n_surf()),
            got: format!("({}, {})", mesh.n_bulk(), mesh.n_surf()),
        });
    }
    phase.check(fem)?;
    let (wb, ws) = match slot {
        Slot::K => (vec![1.0; fem.n_triangles()], vec![1.0; fem.n_edges()]),
        Slot::L => {
            let pb = clamp_phase(&phase.bulk, "bulk");
            let ps = clamp_phase(&phase.surf, "surface");
            (
                mobility_weights(&params.mobility_bulk, &fem.triangle_means(&pb), "bulk")?,
                mobility_weights(&params.mobility_surf, &fem.edge_means(&ps), "surface")?,
            )
        }
    };
    let mut form = AssembledForm::from_weights(fem, params.form_spec(slot), params.beta, wb, ws)?;
    form.snapshot_id = phase_hash(phase);
    Ok(form)
}

/// Unit-weight form of the given slot.
pub fn assemble_constant_form<'a>(
    fem: &'a FemMatrices,
    params: &ModelParams,
    slot: Slot,
) -> Result<AssembledForm<'a>> {
    AssembledForm::from_weights(
        fem,
        params.form_spec(slot),
        params.beta,
        vec![1.0; fem.n_triangles()],
        vec![1.0; fem.n_edges()],
    )
}

impl<'a> AssembledForm<'a> {
    /// Form with explicit per-triangle and per-edge weights. `beta` fixes the
    /// scalar mean used as the solvability constraint.
    pub fn from_weights(
        fem: &'a FemMatrices,
        spec: FormSpec,
        beta: f64,
        bulk_weights: Vec<f64>,
        surf_weights: Vec<f64>,
    ) -> Result<Self> {
        if bulk_weights.len() != fem.n_triangles() || surf_weights.len() != fem.n_edges() {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {}) weights", fem.n_triangles(), fem.n_edges()),
                got: format!("({}, {})", bulk_weights.len(), surf_weights.len()),
            });
        }
        crate::bsfield::chi(spec.chi_param)?;
        let matrix = form_matrix(fem, &spec, Some(&bulk_weights), Some(&surf_weights));
        Ok(Self {
            fem,
            spec,
            matrix,
            bulk_weights,
            surf_weights,
            snapshot_id: 0,
            beta,
            reduction: spec.reduction(fem),
            lu: OnceLock::new(),
        })
    }

    pub fn value(&self, p: &FieldPair, q: &FieldPair) -> f64 {
        self.matrix.bilinear(&p.to_vec(), &q.to_vec())
    }

    pub fn norm_sq(&self, p: &FieldPair) -> f64 {
        let v = p.to_vec();
        self.matrix.bilinear(&v, &v)
    }

    pub fn reduction(&self) -> &Reduction {
        &self.reduction
    }

    /// Constraint functionals on the full vector: componentwise masses when
    /// the coupling slot is decoupled (`∞`), otherwise the single `(β, 1)`
    /// mass.
    pub fn constraints(&self) -> Vec<Vec<f64>> {
        let fem = self.fem;
        let nb = fem.n_bulk();
        let n = nb + fem.n_surf();
        if self.spec.chi_param.is_infinite() {
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            a[..nb].copy_from_slice(&fem.lumped_bulk);
            b[nb..].copy_from_slice(&fem.lumped_surf);
            vec![a, b]
        } else {
            let mut a = Vec::with_capacity(n);
            a.extend(fem.lumped_bulk.iter().map(|m| self.beta * m));
            a.extend_from_slice(&fem.lumped_surf);
            vec![a]
        }
    }

    /// Normalized means of `p` along the constraint directions.
    pub fn means(&self, p: &FieldPair) -> Vec<f64> {
        let v = p.to_vec();
        let fem = self.fem;
        if self.spec.chi_param.is_infinite() {
            let (ib, is) = p.integrals(fem);
            vec![ib / fem.area, is / fem.perimeter]
        } else {
            let c = &self.constraints()[0];
            vec![dot(c, &v) / (self.beta * self.beta * fem.area + fem.perimeter)]
        }
    }

    /// Subtracts the constraint means along `(1,0)/(0,1)` or `(β,1)`.
    pub fn project(&self, p: &FieldPair) -> FieldPair {
        let m = self.means(p);
        if m.len() == 2 {
            FieldPair {
                bulk: p.bulk.iter().map(|v| v - m[0]).collect(),
                surf: p.surf.iter().map(|v| v - m[1]).collect(),
            }
        } else {
            crate::bsfield::project_scalar_mean(p, m[0], self.beta)
        }
    }

    /// Kernel of the form in full coordinates.
    fn kernel(&self) -> Vec<Vec<f64>> {
        let (nb, ns) = (self.fem.n_bulk(), self.fem.n_surf());
        if self.spec.chi_param.is_infinite() {
            vec![
                [vec![1.0; nb], vec![0.0; ns]].concat(),
                [vec![0.0; nb], vec![1.0; ns]].concat(),
            ]
        } else {
            vec![[vec![self.spec.coupling; nb], vec![1.0; ns]].concat()]
        }
    }

    fn factorization(&self) -> Result<&KernelSolver> {
        let lu = self.lu.get_or_init(|| {
            let red = &self.reduction;
            let nr = red.n_reduced();
            let cons: Vec<Vec<f64>> = self.constraints().iter().map(|c| red.restrict(c)).collect();
            let kernel: Vec<Vec<f64>> = self.kernel().iter().map(|z| red.sample(z)).collect();
            let mut t = Vec::with_capacity(self.matrix.nnz());
            reduced_triplets(&self.matrix, red, red, 1.0, 0, 0, &mut t);
            KernelSolver::new(nr, &t, kernel, cons).map_err(|e| e.to_string())
        });
        lu.as_ref().map_err(|e| Error::Solver(e.clone()))
    }

    /// Solves the form against the L² load of `rhs` in the constrained,
    /// mean-zero space.
    pub fn solve(&self, rhs: &FieldPair) -> Result<EllipticSolution> {
        let fem = self.fem;
        rhs.check(fem)?;
        let scale = 1f64.max(rhs.max_abs());
        let means = self.means(rhs);
        if let Some(m) = means.iter().find(|m| m.abs() > 1e-10 * scale) {
            return Err(Error::Compatibility { mean: *m });
        }
        let rhs = if means.iter().any(|m| *m != 0.0) {
            self.project(rhs)
        } else {
            rhs.clone()
        };
        let load = FieldPair {
            bulk: fem.m_bulk.mul_vec(&rhs.bulk),
            surf: fem.m_surf.mul_vec(&rhs.surf),
        }
        .to_vec();
        let red = &self.reduction;
        let nr = red.n_reduced();
        let reduced_load = red.restrict(&load);
        let (y, multipliers) = self.factorization()?.solve(&reduced_load)?;

        let full = red.expand(&y);
        let applied = red.restrict(&self.matrix.mul_vec(&full));
        let cons: Vec<Vec<f64>> = self.constraints().iter().map(|c| red.restrict(c)).collect();
        let mut res = 0.0f64;
        for i in 0..nr {
            let mut r = applied[i] - reduced_load[i];
            for (k, c) in cons.iter().enumerate() {
                r += c[i] * multipliers[k];
            }
            res = res.max(r.abs());
        }
        let residual = res / norm_inf(&reduced_load).max(1e-300);
        let pair = FieldPair::from_slice(&full, fem.n_bulk());
        Ok(EllipticSolution {
            pair,
            residual: if norm_inf(&reduced_load) == 0.0 {
                0.0
            } else {
                residual
            },
            constraint_multiplier: multipliers,
        })
    }

    /// `sqrt(⟨rhs, S(rhs)⟩)`.
    pub fn dual_norm(&self, rhs: &FieldPair) -> Result<f64> {
        let sol = self.solve(rhs)?;
        let rhs = self.project(rhs);
        Ok(rhs.l2_inner(&sol.pair, self.fem).max(0.0).sqrt())
    }
}

/// `S_L[φ,ψ](rhs)`; `params` must match the form's coupling slot.
pub fn solve_sl(
    form: &AssembledForm<'_>,
    rhs: &FieldPair,
    params: &ModelParams,
) -> Result<EllipticSolution> {
    check_params(form, params)?;
    form.solve(rhs)
}

pub fn dual_norm(rhs: &FieldPair, form: &AssembledForm<'_>, params: &ModelParams) -> Result<f64> {
    check_params(form, params)?;
    form.dual_norm(rhs)
}

fn check_params(form: &AssembledForm<'_>, params: &ModelParams) -> Result<()> {
    let expected = params.form_spec(form.spec.slot);
    if expected != form.spec || params.beta != form.beta {
        return Err(Error::Misuse(
            "model parameters do not match the assembled form".into(),
        ));
    }
    Ok(())
}

/// Sandwich constants `(lower, upper)` for the squared weighted norm relative
/// to the unit-weight norm: `lower·q₁ ≤ q_w ≤ upper·q₁`.
pub fn norm_equivalence_constants(m_star: f64, big_m_star: f64) -> (f64, f64) {
    (m_star.min(1.0), big_m_star.max(1.0))
}
