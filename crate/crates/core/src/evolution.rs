//! Convex-splitting time stepper for the bulk-surface Cahn–Hilliard system.
//!
//! One step of size `h` solves, for the phase `X` and chemical potential `W`
//! (both `[bulk, surf]`),
//!
//! ```text
//! M (X − Xⁿ) + h B_L(Xⁿ) W = 0
//! A_K X + Λ F₁'(X) + Λ F₂'(Xⁿ) − M W = 0
//! ```
//!
//! tested against the admissible spaces of the `L` and `K` slots. `B_L` is
//! the mobility-weighted `L` form frozen at `Xⁿ`, `A_K` the unit `K` form, `M`
//! the mass matrices and `Λ` their row sums. The first equation is linear, so
//! the conserved masses are preserved to round-off; the convex/concave split
//! makes the discrete energy non-increasing for every `h`.

use std::ops::ControlFlow;

use serde::Serialize;

use crate::bsfield::{chi, form_matrix, generalized_mean, FieldPair, MeanValue, ModelParams, Slot};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::elliptic::mobility_weights;
use crate::error::{Error, Result};
use crate::geometry::{FemMatrices, Mesh};
use crate::physics::Side;
use crate::sparse::{norm_inf, reduced_triplets, CsrMatrix, Reduction, SparseLu, SymbolicCache};

#[derive(Clone, Debug, Serialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub clip_margin: f64,
    /// Number of step halvings allowed after a Newton failure.
    pub max_retries: usize,
    /// Keep every `output_every`-th state in the trajectory.
    pub output_every: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton_tol: 1e-10,
            newton_max: 50,
            clip_margin: 1e-9,
            max_retries: 5,
            output_every: 1,
        }
    }
}

impl SchemeConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.clip_margin > 0.0 && self.clip_margin < 1e-3) {
            return Err(Error::InvalidParameter(format!(
                "clip_margin = {} must lie in (0, 1e-3)",
                self.clip_margin
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 || self.output_every == 0 {
            return Err(Error::InvalidParameter(
                "newton_tol, newton_max and output_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub residual: f64,
    /// Substeps used (a power of two after retries).
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeState {
    pub t: f64,
    pub phase: FieldPair,
    pub potential: FieldPair,
    pub stats: StepStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct InitialReport {
    pub sup_bulk: f64,
    pub sup_surf: f64,
    pub mean: MeanValue,
    pub energy: Option<f64>,
    pub failures: Vec<String>,
}

impl InitialReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Admissibility of an initial datum: sup bounds, strict mean bounds and a
/// finite energy.
pub fn check_initial_datum(
    p: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<InitialReport> {
    p.check(fem)?;
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (sup_bulk, sup_surf) = (sup(&p.bulk), sup(&p.surf));
    let mut failures = Vec::new();
    if sup_bulk > 1.0 {
        failures.push(format!("sup |phi0| = {sup_bulk} exceeds 1"));
    }
    if sup_surf > 1.0 {
        failures.push(format!("sup |psi0| = {sup_surf} exceeds 1"));
    }
    let mean = generalized_mean(p, params, fem)?;
    match mean {
        MeanValue::Scalar(m) => {
            if !(params.beta * m).abs().lt(&1.0) || !(m.abs() < 1.0) {
                failures.push(format!(
                    "mean {m} (beta*mean {}) not inside (-1, 1)",
                    params.beta * m
                ));
            }
        }
        MeanValue::Pair(a, b) => {
            if !(a.abs() < 1.0 && b.abs() < 1.0) {
                failures.push(format!("component means ({a}, {b}) not inside (-1, 1)"));
            }
        }
    }
    let energy = match diagnostics::energy(p, params, fem) {
        Ok(e) if e.is_finite() => Some(e),
        Ok(e) => {
            failures.push(format!("energy {e} is not finite"));
            None
        }
        Err(e) => {
            failures.push(format!("energy: {e}"));
            None
        }
    };
    if sup_bulk >= 1.0 || sup_surf >= 1.0 {
        failures.push("nodal values at +-1 make the potential derivative unbounded".into());
    }
    Ok(InitialReport {
        sup_bulk,
        sup_surf,
        mean,
        energy,
        failures,
    })
}

/// Parameter-dependent operators shared by every step.
pub(crate) struct Operators<'a> {
    pub fem: &'a FemMatrices,
    pub params: &'a ModelParams,
    pub mass: CsrMatrix,
    pub a_k: CsrMatrix,
    pub lumped: Vec<f64>,
    pub p: Reduction,
    pub q: Reduction,
    p_weights: Vec<f64>,
    q_weights: Vec<f64>,
    jacobian_pattern: SymbolicCache,
}

impl<'a> Operators<'a> {
    pub fn new(fem: &'a FemMatrices, params: &'a ModelParams) -> Result<Self> {
        chi(params.k)?;
        chi(params.l)?;
        let nb = fem.n_bulk();
        let n = nb + fem.n_surf();
        let mut t: Vec<_> = fem.m_bulk.triplets().collect();
        t.extend(fem.m_surf.triplets().map(|(r, c, v)| (r + nb, c + nb, v)));
        let mass = CsrMatrix::from_triplets(n, n, t);
        let a_k = form_matrix(fem, &params.form_spec(Slot::K), None, None);
        let lumped = [fem.lumped_bulk.as_slice(), fem.lumped_surf.as_slice()].concat();
        let p = params.form_spec(Slot::L).reduction(fem);
        let q = params.form_spec(Slot::K).reduction(fem);
        let p_weights = p
            .restrict(&lumped)
            .iter()
            .map(|v| v.abs().max(1e-300))
            .collect();
        let q_weights = q
            .restrict(&lumped)
            .iter()
            .map(|v| v.abs().max(1e-300))
            .collect();
        Ok(Self {
            fem,
            params,
            mass,
            a_k,
            lumped,
            p,
            q,
            p_weights,
            q_weights,
            jacobian_pattern: SymbolicCache::default(),
        })
    }

    fn side(&self, i: usize) -> Side {
        if i < self.fem.n_bulk() {
            Side::Bulk
        } else {
            Side::Surf
        }
    }

    /// `B_L` with mobilities at `phase`.
    pub fn mobility_form(&self, phase: &[f64]) -> Result<CsrMatrix> {
        let fem = self.fem;
        let nb = fem.n_bulk();
        let clamp = |v: &[f64]| v.iter().map(|x| x.clamp(-1.0, 1.0)).collect::<Vec<_>>();
        let pb = clamp(&phase[..nb]);
        let ps = clamp(&phase[nb..]);
        let wb = mobility_weights(&self.params.mobility_bulk, &fem.triangle_means(&pb), "bulk")?;
        let ws = mobility_weights(&self.params.mobility_surf, &fem.edge_means(&ps), "surface")?;
        Ok(form_matrix(
            fem,
            &self.params.form_spec(Slot::L),
            Some(&wb),
            Some(&ws),
        ))
    }

    /// `Λ ∘ f(X)` for the singular or smooth potential part.
    fn nodal(&self, x: &[f64], order: u8, convex: bool) -> Result<Vec<f64>> {
        let pot = &self.params.potential;
        x.iter()
            .enumerate()
            .map(|(i, &s)| {
                let v = if convex {
                    pot.convex_part(self.side(i), s, order)?
                } else {
                    pot.smooth_part(self.side(i), s, order)?
                };
                Ok(self.lumped[i] * v)
            })
            .collect()
    }

    /// Initial chemical potential from the potential equation at `phase`.
    pub fn initial_potential(&self, phase: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.a_k.mul_vec(phase);
        let f1 = self.nodal(phase, 1, true)?;
        let f2 = self.nodal(phase, 1, false)?;
        for i in 0..r.len() {
            r[i] += f1[i] + f2[i];
        }
        let p = &self.p;
        let mut t = Vec::new();
        reduced_triplets(&self.mass, p, p, 1.0, 0, 0, &mut t);
        let lu = SparseLu::factor(p.n_reduced(), &t)?;
        let w = lu.solve(&p.restrict(&r))?;
        Ok(p.expand(&w))
    }

    fn residual(
        &self,
        x: &[f64],
        w: &[f64],
        x_old: &[f64],
        b: &CsrMatrix,
        f2_old: &[f64],
        h: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let xf = self.q.expand(x);
        let wf = self.p.expand(w);
        let dx: Vec<f64> = xf.iter().zip(x_old).map(|(a, b)| a - b).collect();
        let mut r1 = self.mass.mul_vec(&dx);
        let bw = b.mul_vec(&wf);
        for i in 0..r1.len() {
            r1[i] += h * bw[i];
        }
        let mut r2 = self.a_k.mul_vec(&xf);
        let f1 = self.nodal(&xf, 1, true)?;
        let mw = self.mass.mul_vec(&wf);
        for i in 0..r2.len() {
            r2[i] += f1[i] + f2_old[i] - mw[i];
        }
        Ok((self.p.restrict(&r1), self.q.restrict(&r2)))
    }

    fn scaled_norms(&self, r1: &[f64], r2: &[f64]) -> (f64, f64) {
        let a = r1
            .iter()
            .zip(&self.p_weights)
            .fold(0.0f64, |m, (r, w)| m.max((r / w).abs()));
        let b = r2
            .iter()
            .zip(&self.q_weights)
            .fold(0.0f64, |m, (r, w)| m.max((r / w).abs()));
        (a, b)
    }

    fn merit(&self, r1: &[f64], r2: &[f64], wscale: f64) -> f64 {
        let a: f64 = r1
            .iter()
            .zip(&self.p_weights)
            .map(|(r, w)| (r / w).powi(2))
            .sum();
        let b: f64 = r2
            .iter()
            .zip(&self.q_weights)
            .map(|(r, w)| (r / w).powi(2))
            .sum();
        a + b / (wscale * wscale)
    }

    /// Newton matrix with the phase columns scaled by `1 - x^2`, i.e. with
    /// respect to `u = atanh(x)`.
    fn jacobian(&self, x: &[f64], b: &CsrMatrix, h: f64) -> Result<SparseLu> {
        let (p, q) = (&self.p, &self.q);
        let (np, nq) = (p.n_reduced(), q.n_reduced());
        let xf = q.expand(x);
        let f1pp = self.nodal(&xf, 2, true)?;
        let mut t = Vec::with_capacity(3 * self.mass.nnz() + b.nnz() + nq);
        reduced_triplets(&self.mass, p, q, 1.0, 0, 0, &mut t);
        reduced_triplets(b, p, p, h, 0, nq, &mut t);
        reduced_triplets(&self.a_k, q, q, 1.0, np, 0, &mut t);
        for (i, d) in f1pp.iter().enumerate() {
            if let Some((j, f)) = q.entry(i) {
                t.push((np + j, j, f * f * d));
            }
        }
        reduced_triplets(&self.mass, q, p, -1.0, np, nq, &mut t);
        for (_, c, v) in t.iter_mut() {
            if *c < nq {
                *v *= 1.0 - x[*c] * x[*c];
            }
        }
        SparseLu::factor_reusing(np + nq, &t, &self.jacobian_pattern)
    }

    /// One convex-splitting step of size `h` from `(x_old, w_old)`.
    fn substep(
        &self,
        x_old: &[f64],
        w_old: &[f64],
        h: f64,
        cfg: &SchemeConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, StepStats)> {
        let (p, q) = (&self.p, &self.q);
        let (np, nq) = (p.n_reduced(), q.n_reduced());
        let bound = 1.0 - cfg.clip_margin;
        let b = self.mobility_form(x_old)?;
        let f2_old = self.nodal(x_old, 1, false)?;

        let mut x: Vec<f64> = q
            .sample(x_old)
            .iter()
            .map(|v| v.clamp(-bound, bound))
            .collect();
        let mut w = p.sample(w_old);
        let (mut r1, mut r2) = self.residual(&x, &w, x_old, &b, &f2_old, h)?;
        let mut last = f64::INFINITY;
        for it in 0..=cfg.newton_max {
            let wscale = 1.0 + norm_inf(&w);
            let (n1, n2) = self.scaled_norms(&r1, &r2);
            last = n1.max(n2 / wscale);
            // Near the pure phases roundoff in x alone perturbs the second
            // residual by about eps * F1''(x).
            let curvature = q
                .restrict(&self.nodal(&q.expand(&x), 2, true)?)
                .iter()
                .zip(&self.q_weights)
                .fold(0.0f64, |m, (c, w)| m.max((c / w).abs()));
            let floor = 16.0 * f64::EPSILON * curvature;
            if n1 <= cfg.newton_tol && n2 <= (cfg.newton_tol * wscale).max(floor) {
                let stats = StepStats {
                    newton_iterations: it,
                    residual: last,
                    substeps: 1,
                };
                return Ok((q.expand(&x), p.expand(&w), stats));
            }
            if it == cfg.newton_max {
                break;
            }
            let jac = self.jacobian(&x, &b, h)?;
            let rhs: Vec<f64> = r1.iter().chain(&r2).map(|v| -v).collect();
            let dz = jac.solve(&rhs)?;
            let (du, dw) = dz.split_at(nq);

            let m0 = self.merit(&r1, &r2, wscale);
            let mut accepted = false;
            let mut lam: f64 = 1.0;
            for _ in 0..40 {
                // Small steps stay linear in x, which keeps the mass equation
                // exact and moves at most 20% of the way to the bound; large
                // ones follow tanh(atanh(x) + lam du).
                let xt: Vec<f64> = x
                    .iter()
                    .zip(du)
                    .map(|(a, d)| {
                        let s = lam * d;
                        let v = if s.abs() <= 0.1 {
                            a + (1.0 - a * a) * s
                        } else {
                            let t = s.tanh();
                            (a + t) / (1.0 + a * t)
                        };
                        v.clamp(-bound, bound)
                    })
                    .collect();
                let wt: Vec<f64> = w.iter().zip(dw).map(|(a, d)| a + lam * d).collect();
                let (t1, t2) = self.residual(&xt, &wt, x_old, &b, &f2_old, h)?;
                if self.merit(&t1, &t2, wscale) <= (1.0 - 1e-4 * lam) * m0 {
                    x = xt;
                    w = wt;
                    r1 = t1;
                    r2 = t2;
                    accepted = true;
                    break;
                }
                lam *= 0.5;
            }
            if !accepted {
                break;
            }
            debug_assert_eq!(w.len(), np);
        }
        Err(Error::NewtonFailure {
            iterations: cfg.newton_max,
            residual: last,
        })
    }

    /// Advances by `dt`, splitting into `2^r` substeps after failures.
    pub fn advance(
        &self,
        x_old: &[f64],
        w_old: &[f64],
        cfg: &SchemeConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, StepStats)> {
        let mut last_err = None;
        for r in 0..=cfg.max_retries {
            let n = 1usize << r;
            let h = cfg.dt / n as f64;
            let mut x = x_old.to_vec();
            let mut w = w_old.to_vec();
            let mut iters = 0;
            let mut residual: f64 = 0.0;
            let mut ok = true;
            for _ in 0..n {
                match self.substep(&x, &w, h, cfg) {
                    Ok((xn, wn, s)) => {
                        x = xn;
                        w = wn;
                        iters += s.newton_iterations;
                        residual = residual.max(s.residual);
                    }
                    Err(e @ Error::NewtonFailure { .. }) => {
                        last_err = Some(e);
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if ok {
                if r > 0 {
                    log::info!("step accepted after splitting into {n} substeps");
                }
                return Ok((
                    x,
                    w,
                    StepStats {
                        newton_iterations: iters,
                        residual,
                        substeps: n,
                    },
                ));
            }
        }
        Err(last_err.unwrap())
    }
}

/// One time step of size `cfg.dt` (with internal retries).
pub fn step(
    state: &TimeState,
    cfg: &SchemeConfig,
    params: &ModelParams,
    mesh: &Mesh,
    fem: &FemMatrices,
) -> Result<TimeState> {
    check_mesh(mesh, fem)?;
    cfg.validate()?;
    params.validate(fem)?;
    state.phase.check(fem)?;
    state.potential.check(fem)?;
    let ops = Operators::new(fem, params)?;
    let (x, w, stats) = ops.advance(&state.phase.to_vec(), &state.potential.to_vec(), cfg)?;
    let nb = fem.n_bulk();
    Ok(TimeState {
        t: state.t + cfg.dt,
        phase: FieldPair::from_slice(&x, nb),
        potential: FieldPair::from_slice(&w, nb),
        stats,
    })
}

fn check_mesh(mesh: &Mesh, fem: &FemMatrices) -> Result<()> {
    if mesh.n_bulk() != fem.n_bulk() || mesh.n_surf() != fem.n_surf() {
        return Err(Error::ShapeMismatch {
            expected: format!("({}, {})", fem.n_bulk(), fem.n_surf()),
            got: format!("({}, {})", mesh.n_bulk(), mesh.n_surf()),
        });
    }
    Ok(())
}

/// State at `t = 0` with the chemical potential of the initial phase.
pub fn initial_state(
    initial: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<TimeState> {
    let ops = Operators::new(fem, params)?;
    let w = ops.initial_potential(&initial.to_vec())?;
    Ok(TimeState {
        t: 0.0,
        phase: initial.clone(),
        potential: FieldPair::from_slice(&w, fem.n_bulk()),
        stats: StepStats::default(),
    })
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// States at the output cadence; always contains the initial and final state.
    pub states: Vec<TimeState>,
    /// One record per accepted step, starting with the initial state.
    pub records: Vec<DiagnosticsRecord>,
    pub dt: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &TimeState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Observer callback: `(step index, state, record) → continue / abort`.
pub type Observer<'o> = dyn FnMut(usize, &TimeState, &DiagnosticsRecord) -> ControlFlow<()> + 'o;

/// Marches from `initial` to `t_final`, recording diagnostics after every
/// step. The last step is shortened to land on `t_final` exactly.
pub fn run(
    initial: &FieldPair,
    t_final: f64,
    cfg: &SchemeConfig,
    params: &ModelParams,
    mesh: &Mesh,
    fem: &FemMatrices,
    observers: &mut [&mut Observer<'_>],
) -> Result<Trajectory> {
    check_mesh(mesh, fem)?;
    cfg.validate()?;
    params.validate_for_evolution(fem)?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "final time {t_final} must be nonnegative"
        )));
    }
    let report = check_initial_datum(initial, params, fem)?;
    if !report.passed() {
        return Err(Error::Precondition(format!(
            "initial datum rejected: {}",
            report.failures.join("; ")
        )));
    }
    let ops = Operators::new(fem, params)?;
    let nb = fem.n_bulk();
    let mut state = initial_state(initial, params, fem)?;
    let record0 = diagnostics::record(&state, None, &state.phase, params, fem, cfg.dt)?;
    for obs in observers.iter_mut() {
        if obs(0, &state, &record0).is_break() {
            return Err(Error::Aborted(0));
        }
    }
    let n_steps = if t_final == 0.0 {
        0
    } else {
        ((t_final / cfg.dt) - 1e-9).ceil().max(1.0) as usize
    };
    let mut states = vec![state.clone()];
    let mut records = vec![record0];
    for n in 1..=n_steps {
        let mut step_cfg = cfg.clone();
        if n == n_steps {
            step_cfg.dt = t_final - state.t;
        }
        let x_old = state.phase.to_vec();
        let (x, w, stats) = ops
            .advance(&x_old, &state.potential.to_vec(), &step_cfg)
            .map_err(|e| e.context(format!("step {n} at t = {:.6}", state.t)))?;
        let prev_phase = state.phase.clone();
        state = TimeState {
            t: if n == n_steps {
                t_final
            } else {
                n as f64 * cfg.dt
            },
            phase: FieldPair::from_slice(&x, nb),
            potential: FieldPair::from_slice(&w, nb),
            stats,
        };
        let rec = diagnostics::record(
            &state,
            Some(&prev_phase),
            &prev_phase,
            params,
            fem,
            step_cfg.dt,
        )?;
        for obs in observers.iter_mut() {
            if obs(n, &state, &rec).is_break() {
                return Err(Error::Aborted(n));
            }
        }
        records.push(rec);
        if n % cfg.output_every == 0 || n == n_steps {
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        states,
        records,
        dt: cfg.dt,
        steps: n_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsfield::ExtReal;
    use crate::geometry::{assemble_fem, build_disk_mesh};

    fn setup(level: usize) -> (Mesh, FemMatrices) {
        let mesh = build_disk_mesh(level).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        (mesh, fem)
    }

    fn smooth(fem: &FemMatrices) -> FieldPair {
        FieldPair::with_trace(
            fem,
            fem.interpolate_bulk(|x, y| 0.3 + 0.5 * (2.0 * x).cos() * 0.4 + 0.2 * y),
        )
    }

    #[test]
    fn initial_datum_checks() {
        let (_, fem) = setup(2);
        let params = ModelParams::default();
        assert!(check_initial_datum(&FieldPair::zeros(&fem), &params, &fem)
            .unwrap()
            .passed());
        let r = check_initial_datum(&FieldPair::constant(&fem, 1.0, 0.0), &params, &fem).unwrap();
        assert!(!r.passed());
        let p = FieldPair::with_trace(
            &fem,
            fem.interpolate_bulk(|x, _| 0.3 + 0.5 * (2.0 * x).cos()),
        );
        let r = check_initial_datum(&p, &params, &fem).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
        let MeanValue::Pair(mb, _) = r.mean else {
            panic!()
        };
        assert!(mb > 0.3 && mb < 0.8);
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let (mesh, fem) = setup(2);
        let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        let cfg = SchemeConfig::with_dt(1e-2);
        let traj = run(
            &FieldPair::zeros(&fem),
            0.1,
            &cfg,
            &params,
            &mesh,
            &fem,
            &mut [],
        )
        .unwrap();
        for s in &traj.states {
            assert_eq!(s.phase.max_abs(), 0.0);
        }
    }

    #[test]
    fn one_step_conserves_mass() {
        let (mesh, fem) = setup(2);
        for l in [
            ExtReal::Finite(0.0),
            ExtReal::Finite(1.0),
            ExtReal::Infinite,
        ] {
            let mut params = ModelParams::with_kl(ExtReal::Finite(1.0), l);
            params.beta = 1.3;
            params.alpha = 0.8;
            let s0 = initial_state(&smooth(&fem), &params, &fem).unwrap();
            let s1 = step(&s0, &SchemeConfig::with_dt(1e-2), &params, &mesh, &fem).unwrap();
            let (b0, g0) = s0.phase.integrals(&fem);
            let (b1, g1) = s1.phase.integrals(&fem);
            if l.is_infinite() {
                assert!((b1 - b0).abs() <= 1e-11 * b0.abs().max(1.0));
                assert!((g1 - g0).abs() <= 1e-11 * g0.abs().max(1.0));
            } else {
                let (m0, m1) = (1.3 * b0 + g0, 1.3 * b1 + g1);
                assert!((m1 - m0).abs() <= 1e-11 * m0.abs().max(1.0), "L={l}");
            }
            let e0 = diagnostics::energy(&s0.phase, &params, &fem).unwrap();
            let e1 = diagnostics::energy(&s1.phase, &params, &fem).unwrap();
            assert!(e1 <= e0);
        }
    }

    #[test]
    fn k_zero_step_keeps_trace_constraint() {
        let (mesh, fem) = setup(2);
        let mut params = ModelParams::with_kl(ExtReal::Finite(0.0), ExtReal::Finite(1.0));
        params.alpha = 0.5;
        let mut init = smooth(&fem);
        for (j, &v) in fem.trace.iter().enumerate() {
            init.bulk[v] = 0.5 * init.surf[j];
        }
        let s0 = TimeState {
            t: 0.0,
            phase: init,
            potential: FieldPair::zeros(&fem),
            stats: StepStats::default(),
        };
        let s1 = step(&s0, &SchemeConfig::with_dt(1e-2), &params, &mesh, &fem).unwrap();
        for (j, &v) in fem.trace.iter().enumerate() {
            assert!((s1.phase.bulk[v] - 0.5 * s1.phase.surf[j]).abs() < 1e-15);
        }
        assert!(run(
            &s0.phase,
            0.1,
            &SchemeConfig::default(),
            &params,
            &mesh,
            &fem,
            &mut []
        )
        .is_err());
    }

    #[test]
    fn zero_final_time_gives_initial_state() {
        let (mesh, fem) = setup(1);
        let params = ModelParams::default();
        let init = smooth(&fem);
        let traj = run(
            &init,
            0.0,
            &SchemeConfig::default(),
            &params,
            &mesh,
            &fem,
            &mut [],
        )
        .unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.states[0].phase, init);
        assert!(traj.states[0].potential.max_abs() > 0.0);
    }

    #[test]
    fn observer_can_abort() {
        let (mesh, fem) = setup(1);
        let params = ModelParams::default();
        let mut count = 0;
        let mut obs = |n: usize, _: &TimeState, _: &DiagnosticsRecord| {
            count += 1;
            if n == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let r = run(
            &smooth(&fem),
            1.0,
            &SchemeConfig::with_dt(0.1),
            &params,
            &mesh,
            &fem,
            &mut [&mut obs],
        );
        assert!(matches!(r, Err(Error::Aborted(2))));
        assert_eq!(count, 3);
    }

    #[test]
    fn rejects_bad_config_and_datum() {
        let (mesh, fem) = setup(1);
        let params = ModelParams::default();
        let mut cfg = SchemeConfig::default();
        cfg.dt = -1.0;
        assert!(run(&smooth(&fem), 1.0, &cfg, &params, &mesh, &fem, &mut []).is_err());
        let bad = FieldPair::constant(&fem, 1.0, 1.0);
        let r = run(
            &bad,
            1.0,
            &SchemeConfig::default(),
            &params,
            &mesh,
            &fem,
            &mut [],
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn confinement_near_pure_phase() {
        let (mesh, fem) = setup(2);
        let mut params = ModelParams::default();
        params.potential = crate::physics::PotentialSpec::flory_huggins(1.0, 6.0);
        let init = FieldPair::with_trace(
            &fem,
            fem.interpolate_bulk(|x, _| 0.95 * x.signum() * x.abs().sqrt().min(1.0)),
        );
        let cfg = SchemeConfig::with_dt(1e-2);
        let traj = run(&init, 0.2, &cfg, &params, &mesh, &fem, &mut []).unwrap();
        for s in &traj.states {
            assert!(s.phase.max_abs() <= 1.0 - cfg.clip_margin / 2.0);
        }
    }
}
