//! Energy, dissipation, masses, separation, stationarity, the continuous
//! dependence experiment, the chain-rule check and the Poincaré and
//! interpolation constants.

use std::io::Write;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsfield::{chi, form_inner, generalized_mean, FieldPair, MeanValue, ModelParams, Slot};
use crate::elliptic::{mobility_weights, AssembledForm};
use crate::error::{Error, Result};
use crate::evolution::{check_initial_datum, initial_state, Operators, SchemeConfig, TimeState};
use crate::geometry::{FemMatrices, Mesh};
use crate::physics::Side;
use crate::sparse::{dot, pcg, reduced_triplets, KernelSolver};

pub const CSV_HEADER: [&str; 11] = [
    "t",
    "E",
    "mass_b",
    "mass_s",
    "mass_combined",
    "D",
    "delta",
    "stdev_mu",
    "stdev_theta",
    "beta_theta_minus_mu",
    "dual_dt_norm",
];

/// Free energy with nodal quadrature of the potentials.
pub fn energy(p: &FieldPair, params: &ModelParams, fem: &FemMatrices) -> Result<f64> {
    p.check(fem)?;
    let grad = 0.5 * form_inner(p, p, &params.form_spec(Slot::K), fem)?;
    let pot = &params.potential;
    if pot.is_zero() {
        return Ok(grad);
    }
    let nb = fem.n_bulk();
    let mut e = grad;
    for (i, (&s, w)) in p
        .bulk
        .iter()
        .chain(&p.surf)
        .zip(fem.lumped_bulk.iter().chain(&fem.lumped_surf))
        .enumerate()
    {
        if s.abs() >= 1.0 {
            return Err(Error::SingularEnergy { node: i, value: s });
        }
        let side = if i < nb { Side::Bulk } else { Side::Surf };
        e += w * pot.eval(side, s, 0)?;
    }
    Ok(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Masses {
    pub bulk: f64,
    pub surf: f64,
    /// `β ∫φ + ∫_Γ ψ`.
    pub combined: f64,
}

pub fn masses(p: &FieldPair, params: &ModelParams, fem: &FemMatrices) -> Masses {
    let (bulk, surf) = p.integrals(fem);
    Masses {
        bulk,
        surf,
        combined: params.beta * bulk + surf,
    }
}

/// Mobility-weighted `L` form of `potential` with weights at `mobility_phase`.
pub fn dissipation_with(
    mobility_phase: &FieldPair,
    potential: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<f64> {
    let form = weighted_form(mobility_phase, params, fem)?;
    Ok(form.norm_sq(potential).max(0.0))
}

pub fn dissipation_rate(state: &TimeState, params: &ModelParams, fem: &FemMatrices) -> Result<f64> {
    dissipation_with(&state.phase, &state.potential, params, fem)
}

pub(crate) fn weighted_form<'a>(
    phase: &FieldPair,
    params: &ModelParams,
    fem: &'a FemMatrices,
) -> Result<AssembledForm<'a>> {
    let clamp = |v: &[f64]| v.iter().map(|x| x.clamp(-1.0, 1.0)).collect::<Vec<_>>();
    let wb = mobility_weights(
        &params.mobility_bulk,
        &fem.triangle_means(&clamp(&phase.bulk)),
        "bulk",
    )?;
    let ws = mobility_weights(
        &params.mobility_surf,
        &fem.edge_means(&clamp(&phase.surf)),
        "surface",
    )?;
    AssembledForm::from_weights(fem, params.form_spec(Slot::L), params.beta, wb, ws)
}

/// `1 − max |nodal value|`.
pub fn separation_margin(p: &FieldPair) -> f64 {
    1.0 - p.max_abs()
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub mean_mu: f64,
    pub mean_theta: f64,
    pub stdev_mu: f64,
    pub stdev_theta: f64,
    /// `|β θ̄ − μ̄|`, `NaN` when `L = ∞`.
    pub beta_theta_minus_mu: f64,
    pub grad_mu: f64,
    pub grad_theta: f64,
    /// `χ(L) ‖βθ − μ‖_{L²(Γ)}`.
    pub coupling_residual: f64,
    pub predicted_mu: f64,
    pub predicted_theta: f64,
    /// The variant with prefactor α in place of β (`L < ∞` only).
    pub predicted_mu_alpha_prefactor: f64,
    /// Weak `∫_Γ ∂_n φ`.
    pub normal_flux: f64,
}

fn mean_and_stdev(v: &[f64], w: &[f64], measure: f64) -> (f64, f64) {
    let m = dot(v, w) / measure;
    let var: f64 = v
        .iter()
        .zip(w)
        .map(|(x, w)| w * (x - m).powi(2))
        .sum::<f64>()
        / measure;
    (m, var.max(0.0).sqrt())
}

pub fn stationarity_report(
    state: &TimeState,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<StationarityReport> {
    let (phase, pot) = (&state.phase, &state.potential);
    phase.check(fem)?;
    pot.check(fem)?;
    let (mean_mu, stdev_mu) = mean_and_stdev(&pot.bulk, &fem.lumped_bulk, fem.area);
    let (mean_theta, stdev_theta) = mean_and_stdev(&pot.surf, &fem.lumped_surf, fem.perimeter);
    let grad_mu = fem.a_bulk.bilinear(&pot.bulk, &pot.bulk).max(0.0).sqrt();
    let grad_theta = fem.a_surf.bilinear(&pot.surf, &pot.surf).max(0.0).sqrt();
    let xl = chi(params.l)?;
    let gap: Vec<f64> = pot
        .surf
        .iter()
        .zip(&fem.trace)
        .map(|(t, &v)| params.beta * t - pot.bulk[v])
        .collect();
    let coupling_residual = xl * fem.m_surf.bilinear(&gap, &gap).max(0.0).sqrt();

    let p = &params.potential;
    let int_f = phase
        .bulk
        .iter()
        .zip(&fem.lumped_bulk)
        .map(|(&s, w)| Ok(w * p.eval(Side::Bulk, s, 1)?))
        .sum::<Result<f64>>()?;
    let int_g = phase
        .surf
        .iter()
        .zip(&fem.lumped_surf)
        .map(|(&s, w)| Ok(w * p.eval(Side::Surf, s, 1)?))
        .sum::<Result<f64>>()?;
    let xk = chi(params.k)?;
    let trace_gap: Vec<f64> = phase
        .surf
        .iter()
        .zip(&fem.trace)
        .map(|(s, &v)| params.alpha * s - phase.bulk[v])
        .collect();
    let normal_flux = xk * dot(&fem.lumped_surf, &trace_gap);

    let (alpha, beta) = (params.alpha, params.beta);
    let (predicted_mu, predicted_theta, predicted_mu_alpha_prefactor, beta_theta_minus_mu) =
        if params.l.is_infinite() {
            (
                (int_f - normal_flux) / fem.area,
                (int_g + alpha * normal_flux) / fem.perimeter,
                f64::NAN,
                f64::NAN,
            )
        } else {
            let bracket = alpha * int_f + int_g;
            let denom = alpha * beta * fem.area + fem.perimeter;
            let theta = bracket / denom;
            (
                beta * theta,
                theta,
                alpha * theta,
                (beta * mean_theta - mean_mu).abs(),
            )
        };
    Ok(StationarityReport {
        mean_mu,
        mean_theta,
        stdev_mu,
        stdev_theta,
        beta_theta_minus_mu,
        grad_mu,
        grad_theta,
        coupling_residual,
        predicted_mu,
        predicted_theta,
        predicted_mu_alpha_prefactor,
        normal_flux,
    })
}

/// Per-step diagnostics. The first eleven fields form the CSV row.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub mass_b: f64,
    pub mass_s: f64,
    pub mass_combined: f64,
    /// Dissipation with mobilities at the start of the step.
    pub dissipation: f64,
    pub delta: f64,
    pub stdev_mu: f64,
    pub stdev_theta: f64,
    pub beta_theta_minus_mu: f64,
    /// Weighted dual norm of the backward difference quotient (`NaN` at t = 0).
    pub dual_dt_norm: f64,
    pub grad_mu: f64,
    pub grad_theta: f64,
    pub coupling_residual: f64,
    pub h2_phase: f64,
    pub newton_iterations: usize,
    pub substeps: usize,
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> [String; 11] {
        let f = |v: f64| format!("{v:.17e}");
        [
            f(self.t),
            f(self.energy),
            f(self.mass_b),
            f(self.mass_s),
            f(self.mass_combined),
            f(self.dissipation),
            f(self.delta),
            f(self.stdev_mu),
            f(self.stdev_theta),
            f(self.beta_theta_minus_mu),
            f(self.dual_dt_norm),
        ]
    }
}

pub fn write_records_csv<W: Write>(records: &[DiagnosticsRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in records {
        wr.write_record(r.csv_row())?;
    }
    wr.flush()?;
    Ok(())
}

/// Diagnostics of `state`; `prev_phase` is the phase one step earlier and
/// `mobility_phase` the phase the step's mobilities were frozen at.
pub fn record(
    state: &TimeState,
    prev_phase: Option<&FieldPair>,
    mobility_phase: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
    dt: f64,
) -> Result<DiagnosticsRecord> {
    let m = masses(&state.phase, params, fem);
    let st = stationarity_report(state, params, fem)?;
    let dual_dt_norm = match prev_phase {
        Some(prev) => {
            let rate = state.phase.sub(prev).scale(1.0 / dt);
            weighted_form(&state.phase, params, fem)?.dual_norm(&rate)?
        }
        None => f64::NAN,
    };
    Ok(DiagnosticsRecord {
        t: state.t,
        energy: energy(&state.phase, params, fem)?,
        mass_b: m.bulk,
        mass_s: m.surf,
        mass_combined: m.combined,
        dissipation: dissipation_with(mobility_phase, &state.potential, params, fem)?,
        delta: separation_margin(&state.phase),
        stdev_mu: st.stdev_mu,
        stdev_theta: st.stdev_theta,
        beta_theta_minus_mu: st.beta_theta_minus_mu,
        dual_dt_norm,
        grad_mu: st.grad_mu,
        grad_theta: st.grad_theta,
        coupling_residual: st.coupling_residual,
        h2_phase: h2_surrogate_sq(&state.phase, fem)?.sqrt(),
        newton_iterations: state.stats.newton_iterations,
        substeps: state.stats.substeps,
    })
}

/// `(E_n − E_{n−1}) / Δt_n + D_n` for consecutive records.
pub fn energy_identity_residuals(records: &[DiagnosticsRecord]) -> Vec<f64> {
    records
        .windows(2)
        .map(|w| (w[1].energy - w[0].energy) / (w[1].t - w[0].t) + w[1].dissipation)
        .collect()
}

/// `E + Σ dt·D − E(0)` after each step.
pub fn energy_drift(records: &[DiagnosticsRecord]) -> Vec<f64> {
    let mut acc = 0.0;
    records
        .windows(2)
        .map(|w| {
            acc += (w[1].t - w[0].t) * w[1].dissipation;
            w[1].energy + acc - records[0].energy
        })
        .collect()
}

/// Mass-matrix solve for the discrete Laplacian.
fn mass_solve(m: &crate::sparse::CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    pcg(m, b, 1e-13, 10 * b.len() + 100)
}

/// `‖p‖²_{H¹} + ‖M⁻¹A p‖²_{L²}` summed over bulk and surface.
pub fn h2_surrogate_sq(p: &FieldPair, fem: &FemMatrices) -> Result<f64> {
    let mut total = 0.0;
    for (v, m, a) in [
        (&p.bulk, &fem.m_bulk, &fem.a_bulk),
        (&p.surf, &fem.m_surf, &fem.a_surf),
    ] {
        let av = a.mul_vec(v);
        let lap = mass_solve(m, &av)?;
        total += m.bilinear(v, v) + a.bilinear(v, v) + dot(&av, &lap);
    }
    Ok(total)
}

/// `h ‖M⁻¹A p‖ / ‖∇p‖` for the bulk part (bounded by the inverse inequality).
pub fn inverse_inequality_ratio(p: &FieldPair, fem: &FemMatrices, h: f64) -> Result<f64> {
    let av = fem.a_bulk.mul_vec(&p.bulk);
    let lap = mass_solve(&fem.m_bulk, &av)?;
    let grad = fem.a_bulk.bilinear(&p.bulk, &p.bulk).sqrt();
    if grad == 0.0 {
        return Ok(0.0);
    }
    Ok(h * dot(&av, &lap).max(0.0).sqrt() / grad)
}

#[derive(Clone, Debug, Serialize)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub q_hat: Vec<f64>,
    /// Smallest `C` with `y(t) ≤ y(0) exp(C ∫₀ᵗ Q̂)` at every output time.
    /// Negative when the difference decays.
    pub fitted_c: f64,
    /// `max (y' − C Q̂ y)⁺` with backward differences.
    pub max_violation: f64,
    pub y_final_sqrt: f64,
}

/// Co-evolves two data with equal means and tracks
/// `y = ½ ‖difference‖²` in the dual norm weighted at the first trajectory.
#[allow(clippy::too_many_arguments)]
pub fn continuous_dependence_experiment(
    init1: &FieldPair,
    init2: &FieldPair,
    t_final: f64,
    cfg: &SchemeConfig,
    params: &ModelParams,
    mesh: &Mesh,
    fem: &FemMatrices,
) -> Result<GronwallReport> {
    if mesh.n_bulk() != fem.n_bulk() {
        return Err(Error::ShapeMismatch {
            expected: fem.n_bulk().to_string(),
            got: mesh.n_bulk().to_string(),
        });
    }
    cfg.validate()?;
    params.validate_for_evolution(fem)?;
    for (i, p) in [init1, init2].iter().enumerate() {
        let r = check_initial_datum(p, params, fem)?;
        if !r.passed() {
            return Err(Error::Precondition(format!(
                "datum {} rejected: {}",
                i + 1,
                r.failures.join("; ")
            )));
        }
    }
    let (m1, m2) = (
        generalized_mean(init1, params, fem)?,
        generalized_mean(init2, params, fem)?,
    );
    let gap = match (m1, m2) {
        (MeanValue::Scalar(a), MeanValue::Scalar(b)) => (a - b).abs(),
        (MeanValue::Pair(a, b), MeanValue::Pair(c, d)) => (a - c).abs().max((b - d).abs()),
        _ => f64::INFINITY,
    };
    if gap > 1e-12 {
        return Err(Error::Precondition(format!(
            "initial data have different means (gap {gap:e})"
        )));
    }

    let ops = Operators::new(fem, params)?;
    let l_spec = params.form_spec(Slot::L);
    let mut s1 = initial_state(init1, params, fem)?;
    let mut s2 = initial_state(init2, params, fem)?;
    let n_steps = ((t_final / cfg.dt) - 1e-9).ceil().max(0.0) as usize;
    let nb = fem.n_bulk();

    let y_of = |a: &TimeState, b: &TimeState| -> Result<f64> {
        let diff = a.phase.sub(&b.phase);
        if diff.max_abs() == 0.0 {
            return Ok(0.0);
        }
        let d = weighted_form(&a.phase, params, fem)?.dual_norm(&diff)?;
        Ok(0.5 * d * d)
    };
    let q_of = |a: &TimeState, prev: &FieldPair, b: &TimeState, dt: f64| -> Result<f64> {
        let mu2 = form_inner(&b.potential, &b.potential, &l_spec, fem)?;
        let rate = a.phase.sub(prev).scale(1.0 / dt);
        let dual = weighted_form(&a.phase, params, fem)?.dual_norm(&rate)?;
        let h2 = h2_surrogate_sq(&a.phase, fem)?;
        Ok(1.0 + mu2 + dual * dual + h2 * h2)
    };

    let mut times = vec![0.0];
    let mut y = vec![y_of(&s1, &s2)?];
    let mut q_all = Vec::new();
    let mut integral = vec![0.0];
    let mut running = 0.0;
    let mut q_prev = 0.0;
    for n in 1..=n_steps {
        let mut step_cfg = cfg.clone();
        if n == n_steps {
            step_cfg.dt = t_final - s1.t;
        }
        let prev1 = s1.phase.clone();
        let advance = |s: &TimeState| -> Result<TimeState> {
            let (x, w, stats) = ops.advance(&s.phase.to_vec(), &s.potential.to_vec(), &step_cfg)?;
            Ok(TimeState {
                t: s.t + step_cfg.dt,
                phase: FieldPair::from_slice(&x, nb),
                potential: FieldPair::from_slice(&w, nb),
                stats,
            })
        };
        s1 = advance(&s1)?;
        s2 = advance(&s2)?;
        let q = q_of(&s1, &prev1, &s2, step_cfg.dt)?;
        if n == 1 {
            // Q̂(0) uses the first forward difference.
            q_all.push(q);
            q_prev = q;
        }
        running += 0.5 * (q + q_prev) * step_cfg.dt;
        q_prev = q;
        if n % cfg.output_every == 0 || n == n_steps {
            times.push(s1.t);
            y.push(y_of(&s1, &s2)?);
            q_all.push(q);
            integral.push(running);
        }
    }
    if q_all.is_empty() {
        q_all.push(1.0);
    }

    let fitted_c = if y[0] == 0.0 || times.len() < 2 {
        0.0
    } else {
        (1..times.len())
            .map(|k| (y[k] / y[0]).ln() / integral[k])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let max_violation = (1..times.len())
        .map(|k| (y[k] - y[k - 1]) / (times[k] - times[k - 1]) - fitted_c * q_all[k] * y[k])
        .fold(0.0f64, f64::max);
    let y_final_sqrt = y.last().copied().unwrap_or(0.0).sqrt();
    Ok(GronwallReport {
        times,
        y,
        q_hat: q_all,
        fitted_c,
        max_violation,
        y_final_sqrt,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRuleReport {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Contribution of the mobility-derivative terms to `rhs`.
    pub mobility_terms: Vec<f64>,
    pub residual: Vec<f64>,
    /// RMS of the residual over the larger RMS of the two sides.
    pub normalized: f64,
}

/// Discrete check of
/// `d/dt ½ (W, W)_{L,[X]} = (∂ₜW, W)_{L,[X]} + ½ Σ m'(X) ∂ₜX |∇W|²`
/// with a central difference on the left and backward differences on the right.
pub fn chain_rule_residual(
    window: &[TimeState],
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<ChainRuleReport> {
    if window.len() < 3 {
        return Err(Error::InvalidParameter(
            "chain-rule window needs at least 3 states".into(),
        ));
    }
    let dt = window[1].t - window[0].t;
    for w in window.windows(2) {
        let d = w[1].t - w[0].t;
        if !(dt > 0.0) || (d - dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidParameter(format!(
                "non-uniform time step in window ({d} vs {dt})"
            )));
        }
    }
    let half_energy =
        |s: &TimeState| -> Result<f64> { Ok(0.5 * dissipation_rate(s, params, fem)?) };
    let phis: Vec<f64> = window.iter().map(half_energy).collect::<Result<_>>()?;
    let (mb, ms) = (&params.mobility_bulk, &params.mobility_surf);
    let (mut times, mut lhs, mut rhs, mut mob, mut residual) =
        (vec![], vec![], vec![], vec![], vec![]);
    for n in 1..window.len() - 1 {
        let (prev, cur) = (&window[n - 1], &window[n]);
        let l = (phis[n + 1] - phis[n - 1]) / (2.0 * dt);
        let form = weighted_form(&cur.phase, params, fem)?;
        let dw = cur.potential.sub(&prev.potential).scale(1.0 / dt);
        let main = form.value(&dw, &cur.potential);

        let clamp = |v: &[f64]| v.iter().map(|x| x.clamp(-1.0, 1.0)).collect::<Vec<_>>();
        let tb = fem.triangle_means(&clamp(&cur.phase.bulk));
        let tb_prev = fem.triangle_means(&clamp(&prev.phase.bulk));
        let gb = fem.triangle_grad_sq(&cur.potential.bulk);
        let mut extra = 0.0;
        for (((s, s0), g), a) in tb.iter().zip(&tb_prev).zip(&gb).zip(fem.triangle_areas()) {
            extra += 0.5 * mb.deriv(*s) * (s - s0) / dt * g * a;
        }
        let eb = fem.edge_means(&clamp(&cur.phase.surf));
        let eb_prev = fem.edge_means(&clamp(&prev.phase.surf));
        let gs = fem.edge_grad_sq(&cur.potential.surf);
        for (((s, s0), g), l) in eb.iter().zip(&eb_prev).zip(&gs).zip(fem.edge_lengths()) {
            extra += 0.5 * ms.deriv(*s) * (s - s0) / dt * g * l;
        }
        let r = main + extra;
        times.push(cur.t);
        lhs.push(l);
        rhs.push(r);
        mob.push(extra);
        residual.push(l - r);
    }
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let scale = rms(&lhs).max(rms(&rhs));
    let normalized = if scale == 0.0 {
        0.0
    } else {
        rms(&residual) / scale
    };
    Ok(ChainRuleReport {
        times,
        lhs,
        rhs,
        mobility_terms: mob,
        residual,
        normalized,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareReport {
    pub lambda1: f64,
    pub c_p: f64,
    pub iterations: usize,
}

fn m_orthonormalize(v: &mut [Vec<f64>], m: &crate::sparse::CsrMatrix) {
    for i in 0..v.len() {
        for _ in 0..2 {
            for j in 0..i {
                let mv = m.mul_vec(&v[j]);
                let c = dot(&v[i], &mv);
                let (a, b) = v.split_at_mut(i);
                for (x, y) in b[0].iter_mut().zip(&a[j]) {
                    *x -= c * y;
                }
            }
        }
        let n = m.bilinear(&v[i], &v[i]).sqrt();
        v[i].iter_mut().for_each(|x| *x /= n);
    }
}

/// Smallest eigenvalue of the `K` form against the L² form on pairs with
/// vanishing scalar mean (`(β, 1)` direction), by block inverse iteration
/// with Rayleigh–Ritz.
pub fn verify_poincare(
    mesh: &Mesh,
    fem: &FemMatrices,
    params: &ModelParams,
) -> Result<PoincareReport> {
    if mesh.n_bulk() != fem.n_bulk() {
        return Err(Error::ShapeMismatch {
            expected: fem.n_bulk().to_string(),
            got: mesh.n_bulk().to_string(),
        });
    }
    if params.k.is_infinite() {
        return Err(Error::InvalidParameter(
            "the Poincare inequality needs K in [0, inf)".into(),
        ));
    }
    params.validate(fem)?;
    let ops = Operators::new(fem, params)?;
    let q = &ops.q;
    let nr = q.n_reduced();
    let mut ta = Vec::new();
    let mut tm = Vec::new();
    reduced_triplets(&ops.a_k, q, q, 1.0, 0, 0, &mut ta);
    reduced_triplets(&ops.mass, q, q, 1.0, 0, 0, &mut tm);
    let a = crate::sparse::CsrMatrix::from_triplets(nr, nr, ta.clone());
    let m = crate::sparse::CsrMatrix::from_triplets(nr, nr, tm);
    let full_l: Vec<f64> = fem
        .lumped_bulk
        .iter()
        .map(|v| params.beta * v)
        .chain(fem.lumped_surf.iter().copied())
        .collect();
    let ell = q.restrict(&full_l);
    let kernel: Vec<f64> = std::iter::repeat_n(params.alpha, fem.n_bulk())
        .chain(std::iter::repeat_n(1.0, fem.n_surf()))
        .collect();
    let lu = KernelSolver::new(nr, &ta, vec![q.sample(&kernel)], vec![ell])?;

    let block = 6.min(nr.saturating_sub(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..nr).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut lambda = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        for x in v.iter_mut() {
            *x = lu.solve(&m.mul_vec(x))?.0;
        }
        m_orthonormalize(&mut v, &m);
        let av: Vec<Vec<f64>> = v.iter().map(|x| a.mul_vec(x)).collect();
        let h = Mat::<f64>::from_fn(block, block, |i, j| {
            0.5 * (dot(&v[i], &av[j]) + dot(&v[j], &av[i]))
        });
        let eig = h
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Solver(format!("dense eigensolver failed: {e:?}")))?;
        let s = eig.S();
        let u = eig.U();
        let rotated: Vec<Vec<f64>> = (0..block)
            .map(|c| {
                (0..nr)
                    .map(|r| (0..block).map(|k| v[k][r] * u[(k, c)]).sum())
                    .collect()
            })
            .collect();
        v = rotated;
        let new = s[0];
        let done = (new - lambda).abs() <= 1e-12 * new.abs();
        lambda = new;
        if done {
            break;
        }
    }
    if !(lambda > 0.0) {
        return Err(Error::Solver(format!(
            "non-positive Poincare eigenvalue {lambda}"
        )));
    }
    Ok(PoincareReport {
        lambda1: lambda,
        c_p: lambda.powf(-0.5),
        iterations,
    })
}

/// Largest `‖p‖_{L²} / ‖p‖_K` over random mean-zero admissible pairs.
pub fn poincare_ratio_check(
    fem: &FemMatrices,
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let spec = params.form_spec(Slot::K);
    let q = spec.reduction(fem);
    let full_l: Vec<f64> = fem
        .lumped_bulk
        .iter()
        .map(|v| params.beta * v)
        .chain(fem.lumped_surf.iter().copied())
        .collect();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let raw: Vec<f64> = (0..q.n_reduced())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut fullv = q.expand(&raw);
        // Remove the component along the admissible image of (β, 1) that
        // carries the scalar mean, keeping the trace constraint.
        let dir = q.expand(
            &q.sample(
                &fem.lumped_bulk
                    .iter()
                    .map(|_| params.beta)
                    .chain(fem.lumped_surf.iter().map(|_| 1.0))
                    .collect::<Vec<_>>(),
            ),
        );
        let c = dot(&fullv, &full_l) / dot(&dir, &full_l);
        fullv.iter_mut().zip(&dir).for_each(|(x, d)| *x -= c * d);
        let p = FieldPair::from_slice(&fullv, fem.n_bulk());
        let k = form_inner(&p, &p, &spec, fem)?.sqrt();
        worst = worst.max(p.l2_norm(fem) / k);
    }
    Ok(worst)
}

/// Smooth mesh-independent random pair: a few low Fourier modes plus
/// Gaussian bumps, independently for bulk and surface.
pub fn random_smooth_pair(fem: &FemMatrices, seed: u64, amplitude: f64) -> FieldPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = || {
        let modes: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let bumps: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(-0.7..0.7),
                    rng.random_range(-0.7..0.7),
                    rng.random_range(0.25..0.5),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let offset = rng.random_range(-0.5..0.5);
        move |x: f64, y: f64| {
            let mut v = offset;
            for (kx, ky, ph, a) in &modes {
                v += a * (kx * x + ky * y + ph).cos();
            }
            for (cx, cy, w, a) in &bumps {
                v += a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).exp();
            }
            v
        }
    };
    let fb = field();
    let fs = field();
    let p = FieldPair::from_fns(fem, fb, fs);
    let scale = amplitude / p.max_abs().max(1e-300);
    p.scale(scale)
}

#[derive(Clone, Debug, Serialize)]
pub struct InterpolationReport {
    pub r_values: Vec<f64>,
    pub worst_ratio: Vec<f64>,
}

/// `‖p‖_{L^r} / (√r ‖p‖_{L²}^{2/r} ‖p‖_{H¹}^{(r−2)/r})` with nodal quadrature.
pub fn interpolation_ratio(p: &FieldPair, fem: &FemMatrices, r: f64) -> f64 {
    let lr: f64 = p
        .bulk
        .iter()
        .zip(&fem.lumped_bulk)
        .chain(p.surf.iter().zip(&fem.lumped_surf))
        .map(|(v, w)| w * v.abs().powf(r))
        .sum::<f64>()
        .powf(1.0 / r);
    let l2sq: f64 = p
        .bulk
        .iter()
        .zip(&fem.lumped_bulk)
        .chain(p.surf.iter().zip(&fem.lumped_surf))
        .map(|(v, w)| w * v * v)
        .sum();
    let h1sq = l2sq + fem.a_bulk.bilinear(&p.bulk, &p.bulk) + fem.a_surf.bilinear(&p.surf, &p.surf);
    lr / (r.sqrt() * l2sq.sqrt().powf(2.0 / r) * h1sq.sqrt().powf((r - 2.0) / r))
}

pub fn verify_interpolation(
    mesh: &Mesh,
    fem: &FemMatrices,
    r_values: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<InterpolationReport> {
    if mesh.n_bulk() != fem.n_bulk() {
        return Err(Error::ShapeMismatch {
            expected: fem.n_bulk().to_string(),
            got: mesh.n_bulk().to_string(),
        });
    }
    if let Some(r) = r_values.iter().find(|r| !(2.0..=16.0).contains(*r)) {
        return Err(Error::InvalidParameter(format!("r = {r} outside [2, 16]")));
    }
    let samples: Vec<FieldPair> = (0..n_samples)
        .map(|i| random_smooth_pair(fem, seed.wrapping_add(i as u64), 1.0))
        .collect();
    let worst_ratio = r_values
        .iter()
        .map(|&r| {
            samples
                .iter()
                .map(|p| interpolation_ratio(p, fem, r))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(InterpolationReport {
        r_values: r_values.to_vec(),
        worst_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsfield::ExtReal;
    use crate::evolution::{run, StepStats};
    use crate::geometry::{assemble_fem, build_disk_mesh};
    use crate::physics::{MobilitySpec, PotentialSpec};

    fn setup(level: usize) -> (Mesh, FemMatrices) {
        let mesh = build_disk_mesh(level).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        (mesh, fem)
    }

    fn state(phase: FieldPair, potential: FieldPair) -> TimeState {
        TimeState {
            t: 0.0,
            phase,
            potential,
            stats: StepStats::default(),
        }
    }

    #[test]
    fn energy_examples() {
        let (_, fem) = setup(2);
        let params = ModelParams::default();
        assert_eq!(energy(&FieldPair::zeros(&fem), &params, &fem).unwrap(), 0.0);
        let e = energy(&FieldPair::constant(&fem, 0.5, 0.5), &params, &fem).unwrap();
        let f = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln()) - 0.25;
        assert!((e - f * (fem.area + fem.perimeter)).abs() < 1e-13);
        assert!((f + 0.119188).abs() < 1e-6);

        let mut quiet = params.clone();
        quiet.potential = PotentialSpec::zero();
        quiet.k = ExtReal::Finite(2.0);
        let p = random_smooth_pair(&fem, 1, 0.4);
        let e1 = energy(&p, &quiet, &fem).unwrap();
        let e2 = energy(&p.scale(2.0), &quiet, &fem).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-12 * e2);

        let mut bad = FieldPair::zeros(&fem);
        bad.surf[3] = 1.0;
        assert!(matches!(
            energy(&bad, &params, &fem),
            Err(Error::SingularEnergy { .. })
        ));
    }

    #[test]
    fn dissipation_examples() {
        let (mesh, fem) = setup(1);
        let mut params = ModelParams::with_kl(ExtReal::Infinite, ExtReal::Finite(1.0));
        params.beta = 2.0;
        let s = state(FieldPair::zeros(&fem), FieldPair::constant(&fem, 1.0, 0.5));
        assert!(dissipation_rate(&s, &params, &fem).unwrap().abs() < 1e-13);

        let pot = random_smooth_pair(&fem, 3, 1.0);
        let s = state(FieldPair::zeros(&fem), pot.clone());
        let d = dissipation_rate(&s, &params, &fem).unwrap();
        let f = form_inner(&pot, &pot, &params.form_spec(Slot::L), &fem).unwrap();
        assert!((d - f).abs() < 1e-12 * f.max(1.0));

        // Dense oracle with a variable bulk mobility: element loop by hand.
        params.mobility_bulk = MobilitySpec::polynomial(vec![1.0, 0.5]);
        let phase = random_smooth_pair(&fem, 4, 0.8);
        let s = state(phase.clone(), pot.clone());
        let d = dissipation_rate(&s, &params, &fem).unwrap();
        let mut oracle = 0.0;
        for tri in &mesh.triangles {
            let p = tri.map(|v| mesh.bulk_vertices[v]);
            let u = tri.map(|v| pot.bulk[v]);
            let area = 0.5
                * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
            let gx = ((u[1] - u[0]) * (p[2][1] - p[0][1]) - (u[2] - u[0]) * (p[1][1] - p[0][1]))
                / (2.0 * area);
            let gy = ((u[2] - u[0]) * (p[1][0] - p[0][0]) - (u[1] - u[0]) * (p[2][0] - p[0][0]))
                / (2.0 * area);
            let s = (phase.bulk[tri[0]] + phase.bulk[tri[1]] + phase.bulk[tri[2]]) / 3.0;
            oracle += (1.0 + 0.5 * s) * (gx * gx + gy * gy) * area;
        }
        let ns = mesh.n_surf();
        for e in 0..ns {
            let (i, j) = (e, (e + 1) % ns);
            let l = mesh.edge_length(e);
            oracle += ((pot.surf[j] - pot.surf[i]) / l).powi(2) * l;
            let (a, b) = (
                2.0 * pot.surf[i] - pot.bulk[mesh.surface_vertices[i]],
                2.0 * pot.surf[j] - pot.bulk[mesh.surface_vertices[j]],
            );
            oracle += l / 6.0 * (2.0 * a * a + 2.0 * b * b + 2.0 * a * b);
        }
        assert!((d - oracle).abs() < 1e-12 * oracle, "{d} vs {oracle}");
    }

    #[test]
    fn separation_examples() {
        let (_, fem) = setup(1);
        assert_eq!(separation_margin(&FieldPair::zeros(&fem)), 1.0);
        let mut p = FieldPair::zeros(&fem);
        p.bulk[2] = -0.97;
        assert!((separation_margin(&p) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn stationarity_of_zero_state() {
        let (_, fem) = setup(2);
        let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        let s = state(FieldPair::zeros(&fem), FieldPair::zeros(&fem));
        let r = stationarity_report(&s, &params, &fem).unwrap();
        assert_eq!(r.stdev_mu, 0.0);
        assert_eq!(r.beta_theta_minus_mu, 0.0);
        assert_eq!(r.predicted_mu, 0.0);
        assert_eq!(r.predicted_theta, 0.0);
    }

    #[test]
    fn mass_balance_identity_holds_every_step() {
        // Testing the potential equation with (α, 1) gives
        // α∫μ + ∫θ = α∫F'(φ) + ∫G'(ψ) up to the lagged concave part.
        let (mesh, fem) = setup(2);
        let mut params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        params.alpha = 0.5;
        params.beta = 2.0;
        let init = random_smooth_pair(&fem, 9, 0.3);
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
        let s = &traj.states[0];
        let r = stationarity_report(s, &params, &fem).unwrap();
        let lhs = 0.5 * r.mean_mu * fem.area + r.mean_theta * fem.perimeter;
        let denom = 0.5 * 2.0 * fem.area + fem.perimeter;
        assert!((lhs - r.predicted_theta * denom).abs() < 1e-10);
    }

    #[test]
    fn h2_surrogate_and_inverse_inequality() {
        let mut ratios = Vec::new();
        for level in [2, 3, 4] {
            let (mesh, fem) = setup(level);
            let p = random_smooth_pair(&fem, 2, 1.0);
            let q = h2_surrogate_sq(&p, &fem).unwrap();
            assert!(q >= p.l2_norm(&fem).powi(2));
            ratios.push(inverse_inequality_ratio(&p, &fem, mesh.mesh_size()).unwrap());
        }
        // smooth data: h‖Δ_h p‖/‖∇p‖ shrinks like h
        assert!(ratios[2] < ratios[0]);
        assert!(ratios.iter().all(|r| *r < 10.0));
    }

    #[test]
    fn interpolation_examples() {
        let (mesh, fem) = setup(2);
        let p = random_smooth_pair(&fem, 5, 1.0);
        assert!((interpolation_ratio(&p, &fem, 2.0) - 0.5f64.sqrt()).abs() < 1e-14);
        let c = FieldPair::constant(&fem, 0.7, 0.7);
        let s = fem.area + fem.perimeter;
        for r in [2.0, 4.0, 8.0] {
            let oracle = s.powf(1.0 / r - 0.5) / r.sqrt();
            assert!((interpolation_ratio(&c, &fem, r) - oracle).abs() < 1e-13);
        }
        assert!(verify_interpolation(&mesh, &fem, &[1.0], 3, 0).is_err());
    }

    #[test]
    fn poincare_small_mesh() {
        let (mesh, fem) = setup(2);
        let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        let r = verify_poincare(&mesh, &fem, &params).unwrap();
        assert!(r.lambda1 > 0.0);
        let worst = poincare_ratio_check(&fem, &params, 100, 1).unwrap();
        assert!(worst <= r.c_p * (1.0 + 1e-9), "{worst} vs {}", r.c_p);
        let inf = ModelParams::default();
        assert!(verify_poincare(&mesh, &fem, &inf).is_err());

        let mut k0 = params.clone();
        k0.k = ExtReal::Finite(0.0);
        k0.alpha = 0.5;
        let r0 = verify_poincare(&mesh, &fem, &k0).unwrap();
        assert!(r0.lambda1 > 0.0);
        assert!(poincare_ratio_check(&fem, &k0, 50, 2).unwrap() <= r0.c_p * (1.0 + 1e-9));
    }

    #[test]
    fn chain_rule_trivial_cases() {
        let (mesh, fem) = setup(2);
        let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        let window: Vec<TimeState> = (0..4)
            .map(|i| TimeState {
                t: 0.1 * i as f64,
                ..state(FieldPair::zeros(&fem), FieldPair::constant(&fem, 0.3, 0.3))
            })
            .collect();
        let r = chain_rule_residual(&window, &params, &fem).unwrap();
        assert!(r.lhs.iter().chain(&r.rhs).all(|v| v.abs() < 1e-12));
        assert_eq!(r.normalized, 0.0);

        let init = random_smooth_pair(&fem, 6, 0.4);
        let traj = run(
            &init,
            0.05,
            &SchemeConfig::with_dt(0.01),
            &params,
            &mesh,
            &fem,
            &mut [],
        )
        .unwrap();
        let r = chain_rule_residual(&traj.states, &params, &fem).unwrap();
        assert!(r.mobility_terms.iter().all(|v| *v == 0.0));

        let mut bad = traj.states.clone();
        bad[2].t += 0.001;
        assert!(chain_rule_residual(&bad, &params, &fem).is_err());
    }

    #[test]
    fn continuous_dependence_trivial_cases() {
        let (mesh, fem) = setup(1);
        let params = ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0));
        let cfg = SchemeConfig::with_dt(0.01);
        let a = random_smooth_pair(&fem, 1, 0.3);
        let r = continuous_dependence_experiment(&a, &a, 0.05, &cfg, &params, &mesh, &fem).unwrap();
        assert!(r.y.iter().all(|v| *v == 0.0));
        assert_eq!(r.fitted_c, 0.0);

        let pert =
            crate::bsfield::project_mean_zero(&random_smooth_pair(&fem, 2, 1.0), &params, &fem)
                .unwrap();
        let b1 = a.axpy(0.01, &pert);
        let b2 = a.axpy(0.02, &pert);
        let r1 =
            continuous_dependence_experiment(&a, &b1, 0.0, &cfg, &params, &mesh, &fem).unwrap();
        let r2 =
            continuous_dependence_experiment(&a, &b2, 0.0, &cfg, &params, &mesh, &fem).unwrap();
        assert!((r2.y[0] / r1.y[0] - 4.0).abs() < 1e-9);

        let shifted = a.map(|v| v + 0.01);
        assert!(matches!(
            continuous_dependence_experiment(&a, &shifted, 0.05, &cfg, &params, &mesh, &fem),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn records_csv_header() {
        let (mesh, fem) = setup(1);
        let params = ModelParams::default();
        let traj = run(
            &random_smooth_pair(&fem, 1, 0.3),
            0.02,
            &SchemeConfig::with_dt(0.01),
            &params,
            &mesh,
            &fem,
            &mut [],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records_csv(&traj.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,E,mass_b,mass_s,mass_combined,D,delta,stdev_mu,stdev_theta,beta_theta_minus_mu,dual_dt_norm\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(energy_drift(&traj.records).iter().all(|d| *d <= 1e-12));
    }
}
