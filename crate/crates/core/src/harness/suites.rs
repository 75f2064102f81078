//! Built-in verification suites and initial-data generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsfield::{
    apply_trace_constraint, chi, project_mean_zero, FieldPair, ModelParams, Slot,
};
use crate::diagnostics::{
    poincare_ratio_check, random_smooth_pair, verify_interpolation, verify_poincare,
};
use crate::elliptic::{
    assemble_constant_form, mobility_weights, norm_equivalence_constants, AssembledForm,
};
use crate::error::{Error, Result};
use crate::geometry::{assemble_fem, build_disk_mesh_capped, FemMatrices};
use crate::harness::config::{Generator, InitialSpec, SuiteSpec};
use crate::physics::MobilitySpec;

/// Initial phase pair for a generator. With `K = 0` the bulk trace is tied
/// to `α ψ`.
pub fn generate_initial(
    spec: &InitialSpec,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<FieldPair> {
    let (a, m) = (spec.amplitude, spec.mean);
    let seed = || {
        spec.seed
            .ok_or_else(|| Error::config("initial.seed", "required for stochastic initial data"))
    };
    let p = match spec.generator {
        Generator::Zero => FieldPair::zeros(fem),
        Generator::Constant => FieldPair::constant(fem, m, m),
        Generator::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed()?);
            let mut draw =
                |n: usize| -> Vec<f64> { (0..n).map(|_| m + rng.random_range(-a..=a)).collect() };
            let bulk = draw(fem.n_bulk());
            let surf = draw(fem.n_surf());
            FieldPair::new(bulk, surf)
        }
        Generator::Smooth => random_smooth_pair(fem, seed()?, a).map(|v| v + m),
        Generator::Cosine => FieldPair::with_trace(
            fem,
            fem.interpolate_bulk(|x, y| {
                m + a * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
            }),
        ),
    };
    if params.k.is_zero() {
        apply_trace_constraint(&p, &params.form_spec(Slot::K), fem)
    } else {
        Ok(p)
    }
}

/// Smooth perturbation with the conserved means equal to zero, scaled to
/// unit max-norm.
pub fn mean_zero_perturbation(
    params: &ModelParams,
    fem: &FemMatrices,
    seed: u64,
) -> Result<FieldPair> {
    let mut d = project_mean_zero(&random_smooth_pair(fem, seed, 1.0), params, fem)?;
    if params.k.is_zero() {
        d = apply_trace_constraint(&d, &params.form_spec(Slot::K), fem)?;
        d = project_mean_zero(&d, params, fem)?;
    }
    Ok(d.scale(1.0 / d.max_abs().max(1e-300)))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub l2_errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log h`.
    pub order: f64,
}

/// Phase at which mobilities are frozen in the manufactured problems.
pub fn manufactured_phase(x: f64, y: f64) -> f64 {
    0.5 * x.sin() * y.cos()
}

const FD: f64 = 1e-4;

fn grad(u: &dyn Fn(f64, f64) -> f64, x: f64, y: f64) -> [f64; 2] {
    [
        (u(x + FD, y) - u(x - FD, y)) / (2.0 * FD),
        (u(x, y + FD) - u(x, y - FD)) / (2.0 * FD),
    ]
}

/// Manufactured solutions of the weighted bulk-surface problem for the `L`
/// slot of `params`, solved on each level; the mobilities of `params` are
/// evaluated at [`manufactured_phase`].
pub fn elliptic_convergence(
    params: &ModelParams,
    levels: &[usize],
    max_level: usize,
) -> Result<ConvergenceReport> {
    if params.l.is_zero() {
        return Err(Error::InvalidParameter(
            "manufactured solutions cover L in (0, inf]".into(),
        ));
    }
    if params.beta == 0.0 && !params.l.is_infinite() {
        return Err(Error::InvalidParameter(
            "manufactured solutions need beta != 0".into(),
        ));
    }
    let chi_l = chi(params.l)?;
    let beta = params.beta;
    let (mb, ms) = (params.mobility_bulk.clone(), params.mobility_surf.clone());
    let m_of =
        |mob: &MobilitySpec, x: f64, y: f64| mob.eval(manufactured_phase(x, y).clamp(-1.0, 1.0));

    let decoupled = params.l.is_infinite();
    let u: Box<dyn Fn(f64, f64) -> f64> = if decoupled {
        Box::new(|x: f64, y: f64| x * (x * x + y * y - 3.0))
    } else {
        Box::new(|x: f64, y: f64| x.exp() * y.sin() + 0.5 * x * x)
    };
    let normal_flux = |t: f64| {
        let (x, y) = (t.cos(), t.sin());
        let g = grad(&*u, x, y);
        m_of(&mb, x, y) * (g[0] * x + g[1] * y)
    };
    let v = |t: f64| -> f64 {
        if decoupled {
            (2.0 * t).cos() + 0.5 * t.sin()
        } else {
            (u(t.cos(), t.sin()) + normal_flux(t) / chi_l) / beta
        }
    };
    let f = |x: f64, y: f64| {
        let flux = |x: f64, y: f64| {
            let g = grad(&*u, x, y);
            let m = m_of(&mb, x, y);
            [m * g[0], m * g[1]]
        };
        let dx = (flux(x + FD, y)[0] - flux(x - FD, y)[0]) / (2.0 * FD);
        let dy = (flux(x, y + FD)[1] - flux(x, y - FD)[1]) / (2.0 * FD);
        -(dx + dy)
    };
    let g = |t: f64| {
        let sflux = |t: f64| m_of(&ms, t.cos(), t.sin()) * (v(t + FD) - v(t - FD)) / (2.0 * FD);
        let lap = -(sflux(t + FD) - sflux(t - FD)) / (2.0 * FD);
        if decoupled {
            lap
        } else {
            lap + beta * normal_flux(t)
        }
    };
    let angle = |x: f64, y: f64| y.atan2(x);

    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    for &level in levels {
        let mesh = build_disk_mesh_capped(level, max_level)?;
        let fem = assemble_fem(&mesh)?;
        let phase = FieldPair::from_fns(&fem, manufactured_phase, manufactured_phase);
        let wb = mobility_weights(&mb, &fem.triangle_means(&phase.bulk), "bulk")?;
        let ws = mobility_weights(&ms, &fem.edge_means(&phase.surf), "surface")?;
        let form = AssembledForm::from_weights(&fem, params.form_spec(Slot::L), beta, wb, ws)?;
        let rhs = FieldPair::from_fns(&fem, f, |x, y| g(angle(x, y)));
        let sol = form.solve(&form.project(&rhs))?;
        let exact = form.project(&FieldPair::from_fns(&fem, &*u, |x, y| v(angle(x, y))));
        let e = sol.pair.sub(&exact);
        let err =
            (fem.m_bulk.bilinear(&e.bulk, &e.bulk) + fem.m_surf.bilinear(&e.surf, &e.surf)).sqrt();
        hs.push(mesh.mesh_size());
        errs.push(err);
    }
    Ok(ConvergenceReport {
        levels: levels.to_vec(),
        order: fitted_order(&hs, &errs),
        h: hs,
        l2_errors: errs,
    })
}

pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = h.iter().zip(err).map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct NormEquivalenceReport {
    pub samples: usize,
    pub lower: f64,
    pub upper: f64,
    /// Range of `‖p‖_L / ‖p‖_{L,[φ,ψ]}`.
    pub primal_ratio: [f64; 2],
    /// Range of `‖f‖_{L,*} / ‖f‖_{L,[φ,ψ],*}`.
    pub dual_ratio: [f64; 2],
    pub primal_violations: usize,
    pub dual_violations: usize,
}

impl NormEquivalenceReport {
    pub fn passed(&self) -> bool {
        self.primal_violations == 0 && self.dual_violations == 0
    }
}

/// Checks `lower ≤ ‖·‖_L / ‖·‖_{L,[φ,ψ]} ≤ upper` and the same for the dual
/// norms on random pairs and random admissible phases, with
/// `lower = min{1, √m*}` and `upper = max{1, √M*}`.
pub fn norm_equivalence_check(
    params: &ModelParams,
    fem: &FemMatrices,
    samples: usize,
    seed: u64,
) -> Result<NormEquivalenceReport> {
    let m_star = params.mobility_bulk.m_star.min(params.mobility_surf.m_star);
    let big_m = params
        .mobility_bulk
        .big_m_star
        .max(params.mobility_surf.big_m_star);
    let (lo_sq, hi_sq) = norm_equivalence_constants(m_star, big_m);
    let (lower, upper) = (lo_sq.sqrt(), hi_sq.sqrt());
    let spec = params.form_spec(Slot::L);
    let plain = assemble_constant_form(fem, params, Slot::L)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
    };
    let slack = 1e-12;
    let mut report = NormEquivalenceReport {
        samples,
        lower,
        upper,
        primal_ratio: [f64::INFINITY, 0.0],
        dual_ratio: [f64::INFINITY, 0.0],
        primal_violations: 0,
        dual_violations: 0,
    };
    for _ in 0..samples {
        let phase = FieldPair::new(
            uniform(fem.n_bulk(), &mut rng),
            uniform(fem.n_surf(), &mut rng),
        );
        let wb = mobility_weights(
            &params.mobility_bulk,
            &fem.triangle_means(&phase.bulk),
            "bulk",
        )?;
        let ws = mobility_weights(
            &params.mobility_surf,
            &fem.edge_means(&phase.surf),
            "surface",
        )?;
        let weighted = AssembledForm::from_weights(fem, spec, params.beta, wb, ws)?;

        let p = FieldPair::new(
            uniform(fem.n_bulk(), &mut rng),
            uniform(fem.n_surf(), &mut rng),
        );
        let p = if spec.chi_param.is_zero() {
            apply_trace_constraint(&p, &spec, fem)?
        } else {
            p
        };
        let (a, b) = (plain.norm_sq(&p).sqrt(), weighted.norm_sq(&p).sqrt());
        let r = a / b;
        report.primal_ratio = [report.primal_ratio[0].min(r), report.primal_ratio[1].max(r)];
        if a < lower * b * (1.0 - slack) || a > upper * b * (1.0 + slack) {
            report.primal_violations += 1;
        }

        let f = plain.project(&FieldPair::new(
            uniform(fem.n_bulk(), &mut rng),
            uniform(fem.n_surf(), &mut rng),
        ));
        let (a, b) = (plain.dual_norm(&f)?, weighted.dual_norm(&f)?);
        let r = a / b;
        report.dual_ratio = [report.dual_ratio[0].min(r), report.dual_ratio[1].max(r)];
        if a < lower * b * (1.0 - slack) || a > upper * b * (1.0 + slack) {
            report.dual_violations += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityLevel {
    pub level: usize,
    pub h: f64,
    /// `None` when `K = ∞` (no Poincaré inequality is posed).
    pub lambda1: Option<f64>,
    pub c_p: Option<f64>,
    pub poincare_worst_ratio: Option<f64>,
    pub interpolation_worst: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub r_values: Vec<f64>,
    pub levels: Vec<InequalityLevel>,
    /// Largest relative change of `C_P` between consecutive levels.
    pub c_p_spread: Option<f64>,
    /// Largest relative change of each interpolation ratio between consecutive levels.
    pub interpolation_spread: Vec<f64>,
    pub norm_equivalence: NormEquivalenceReport,
    pub failures: Vec<String>,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_spread(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| ((w[1] - w[0]) / w[0]).abs())
        .fold(0.0, f64::max)
}

pub fn inequality_suite(
    params: &ModelParams,
    suite: &SuiteSpec,
    max_level: usize,
) -> Result<InequalityReport> {
    let mut levels = Vec::new();
    let mut failures = Vec::new();
    let mut norm_equivalence = None;
    for &level in &suite.levels {
        let mesh = build_disk_mesh_capped(level, max_level)?;
        let fem = assemble_fem(&mesh)?;
        let (lambda1, c_p, worst) = if params.k.is_infinite() {
            log::warn!("K = inf: skipping the Poincare constant");
            (None, None, None)
        } else {
            let p = verify_poincare(&mesh, &fem, params)?;
            let worst = poincare_ratio_check(&fem, params, suite.samples, suite.seed)?;
            if !(p.lambda1 > 0.0) {
                failures.push(format!("level {level}: lambda1 = {}", p.lambda1));
            }
            if worst > p.c_p * (1.0 + 1e-9) {
                failures.push(format!(
                    "level {level}: Poincare ratio {worst} exceeds C_P = {}",
                    p.c_p
                ));
            }
            (Some(p.lambda1), Some(p.c_p), Some(worst))
        };
        let interp = verify_interpolation(&mesh, &fem, &suite.r_values, suite.samples, suite.seed)?;
        if norm_equivalence.is_none() {
            let r = norm_equivalence_check(params, &fem, suite.samples, suite.seed)?;
            if !r.passed() {
                failures.push(format!(
                    "norm equivalence: {} primal and {} dual violations",
                    r.primal_violations, r.dual_violations
                ));
            }
            norm_equivalence = Some(r);
        }
        levels.push(InequalityLevel {
            level,
            h: mesh.mesh_size(),
            lambda1,
            c_p,
            poincare_worst_ratio: worst,
            interpolation_worst: interp.worst_ratio,
        });
    }
    let c_p: Vec<f64> = levels.iter().filter_map(|l| l.c_p).collect();
    let c_p_spread = (c_p.len() == levels.len() && !c_p.is_empty()).then(|| rel_spread(&c_p));
    let interpolation_spread: Vec<f64> = (0..suite.r_values.len())
        .map(|j| {
            let v: Vec<f64> = levels.iter().map(|l| l.interpolation_worst[j]).collect();
            rel_spread(&v)
        })
        .collect();
    Ok(InequalityReport {
        r_values: suite.r_values.clone(),
        levels,
        c_p_spread,
        interpolation_spread,
        norm_equivalence: norm_equivalence.expect("at least one level"),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsfield::{generalized_mean, ExtReal, MeanValue};
    use crate::geometry::build_disk_mesh;

    fn fem(level: usize) -> FemMatrices {
        assemble_fem(&build_disk_mesh(level).unwrap()).unwrap()
    }

    #[test]
    fn generators() {
        let fem = fem(2);
        let params = ModelParams::default();
        let spec = |g, seed| InitialSpec {
            generator: g,
            seed,
            amplitude: 0.2,
            mean: 0.1,
        };
        let c = generate_initial(&spec(Generator::Constant, None), &params, &fem).unwrap();
        assert!(c.bulk.iter().chain(&c.surf).all(|v| *v == 0.1));
        let r1 = generate_initial(&spec(Generator::Random, Some(3)), &params, &fem).unwrap();
        let r2 = generate_initial(&spec(Generator::Random, Some(3)), &params, &fem).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.bulk.iter().all(|v| (v - 0.1).abs() <= 0.2));
        assert!(generate_initial(&spec(Generator::Smooth, None), &params, &fem).is_err());

        let mut k0 = ModelParams::with_kl(ExtReal::Finite(0.0), ExtReal::Finite(1.0));
        k0.alpha = 0.5;
        let p = generate_initial(&spec(Generator::Random, Some(1)), &k0, &fem).unwrap();
        for (j, &v) in fem.trace.iter().enumerate() {
            assert!((p.bulk[v] - 0.5 * p.surf[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbation_is_mean_zero() {
        let fem = fem(2);
        for params in [
            ModelParams::with_kl(ExtReal::Finite(1.0), ExtReal::Finite(1.0)),
            ModelParams::default(),
        ] {
            let d = mean_zero_perturbation(&params, &fem, 5).unwrap();
            assert!((d.max_abs() - 1.0).abs() < 1e-14);
            assert!(generalized_mean(&d, &params, &fem).unwrap().abs_max() < 1e-14);
            if let MeanValue::Pair(..) = generalized_mean(&d, &params, &fem).unwrap() {
                assert!(params.l.is_infinite());
            }
        }
    }

    #[test]
    fn fitted_order_of_exact_power() {
        let h = [0.4, 0.2, 0.1];
        let e: Vec<f64> = h.iter().map(|h| 3.0 * h * h).collect();
        assert!((fitted_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn manufactured_errors_decrease() {
        for l in [ExtReal::Finite(1.0), ExtReal::Infinite] {
            let params = ModelParams::with_kl(ExtReal::Infinite, l);
            let r = elliptic_convergence(&params, &[2, 3], 8).unwrap();
            assert!(r.l2_errors[1] < 0.5 * r.l2_errors[0], "{:?}", r.l2_errors);
        }
    }

    #[test]
    fn norm_equivalence_on_small_mesh() {
        let fem = fem(2);
        let mut params = ModelParams::with_kl(ExtReal::Infinite, ExtReal::Finite(1.0));
        params.mobility_bulk = MobilitySpec::polynomial(vec![1.25, 0.75]);
        params.mobility_surf = MobilitySpec::polynomial(vec![1.25, -0.75]);
        let r = norm_equivalence_check(&params, &fem, 10, 2).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.primal_ratio[0] >= r.lower * (1.0 - 1e-12));
    }
}
