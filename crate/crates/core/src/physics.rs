//! Logarithmic potentials, mobilities, assumption checks and the smooth
//! mobility regularization.

use std::io::Read;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Bulk,
    Surf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PotentialKind {
    /// `Θ/2[(1+s)ln(1+s) + (1−s)ln(1−s)] − Θ₀ s²/2`.
    FloryHuggins,
    /// Entropy part as above plus a polynomial smooth part `Σ c_i s^i` whose
    /// derivative has the declared Lipschitz constant on `[-1, 1]`.
    Custom {
        bulk_coeffs: Vec<f64>,
        surf_coeffs: Vec<f64>,
        lipschitz_bulk: f64,
        lipschitz_surf: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub theta_bulk: f64,
    pub theta0_bulk: f64,
    pub theta_surf: f64,
    pub theta0_surf: f64,
    /// Convexity floors for `F₁''` and `G₁''`.
    pub floor_bulk: f64,
    pub floor_surf: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self::flory_huggins(1.0, 2.0)
    }
}

impl PotentialSpec {
    /// Same temperatures on both sides.
    pub fn flory_huggins(theta: f64, theta0: f64) -> Self {
        Self {
            kind: PotentialKind::FloryHuggins,
            theta_bulk: theta,
            theta0_bulk: theta0,
            theta_surf: theta,
            theta0_surf: theta0,
            floor_bulk: theta,
            floor_surf: theta,
        }
    }

    /// Potentials switched off (for the pure gradient part of the energy).
    pub fn zero() -> Self {
        Self {
            kind: PotentialKind::Custom {
                bulk_coeffs: vec![],
                surf_coeffs: vec![],
                lipschitz_bulk: 0.0,
                lipschitz_surf: 0.0,
            },
            theta_bulk: 0.0,
            theta0_bulk: 0.0,
            theta_surf: 0.0,
            theta0_surf: 0.0,
            floor_bulk: 0.0,
            floor_surf: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    pub fn theta(&self, side: Side) -> f64 {
        match side {
            Side::Bulk => self.theta_bulk,
            Side::Surf => self.theta_surf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        for (name, v) in [
            ("theta_bulk", self.theta_bulk),
            ("theta_surf", self.theta_surf),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        match &self.kind {
            PotentialKind::FloryHuggins => {
                if self.theta0_bulk <= self.theta_bulk || self.theta0_surf <= self.theta_surf {
                    return Err(Error::InvalidParameter(
                        "Flory-Huggins potentials need theta0 > theta on both sides".into(),
                    ));
                }
            }
            PotentialKind::Custom {
                lipschitz_bulk,
                lipschitz_surf,
                ..
            } => {
                if !(*lipschitz_bulk >= 0.0 && *lipschitz_surf >= 0.0)
                    || !lipschitz_bulk.is_finite()
                    || !lipschitz_surf.is_finite()
                {
                    return Err(Error::InvalidParameter(
                        "custom potentials must declare finite Lipschitz constants".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Convex singular part `F₁` / `G₁` or its derivatives.
    pub fn convex_part(&self, side: Side, s: f64, order: u8) -> Result<f64> {
        let th = self.theta(side);
        if th == 0.0 {
            return Ok(0.0);
        }
        let a = s.abs();
        if order == 0 {
            if a > 1.0 {
                return Ok(f64::INFINITY);
            }
            if a == 1.0 {
                return Ok(th * std::f64::consts::LN_2);
            }
            return Ok(0.5 * th * ((1.0 + s) * s.ln_1p() + (1.0 - s) * (-s).ln_1p()));
        }
        if a >= 1.0 {
            return Err(Error::Singularity { s });
        }
        match order {
            1 => Ok(th * s.atanh()),
            2 => Ok(th / ((1.0 - s) * (1.0 + s))),
            _ => Err(Error::InvalidParameter(format!(
                "potential order {order} not in {{0,1,2}}"
            ))),
        }
    }

    /// Smooth concave (or custom polynomial) part `F₂` / `G₂`.
    pub fn smooth_part(&self, side: Side, s: f64, order: u8) -> Result<f64> {
        if order > 2 {
            return Err(Error::InvalidParameter(format!(
                "potential order {order} not in {{0,1,2}}"
            )));
        }
        match &self.kind {
            PotentialKind::FloryHuggins => {
                let t0 = match side {
                    Side::Bulk => self.theta0_bulk,
                    Side::Surf => self.theta0_surf,
                };
                Ok(match order {
                    0 => -0.5 * t0 * s * s,
                    1 => -t0 * s,
                    _ => -t0,
                })
            }
            PotentialKind::Custom {
                bulk_coeffs,
                surf_coeffs,
                ..
            } => {
                let c = match side {
                    Side::Bulk => bulk_coeffs,
                    Side::Surf => surf_coeffs,
                };
                Ok(poly_eval(c, s, order as usize))
            }
        }
    }

    /// Full potential `F = F₁ + F₂` (or `G`) and its first two derivatives.
    pub fn eval(&self, side: Side, s: f64, order: u8) -> Result<f64> {
        let singular = self.convex_part(side, s, order)?;
        if singular.is_infinite() {
            return Ok(singular);
        }
        Ok(singular + self.smooth_part(side, s, order)?)
    }
}

pub fn potential_eval(spec: &PotentialSpec, side: Side, s: f64, order: u8) -> Result<f64> {
    spec.eval(side, s, order)
}

/// `order`-th derivative of `Σ c_i s^i` by Horner's rule.
fn poly_eval(c: &[f64], s: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(order).rev() {
        let f: f64 = (0..order).map(|j| (i - j) as f64).product();
        acc = acc * s + ci * f;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum MobilityKind {
    Constant(f64),
    /// Coefficients in increasing degree.
    Polynomial(Vec<f64>),
    /// Piecewise-linear interpolation of `(s, m)` samples.
    Tabulated {
        s: Vec<f64>,
        m: Vec<f64>,
    },
    /// Mollification of `base` with bump width `1/k`.
    Regularized {
        base: Box<MobilitySpec>,
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MobilitySpec {
    pub kind: MobilityKind,
    pub m_star: f64,
    #[serde(rename = "M_star")]
    pub big_m_star: f64,
}

impl MobilitySpec {
    pub fn constant(c: f64) -> Self {
        Self {
            kind: MobilityKind::Constant(c),
            m_star: c,
            big_m_star: c,
        }
    }

    /// Bounds are taken from a dense sample of `[-1, 1]`.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let mut spec = Self {
            kind: MobilityKind::Polynomial(coeffs),
            m_star: 0.0,
            big_m_star: 0.0,
        };
        spec.set_sampled_bounds();
        spec
    }

    pub fn tabulated(s: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if s.len() != m.len() || s.len() < 2 {
            return Err(Error::InvalidParameter(
                "tabulated mobility needs >= 2 matching samples".into(),
            ));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "tabulated s values must be strictly increasing".into(),
            ));
        }
        if s[0] > -1.0 || s[s.len() - 1] < 1.0 {
            return Err(Error::InvalidParameter(
                "tabulated s values must span [-1, 1]".into(),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "tabulated mobility values must be finite".into(),
            ));
        }
        let mut spec = Self {
            kind: MobilityKind::Tabulated { s, m },
            m_star: 0.0,
            big_m_star: 0.0,
        };
        spec.set_sampled_bounds();
        Ok(spec)
    }

    /// Reads a two-column `s,m` CSV with a header row.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let (mut s, mut m) = (Vec::new(), Vec::new());
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| {
                rec.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Parse(format!("mobility table row {row}: bad column {i}"))
                    })
            };
            s.push(parse(0)?);
            m.push(parse(1)?);
        }
        Self::tabulated(s, m)
    }

    fn set_sampled_bounds(&mut self) {
        let n = 4000;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut probe = |x: f64| {
            let v = self.eval(x);
            lo = lo.min(v);
            hi = hi.max(v);
        };
        for i in 0..=n {
            probe(-1.0 + 2.0 * i as f64 / n as f64);
        }
        if let MobilityKind::Tabulated { s, .. } = &self.kind {
            for &x in s.clone().iter().filter(|x| x.abs() <= 1.0) {
                probe(x);
            }
        }
        self.m_star = lo;
        self.big_m_star = hi;
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, MobilityKind::Constant(_))
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_order(s, 0)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        self.eval_order(s, 1)
    }

    pub fn second_deriv(&self, s: f64) -> f64 {
        self.eval_order(s, 2)
    }

    fn eval_order(&self, s: f64, order: usize) -> f64 {
        match &self.kind {
            MobilityKind::Constant(c) => {
                if order == 0 {
                    *c
                } else {
                    0.0
                }
            }
            MobilityKind::Polynomial(c) => poly_eval(c, s, order),
            MobilityKind::Tabulated { s: xs, m } => {
                tabulated_eval(xs, m, s.clamp(-1.0, 1.0), order)
            }
            MobilityKind::Regularized { base, k } => mollified(base, *k, s, order),
        }
    }
}

fn tabulated_eval(xs: &[f64], m: &[f64], s: f64, order: usize) -> f64 {
    let i = match xs.partition_point(|x| *x <= s) {
        0 => 0,
        p if p >= xs.len() => xs.len() - 2,
        p => p - 1,
    };
    let slope = (m[i + 1] - m[i]) / (xs[i + 1] - xs[i]);
    match order {
        0 => m[i] + slope * (s - xs[i]),
        1 => slope,
        _ => 0.0,
    }
}

const MOLLIFIER_NODES: usize = 96;

struct Kernel {
    x: Vec<f64>,
    w0: Vec<f64>,
    w1: Vec<f64>,
}

/// `ρ(x) = exp(−1/(1−x²))` on `(−1, 1)` with discretely normalized weights
/// for ρ and ρ'.
fn kernel() -> &'static Kernel {
    static K: OnceLock<Kernel> = OnceLock::new();
    K.get_or_init(|| {
        let (x, w) = gauss_legendre(MOLLIFIER_NODES);
        let rho: Vec<f64> = x.iter().map(|&x| (-1.0 / (1.0 - x * x)).exp()).collect();
        let z: f64 = rho.iter().zip(&w).map(|(r, w)| r * w).sum();
        let w0 = rho.iter().zip(&w).map(|(r, w)| r * w / z).collect();
        let w1 = x
            .iter()
            .zip(&rho)
            .zip(&w)
            .map(|((&x, r), w)| w * r * (-2.0 * x / (1.0 - x * x).powi(2)) / z)
            .collect();
        Kernel { x, w0, w1 }
    })
}

/// Continuation of `base` past ±1 by odd reflection about the endpoint
/// values, clamped into `[m*/2, 2M*]`.
fn extended(base: &MobilitySpec, t: f64, order: usize) -> f64 {
    let (lo, hi) = (0.5 * base.m_star, 2.0 * base.big_m_star);
    let (v, d) = if t > 1.0 {
        let r = (2.0 - t).max(-1.0);
        (2.0 * base.eval(1.0) - base.eval(r), base.deriv(r))
    } else if t < -1.0 {
        let r = (-2.0 - t).min(1.0);
        (2.0 * base.eval(-1.0) - base.eval(r), base.deriv(r))
    } else {
        return if order == 0 {
            base.eval(t)
        } else {
            base.deriv(t)
        };
    };
    match order {
        0 => v.clamp(lo, hi),
        _ if v < lo || v > hi => 0.0,
        _ => d,
    }
}

// Derivatives move one order onto the extension so that the first
// derivative is exactly that of the discrete convolution.
fn mollified(base: &MobilitySpec, k: usize, s: f64, order: usize) -> f64 {
    let ker = kernel();
    let kf = k as f64;
    let (w, scale, inner) = match order {
        0 => (&ker.w0, 1.0, 0),
        1 => (&ker.w0, 1.0, 1),
        _ => (&ker.w1, kf, 1),
    };
    scale
        * ker
            .x
            .iter()
            .zip(w)
            .map(|(&x, w)| w * extended(base, s - x / kf, inner))
            .sum::<f64>()
}

/// C² mollification with width `1/k`.
pub fn regularize_mobility(spec: &MobilitySpec, k: usize) -> Result<MobilitySpec> {
    if k == 0 {
        return Err(Error::Domain(
            "regularization index k must be positive".into(),
        ));
    }
    if let MobilityKind::Constant(_) = spec.kind {
        return Ok(spec.clone());
    }
    Ok(MobilitySpec {
        kind: MobilityKind::Regularized {
            base: Box::new(spec.clone()),
            k,
        },
        m_star: 0.5 * spec.m_star,
        big_m_star: 2.0 * spec.big_m_star,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    pub kappa1: f64,
    pub kappa2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub c_sharp: f64,
    pub gamma_sharp: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub mobility_bulk_bounds: (f64, f64),
    pub mobility_surf_bounds: (f64, f64),
    pub min_convexity_bulk: f64,
    pub min_convexity_surf: f64,
    pub domination: DominationReport,
    pub growth_bulk: Option<GrowthReport>,
    pub growth_surf: Option<GrowthReport>,
    pub failures: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Samples on a geometric grid accumulating at ±1, plus a uniform grid.
pub fn assumption_grid(n_samples: usize) -> Vec<f64> {
    let half = n_samples / 2;
    let mut out: Vec<f64> = Vec::with_capacity(2 * n_samples + 1);
    for i in 0..half {
        let gap = 10f64.powf(-14.0 * (i as f64 + 1.0) / half as f64);
        out.push(1.0 - gap);
        out.push(-(1.0 - gap));
    }
    for i in 0..=half {
        out.push(-1.0 + 2.0 * (i as f64 + 0.5) / (half as f64 + 1.0));
    }
    out.retain(|s| s.abs() < 1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Checks mobility bounds, convexity floors, boundary domination of the
/// singular parts and the logarithmic growth condition with exponent 1.
pub fn validate_assumptions(
    spec: &PotentialSpec,
    mob_b: &MobilitySpec,
    mob_s: &MobilitySpec,
    alpha: f64,
    n_samples: usize,
) -> Result<AssumptionReport> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!(
            "n_samples = {n_samples} is below 100"
        )));
    }
    let grid = assumption_grid(n_samples);
    let mut failures = Vec::new();

    let mut bounds = |mob: &MobilitySpec, name: &str| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let uniform = (0..=n_samples).map(|i| -1.0 + 2.0 * i as f64 / n_samples as f64);
        for s in grid.iter().copied().chain(uniform) {
            let v = mob.eval(s);
            lo = lo.min(v);
            hi = hi.max(v);
            if !(v >= mob.m_star - 1e-12 && v <= mob.big_m_star + 1e-12) {
                failures.push(format!(
                    "{name} mobility m({s}) = {v} outside [{}, {}]",
                    mob.m_star, mob.big_m_star
                ));
            }
        }
        if mob.m_star <= 0.0 {
            failures.push(format!(
                "{name} mobility lower bound {} is not positive",
                mob.m_star
            ));
        }
        (lo, hi)
    };
    let mobility_bulk_bounds = bounds(mob_b, "bulk");
    let mobility_surf_bounds = bounds(mob_s, "surface");

    let mut min_conv = |side: Side, floor: f64, name: &str| -> Result<f64> {
        let mut lo = f64::INFINITY;
        for &s in &grid {
            let v = spec.convex_part(side, s, 2)?;
            lo = lo.min(v);
            if v < floor - 1e-12 {
                failures.push(format!("{name} convexity {v} < floor {floor} at s = {s}"));
                break;
            }
        }
        if floor <= 0.0 {
            failures.push(format!("{name} convexity floor {floor} is not positive"));
        }
        Ok(lo)
    };
    let min_convexity_bulk = min_conv(Side::Bulk, spec.floor_bulk, "bulk")?;
    let min_convexity_surf = min_conv(Side::Surf, spec.floor_surf, "surface")?;

    let pairs: Vec<(f64, f64)> = grid
        .iter()
        .map(|&s| {
            Ok((
                spec.convex_part(Side::Bulk, alpha * s, 1)?.abs(),
                spec.convex_part(Side::Surf, s, 1)?.abs(),
            ))
        })
        .collect::<Result<_>>()?;
    let kappa1 = pairs
        .iter()
        .filter(|(_, g)| *g > 1e-300)
        .map(|(f, g)| f / g)
        .fold(0.0f64, f64::max);
    let kappa2 = pairs
        .iter()
        .map(|(f, g)| f - kappa1 * g)
        .fold(0.0f64, f64::max);
    if !(kappa1.is_finite() && kappa2.is_finite()) {
        failures.push("no finite domination constants".into());
    }

    let growth = |side: Side| -> Result<Option<GrowthReport>> {
        let samples: Vec<(f64, f64)> = grid
            .iter()
            .map(|&s| {
                Ok((
                    spec.convex_part(side, s, 2)?.abs(),
                    spec.convex_part(side, s, 1)?.abs(),
                ))
            })
            .collect::<Result<_>>()?;
        let holds = |c: f64| samples.iter().all(|(f2, f1)| f2.ln() <= c.ln() + c * f1);
        let (mut lo, mut hi) = (1e-8, 1e8);
        if !holds(hi) {
            return Ok(None);
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(GrowthReport {
            c_sharp: hi,
            gamma_sharp: 1.0,
        }))
    };
    let growth_bulk = growth(Side::Bulk)?;
    let growth_surf = growth(Side::Surf)?;
    if growth_bulk.is_none() {
        failures.push("growth condition fails for every C_sharp <= 1e8".into());
    }

    if let PotentialKind::Custom {
        bulk_coeffs,
        surf_coeffs,
        lipschitz_bulk,
        lipschitz_surf,
    } = &spec.kind
    {
        for (c, lip, name) in [
            (bulk_coeffs, lipschitz_bulk, "bulk"),
            (surf_coeffs, lipschitz_surf, "surface"),
        ] {
            let worst = grid
                .iter()
                .map(|&s| poly_eval(c, s, 2).abs())
                .fold(0.0, f64::max);
            if worst > *lip + 1e-12 {
                failures.push(format!(
                    "{name} smooth part has |F2''| = {worst} above declared Lipschitz {lip}"
                ));
            }
        }
    }

    Ok(AssumptionReport {
        mobility_bulk_bounds,
        mobility_surf_bounds,
        min_convexity_bulk,
        min_convexity_surf,
        domination: DominationReport { kappa1, kappa2 },
        growth_bulk,
        growth_surf,
        failures,
    })
}
