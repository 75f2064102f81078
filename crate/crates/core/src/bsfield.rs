//! Coupled bulk-surface fields, the coupling weight χ, bilinear forms,
//! generalized means and the mean-zero / trace-constrained subspaces.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::FemMatrices;
use crate::physics::{MobilitySpec, PotentialSpec};
use crate::sparse::{CsrMatrix, Reduction};

/// A nonnegative real or +∞.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_zero(&self) -> bool {
        matches!(self, ExtReal::Finite(v) if *v == 0.0)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(*v),
            ExtReal::Infinite => None,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(v)
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for ExtReal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "+inf" | "infinity" | "Inf" | "∞" => Ok(ExtReal::Infinite),
            t => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::Parse(format!("`{s}` is not a number or `inf`")))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("`{s}` is not a number or `inf`")));
                }
                Ok(ExtReal::Finite(v))
            }
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::Infinite => s.serialize_str("inf"),
        }
    }
}

/// `1/r` on `(0, ∞)`, zero at `0` and `∞`.
pub fn chi(r: ExtReal) -> Result<f64> {
    match r {
        ExtReal::Infinite => Ok(0.0),
        ExtReal::Finite(v) if v.is_nan() || v < 0.0 => {
            Err(Error::Domain(format!("chi is undefined for r = {v}")))
        }
        ExtReal::Finite(v) if v == 0.0 => Ok(0.0),
        ExtReal::Finite(v) => Ok(1.0 / v),
    }
}

/// Nodal values of a bulk field and of a surface field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub bulk: Vec<f64>,
    pub surf: Vec<f64>,
}

impl FieldPair {
    pub fn new(bulk: Vec<f64>, surf: Vec<f64>) -> Self {
        Self { bulk, surf }
    }

    pub fn zeros(fem: &FemMatrices) -> Self {
        Self::constant(fem, 0.0, 0.0)
    }

    pub fn constant(fem: &FemMatrices, b: f64, s: f64) -> Self {
        Self {
            bulk: vec![b; fem.n_bulk()],
            surf: vec![s; fem.n_surf()],
        }
    }

    /// Samples `f` on bulk nodes and `g` on surface nodes.
    pub fn from_fns(
        fem: &FemMatrices,
        f: impl Fn(f64, f64) -> f64,
        g: impl Fn(f64, f64) -> f64,
    ) -> Self {
        Self {
            bulk: fem.interpolate_bulk(f),
            surf: fem.interpolate_surf(g),
        }
    }

    /// Bulk samples of `f` paired with their boundary traces.
    pub fn with_trace(fem: &FemMatrices, bulk: Vec<f64>) -> Self {
        let surf = fem.trace.iter().map(|&v| bulk[v]).collect();
        Self { bulk, surf }
    }

    pub fn len(&self) -> usize {
        self.bulk.len() + self.surf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, fem: &FemMatrices) -> Result<()> {
        if self.bulk.len() != fem.n_bulk() || self.surf.len() != fem.n_surf() {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {})", fem.n_bulk(), fem.n_surf()),
                got: format!("({}, {})", self.bulk.len(), self.surf.len()),
            });
        }
        if let Some(v) = self.bulk.iter().chain(&self.surf).find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field entry {v}")));
        }
        Ok(())
    }

    /// Concatenation `[bulk, surf]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.bulk);
        v.extend_from_slice(&self.surf);
        v
    }

    pub fn from_slice(v: &[f64], n_bulk: usize) -> Self {
        Self {
            bulk: v[..n_bulk].to_vec(),
            surf: v[n_bulk..].to_vec(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            bulk: self.bulk.iter().map(|v| f(*v)).collect(),
            surf: self.surf.iter().map(|v| f(*v)).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &FieldPair) -> Self {
        Self {
            bulk: self
                .bulk
                .iter()
                .zip(&other.bulk)
                .map(|(a, b)| a + c * b)
                .collect(),
            surf: self
                .surf
                .iter()
                .zip(&other.surf)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &FieldPair) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn max_abs(&self) -> f64 {
        self.bulk
            .iter()
            .chain(&self.surf)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// L² pairing `∫ p_b q_b + ∫_Γ p_s q_s` with the mass matrices.
    pub fn l2_inner(&self, other: &FieldPair, fem: &FemMatrices) -> f64 {
        fem.m_bulk.bilinear(&self.bulk, &other.bulk) + fem.m_surf.bilinear(&self.surf, &other.surf)
    }

    pub fn l2_norm(&self, fem: &FemMatrices) -> f64 {
        self.l2_inner(self, fem).max(0.0).sqrt()
    }

    /// `(∫φ, ∫_Γψ)`.
    pub fn integrals(&self, fem: &FemMatrices) -> (f64, f64) {
        (
            crate::sparse::dot(&fem.lumped_bulk, &self.bulk),
            crate::sparse::dot(&fem.lumped_surf, &self.surf),
        )
    }

    /// Writes one component as `node,value` rows.
    pub fn write_component_csv<W: Write>(values: &[f64], w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["node", "value"])?;
        for (i, v) in values.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{v:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_component_csv<R: Read>(r: R) -> Result<Vec<f64>> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let node: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("row {row}: bad node index")))?;
            if node != row {
                return Err(Error::Parse(format!(
                    "row {row}: node index {node} out of order"
                )));
            }
            let v: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("row {row}: bad value")))?;
            out.push(v);
        }
        Ok(out)
    }

    pub fn write_csv(
        &self,
        bulk_path: &std::path::Path,
        surf_path: &std::path::Path,
    ) -> Result<()> {
        Self::write_component_csv(&self.bulk, std::fs::File::create(bulk_path)?)?;
        Self::write_component_csv(&self.surf, std::fs::File::create(surf_path)?)?;
        Ok(())
    }

    pub fn read_csv(bulk_path: &std::path::Path, surf_path: &std::path::Path) -> Result<Self> {
        Ok(Self {
            bulk: Self::read_component_csv(std::fs::File::open(bulk_path)?)?,
            surf: Self::read_component_csv(std::fs::File::open(surf_path)?)?,
        })
    }
}

/// Which coupling slot a form belongs to: phase fields (`K`, coupling α) or
/// chemical potentials (`L`, coupling β).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Slot {
    K,
    L,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelParams {
    pub k: ExtReal,
    pub l: ExtReal,
    pub alpha: f64,
    pub beta: f64,
    pub potential: PotentialSpec,
    pub mobility_bulk: MobilitySpec,
    pub mobility_surf: MobilitySpec,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k: ExtReal::Infinite,
            l: ExtReal::Infinite,
            alpha: 1.0,
            beta: 1.0,
            potential: PotentialSpec::default(),
            mobility_bulk: MobilitySpec::constant(1.0),
            mobility_surf: MobilitySpec::constant(1.0),
        }
    }
}

impl ModelParams {
    pub fn with_kl(k: ExtReal, l: ExtReal) -> Self {
        Self {
            k,
            l,
            ..Self::default()
        }
    }

    pub fn form_spec(&self, slot: Slot) -> FormSpec {
        match slot {
            Slot::K => FormSpec {
                chi_param: self.k,
                coupling: self.alpha,
                slot,
            },
            Slot::L => FormSpec {
                chi_param: self.l,
                coupling: self.beta,
                slot,
            },
        }
    }

    /// Static admissibility: the ranges of K, L, α and `αβ|Ω| + |Γ| ≠ 0`.
    pub fn validate(&self, fem: &FemMatrices) -> Result<()> {
        chi(self.k)?;
        chi(self.l)?;
        if !(-1.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} is outside [-1, 1]",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        let a1 = self.alpha * self.beta * fem.area + fem.perimeter;
        if a1.abs() < 1e-12 * (fem.area + fem.perimeter) {
            return Err(Error::DegenerateParameter(format!(
                "alpha*beta*|Omega| + |Gamma| = {a1:e} vanishes"
            )));
        }
        self.potential.validate()?;
        Ok(())
    }

    /// Evolution runs additionally need `K > 0`.
    pub fn validate_for_evolution(&self, fem: &FemMatrices) -> Result<()> {
        self.validate(fem)?;
        if self.k.is_zero() {
            return Err(Error::InvalidParameter(
                "evolution requires K in (0, inf]".into(),
            ));
        }
        Ok(())
    }
}

/// One of the two bilinear forms: `chi_param` is K or L, `coupling` is α or β.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FormSpec {
    pub chi_param: ExtReal,
    pub coupling: f64,
    pub slot: Slot,
}

impl FormSpec {
    pub fn chi(&self) -> f64 {
        chi(self.chi_param).expect("FormSpec with negative chi parameter")
    }

    /// Embedding of the admissible space: identity unless `chi_param = 0`,
    /// in which case bulk boundary values are `coupling * surf`.
    pub fn reduction(&self, fem: &FemMatrices) -> Reduction {
        let nb = fem.n_bulk();
        let n = nb + fem.n_surf();
        if self.chi_param.is_zero() {
            let ties: Vec<_> = fem
                .trace
                .iter()
                .enumerate()
                .map(|(j, &v)| (v, nb + j, self.coupling))
                .collect();
            Reduction::with_ties(n, &ties)
        } else {
            Reduction::identity(n)
        }
    }
}

/// Global sparse matrix of the form on `[bulk, surf]` with per-triangle and
/// per-edge gradient weights (unit weights when `None`).
pub fn form_matrix(
    fem: &FemMatrices,
    spec: &FormSpec,
    bulk_weights: Option<&[f64]>,
    surf_weights: Option<&[f64]>,
) -> CsrMatrix {
    let nb = fem.n_bulk();
    let n = nb + fem.n_surf();
    let ab = match bulk_weights {
        Some(w) => fem.weighted_bulk_stiffness(w),
        None => fem.a_bulk.clone(),
    };
    let as_ = match surf_weights {
        Some(w) => fem.weighted_surf_stiffness(w),
        None => fem.a_surf.clone(),
    };
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(ab.nnz() + 4 * as_.nnz());
    t.extend(ab.triplets());
    t.extend(as_.triplets().map(|(r, c, v)| (r + nb, c + nb, v)));
    let x = spec.chi();
    if x != 0.0 {
        let c = spec.coupling;
        for (i, j, m) in fem.m_surf.triplets() {
            let (bi, bj) = (fem.trace[i], fem.trace[j]);
            t.push((bi, bj, x * m));
            t.push((bi, nb + j, -x * c * m));
            t.push((nb + i, bj, -x * c * m));
            t.push((nb + i, nb + j, x * c * c * m));
        }
    }
    CsrMatrix::from_triplets(n, n, t)
}

/// `(∇p_b, ∇q_b) + (∇_Γ p_s, ∇_Γ q_s) + χ (c p_s − p_b, c q_s − q_b)_Γ`.
pub fn form_inner(p: &FieldPair, q: &FieldPair, spec: &FormSpec, fem: &FemMatrices) -> Result<f64> {
    p.check(fem)?;
    q.check(fem)?;
    let x = chi(spec.chi_param)?;
    let mut v = fem.a_bulk.bilinear(&p.bulk, &q.bulk) + fem.a_surf.bilinear(&p.surf, &q.surf);
    if x != 0.0 {
        let c = spec.coupling;
        let dp: Vec<f64> = p
            .surf
            .iter()
            .zip(&fem.trace)
            .map(|(s, &b)| c * s - p.bulk[b])
            .collect();
        let dq: Vec<f64> = q
            .surf
            .iter()
            .zip(&fem.trace)
            .map(|(s, &b)| c * s - q.bulk[b])
            .collect();
        v += x * fem.m_surf.bilinear(&dp, &dq);
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum MeanValue {
    Scalar(f64),
    Pair(f64, f64),
}

impl MeanValue {
    pub fn abs_max(&self) -> f64 {
        match self {
            MeanValue::Scalar(m) => m.abs(),
            MeanValue::Pair(a, b) => a.abs().max(b.abs()),
        }
    }
}

/// `(β∫φ + ∫_Γψ) / (β²|Ω| + |Γ|)`, the scalar mean used for every `L` in the
/// Poincaré setting.
pub fn scalar_mean(p: &FieldPair, beta: f64, fem: &FemMatrices) -> Result<f64> {
    let denom = beta * beta * fem.area + fem.perimeter;
    if denom.abs() < 1e-300 {
        return Err(Error::DegenerateParameter(
            "beta^2 |Omega| + |Gamma| = 0".into(),
        ));
    }
    let (ib, is) = p.integrals(fem);
    Ok((beta * ib + is) / denom)
}

pub fn generalized_mean(
    p: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<MeanValue> {
    p.check(fem)?;
    if params.l.is_infinite() {
        let (ib, is) = p.integrals(fem);
        Ok(MeanValue::Pair(ib / fem.area, is / fem.perimeter))
    } else {
        Ok(MeanValue::Scalar(scalar_mean(p, params.beta, fem)?))
    }
}

/// Removes the generalized mean along `(β, 1)` (componentwise when `L = ∞`).
pub fn project_mean_zero(
    p: &FieldPair,
    params: &ModelParams,
    fem: &FemMatrices,
) -> Result<FieldPair> {
    match generalized_mean(p, params, fem)? {
        MeanValue::Pair(mb, ms) => Ok(FieldPair {
            bulk: p.bulk.iter().map(|v| v - mb).collect(),
            surf: p.surf.iter().map(|v| v - ms).collect(),
        }),
        MeanValue::Scalar(m) => Ok(project_scalar_mean(p, m, params.beta)),
    }
}

pub(crate) fn project_scalar_mean(p: &FieldPair, m: f64, beta: f64) -> FieldPair {
    FieldPair {
        bulk: p.bulk.iter().map(|v| v - m * beta).collect(),
        surf: p.surf.iter().map(|v| v - m).collect(),
    }
}

/// Overwrites bulk boundary values with `coupling * surf`.
pub fn apply_trace_constraint(
    p: &FieldPair,
    spec: &FormSpec,
    fem: &FemMatrices,
) -> Result<FieldPair> {
    if !spec.chi_param.is_zero() {
        return Err(Error::Misuse(format!(
            "trace constraint only applies when the chi parameter is 0 (got {})",
            spec.chi_param
        )));
    }
    p.check(fem)?;
    let mut out = p.clone();
    for (j, &v) in fem.trace.iter().enumerate() {
        out.bulk[v] = spec.coupling * p.surf[j];
    }
    Ok(out)
}
