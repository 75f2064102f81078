//! Scenario files: a flat set of dotted keys in TOML syntax.
//!
//! ```toml
//! experiment = "evolve"
//! mesh.level = 3
//! model.K = "inf"
//! model.L = 1.0
//! scheme.dt = 1e-3
//! run.t_final = 0.5
//! initial.generator = "random"
//! initial.seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value as Json;
use toml::Value;

use crate::bsfield::{ExtReal, ModelParams};
use crate::error::{Error, Result};
use crate::evolution::SchemeConfig;
use crate::physics::{regularize_mobility, MobilitySpec, PotentialSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Evolve,
    ContinuousDependence,
    InequalitySuite,
    EllipticConvergence,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Evolve => "evolve",
            Experiment::ContinuousDependence => "cdep",
            Experiment::InequalitySuite => "verify",
            Experiment::EllipticConvergence => "elliptic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "evolve" => Experiment::Evolve,
            "cdep" | "continuous-dependence" => Experiment::ContinuousDependence,
            "verify" | "inequality-suite" => Experiment::InequalitySuite,
            "elliptic" | "elliptic-convergence" => Experiment::EllipticConvergence,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Zero,
    Constant,
    Random,
    Smooth,
    Cosine,
}

impl Generator {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zero" => Generator::Zero,
            "constant" => Generator::Constant,
            "random" => Generator::Random,
            "smooth" => Generator::Smooth,
            "cosine" => Generator::Cosine,
            _ => return None,
        })
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Generator::Random | Generator::Smooth)
    }

    fn name(&self) -> &'static str {
        match self {
            Generator::Zero => "zero",
            Generator::Constant => "constant",
            Generator::Random => "random",
            Generator::Smooth => "smooth",
            Generator::Cosine => "cosine",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InitialSpec {
    pub generator: Generator,
    pub seed: Option<u64>,
    pub amplitude: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CdepSpec {
    pub perturbation: f64,
    pub seed: u64,
    /// Also run with half the perturbation and report the ratio.
    pub check_halving: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteSpec {
    pub levels: Vec<usize>,
    pub r_values: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticSpec {
    pub levels: Vec<usize>,
    /// Replaces both mobilities by `1 + s^2/2` for the study.
    pub variable_mobility: bool,
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub level: usize,
    pub params: ModelParams,
    pub scheme: SchemeConfig,
    pub initial: InitialSpec,
    pub t_final: f64,
    /// Write field snapshots every this many steps; 0 keeps only the first and last.
    pub snapshot_every: usize,
    pub cdep: CdepSpec,
    pub suite: SuiteSpec,
    pub elliptic: EllipticSpec,
    mobility_source: [MobilitySource; 2],
}

#[derive(Clone, Debug, Default)]
struct MobilitySource {
    kind: String,
    value: f64,
    coeffs: Vec<f64>,
    path: Option<String>,
    regularize: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let unit = MobilitySource {
            kind: "constant".into(),
            value: 1.0,
            ..Default::default()
        };
        Self {
            experiment: Experiment::Evolve,
            level: 3,
            params: ModelParams::default(),
            scheme: SchemeConfig::default(),
            initial: InitialSpec {
                generator: Generator::Zero,
                seed: None,
                amplitude: 0.05,
                mean: 0.0,
            },
            t_final: 0.0,
            snapshot_every: 0,
            cdep: CdepSpec {
                perturbation: 0.01,
                seed: 1,
                check_halving: true,
            },
            suite: SuiteSpec {
                levels: vec![3, 4, 5],
                r_values: vec![2.0, 4.0, 8.0],
                samples: 20,
                seed: 1,
            },
            elliptic: EllipticSpec {
                levels: vec![2, 3, 4, 5],
                variable_mobility: false,
            },
            mobility_source: [unit.clone(), unit],
        }
    }
}

const KEYS: &[&str] = &[
    "experiment",
    "mesh.level",
    "model.K",
    "model.L",
    "model.alpha",
    "model.beta",
    "potential.kind",
    "potential.theta",
    "potential.theta0",
    "potential.theta_surf",
    "potential.theta0_surf",
    "mobility.bulk.kind",
    "mobility.bulk.value",
    "mobility.bulk.coeffs",
    "mobility.bulk.path",
    "mobility.bulk.regularize",
    "mobility.surf.kind",
    "mobility.surf.value",
    "mobility.surf.coeffs",
    "mobility.surf.path",
    "mobility.surf.regularize",
    "scheme.dt",
    "scheme.newton_tol",
    "scheme.newton_max",
    "scheme.clip_margin",
    "scheme.max_retries",
    "initial.generator",
    "initial.seed",
    "initial.amplitude",
    "initial.mean",
    "run.t_final",
    "run.output_every",
    "run.snapshot_every",
    "cdep.perturbation",
    "cdep.seed",
    "cdep.check_halving",
    "suite.levels",
    "suite.r_values",
    "suite.samples",
    "suite.seed",
    "elliptic.levels",
    "elliptic.variable_mobility",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn type_error(key: &str, want: &str, got: &Value) -> Error {
    Error::config(key, format!("expected {want}, found {}", got.type_str()))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(i) => Err(Error::config(
            key,
            format!("must be nonnegative, found {i}"),
        )),
        other => Err(type_error(key, "a nonnegative integer", other)),
    }
}

fn as_str<'v>(key: &str, v: &'v Value) -> Result<&'v str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(key, "a boolean", v))
}

fn as_ext(key: &str, v: &Value) -> Result<ExtReal> {
    let r = match v {
        Value::String(s) => s.parse::<ExtReal>().map_err(|_| {
            Error::config(key, format!("expected a number or \"inf\", found {s:?}"))
        })?,
        other => ExtReal::Finite(as_f64(key, other)?),
    };
    match r {
        ExtReal::Finite(x) if !(x >= 0.0 && x.is_finite()) => Err(Error::config(
            key,
            format!("must lie in [0, inf], found {x}"),
        )),
        r => Ok(r),
    }
}

fn as_f64_array(key: &str, v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| type_error(key, "an array of numbers", v))?
        .iter()
        .map(|x| as_f64(key, x))
        .collect()
}

fn as_usize_array(key: &str, v: &Value) -> Result<Vec<usize>> {
    v.as_array()
        .ok_or_else(|| type_error(key, "an array of integers", v))?
        .iter()
        .map(|x| as_usize(key, x))
        .collect()
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, found {x}")))
    }
}

/// Parses and validates a scenario; relative mobility table paths resolve
/// against `base_dir` when given.
pub fn parse_config_at(text: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    if let Some(k) = flat.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(Error::config(k, "unknown key"));
    }
    let mut cfg = ScenarioConfig::default();
    let mut theta_surf = None;
    let mut theta0_surf = None;
    let (mut theta, mut theta0) = (1.0, 2.0);
    let mut potential_kind = "flory_huggins".to_string();
    for (key, v) in &flat {
        let k = key.as_str();
        match k {
            "experiment" => {
                let s = as_str(k, v)?;
                cfg.experiment = Experiment::parse(s)
                    .ok_or_else(|| Error::config(k, format!("unknown experiment {s:?}")))?;
            }
            "mesh.level" => cfg.level = as_usize(k, v)?,
            "model.K" => cfg.params.k = as_ext(k, v)?,
            "model.L" => cfg.params.l = as_ext(k, v)?,
            "model.alpha" => {
                let a = as_f64(k, v)?;
                if !(-1.0..=1.0).contains(&a) {
                    return Err(Error::config(k, format!("must lie in [-1, 1], found {a}")));
                }
                cfg.params.alpha = a;
            }
            "model.beta" => {
                let b = as_f64(k, v)?;
                if !b.is_finite() {
                    return Err(Error::config(k, "must be finite"));
                }
                cfg.params.beta = b;
            }
            "potential.kind" => potential_kind = as_str(k, v)?.to_string(),
            "potential.theta" => theta = positive(k, as_f64(k, v)?)?,
            "potential.theta0" => theta0 = as_f64(k, v)?,
            "potential.theta_surf" => theta_surf = Some(positive(k, as_f64(k, v)?)?),
            "potential.theta0_surf" => theta0_surf = Some(as_f64(k, v)?),
            "scheme.dt" => cfg.scheme.dt = positive(k, as_f64(k, v)?)?,
            "scheme.newton_tol" => cfg.scheme.newton_tol = positive(k, as_f64(k, v)?)?,
            "scheme.newton_max" => {
                cfg.scheme.newton_max = as_usize(k, v)?;
                if cfg.scheme.newton_max == 0 {
                    return Err(Error::config(k, "must be positive"));
                }
            }
            "scheme.clip_margin" => {
                let c = positive(k, as_f64(k, v)?)?;
                if c >= 1e-3 {
                    return Err(Error::config(k, format!("must be below 1e-3, found {c}")));
                }
                cfg.scheme.clip_margin = c;
            }
            "scheme.max_retries" => cfg.scheme.max_retries = as_usize(k, v)?,
            "initial.generator" => {
                let s = as_str(k, v)?;
                cfg.initial.generator = Generator::parse(s)
                    .ok_or_else(|| Error::config(k, format!("unknown generator {s:?}")))?;
            }
            "initial.seed" => cfg.initial.seed = Some(as_usize(k, v)? as u64),
            "initial.amplitude" => {
                let a = as_f64(k, v)?;
                if !(a >= 0.0 && a < 1.0) {
                    return Err(Error::config(k, format!("must lie in [0, 1), found {a}")));
                }
                cfg.initial.amplitude = a;
            }
            "initial.mean" => {
                let m = as_f64(k, v)?;
                if !(m > -1.0 && m < 1.0) {
                    return Err(Error::config(k, format!("must lie in (-1, 1), found {m}")));
                }
                cfg.initial.mean = m;
            }
            "run.t_final" => {
                let t = as_f64(k, v)?;
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::config(k, format!("must be nonnegative, found {t}")));
                }
                cfg.t_final = t;
            }
            "run.output_every" => {
                cfg.scheme.output_every = as_usize(k, v)?;
                if cfg.scheme.output_every == 0 {
                    return Err(Error::config(k, "must be positive"));
                }
            }
            "run.snapshot_every" => cfg.snapshot_every = as_usize(k, v)?,
            "cdep.perturbation" => {
                let p = positive(k, as_f64(k, v)?)?;
                if p >= 0.5 {
                    return Err(Error::config(k, format!("must be below 0.5, found {p}")));
                }
                cfg.cdep.perturbation = p;
            }
            "cdep.seed" => cfg.cdep.seed = as_usize(k, v)? as u64,
            "cdep.check_halving" => cfg.cdep.check_halving = as_bool(k, v)?,
            "suite.levels" => cfg.suite.levels = as_usize_array(k, v)?,
            "suite.r_values" => {
                cfg.suite.r_values = as_f64_array(k, v)?;
                if let Some(r) = cfg
                    .suite
                    .r_values
                    .iter()
                    .find(|r| !(2.0..=16.0).contains(*r))
                {
                    return Err(Error::config(k, format!("r = {r} outside [2, 16]")));
                }
            }
            "suite.samples" => cfg.suite.samples = as_usize(k, v)?.max(1),
            "suite.seed" => cfg.suite.seed = as_usize(k, v)? as u64,
            "elliptic.levels" => cfg.elliptic.levels = as_usize_array(k, v)?,
            "elliptic.variable_mobility" => cfg.elliptic.variable_mobility = as_bool(k, v)?,
            _ => {
                let (side, field) = k
                    .strip_prefix("mobility.")
                    .and_then(|r| r.split_once('.'))
                    .expect("key list covers every branch");
                let src = &mut cfg.mobility_source[usize::from(side == "surf")];
                match field {
                    "kind" => src.kind = as_str(k, v)?.to_string(),
                    "value" => src.value = positive(k, as_f64(k, v)?)?,
                    "coeffs" => src.coeffs = as_f64_array(k, v)?,
                    "path" => {
                        let p = as_str(k, v)?;
                        src.path = Some(match base_dir {
                            Some(d) if Path::new(p).is_relative() => {
                                d.join(p).to_string_lossy().into_owned()
                            }
                            _ => p.to_string(),
                        });
                    }
                    "regularize" => {
                        let n = as_usize(k, v)?;
                        if n == 0 {
                            return Err(Error::config(k, "must be positive"));
                        }
                        src.regularize = Some(n);
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    cfg.params.potential = match potential_kind.as_str() {
        "flory_huggins" => {
            let mut p = PotentialSpec::flory_huggins(theta, theta0);
            p.theta_surf = theta_surf.unwrap_or(theta);
            p.theta0_surf = theta0_surf.unwrap_or(theta0);
            p.floor_surf = p.theta_surf;
            p
        }
        "none" => PotentialSpec::zero(),
        other => {
            return Err(Error::config(
                "potential.kind",
                format!("unknown potential {other:?}"),
            ))
        }
    };
    cfg.params
        .potential
        .validate()
        .map_err(|e| Error::config("potential", e.to_string()))?;
    for (i, side) in ["bulk", "surf"].iter().enumerate() {
        let spec = build_mobility(&cfg.mobility_source[i], side)?;
        if i == 0 {
            cfg.params.mobility_bulk = spec;
        } else {
            cfg.params.mobility_surf = spec;
        }
    }
    if cfg.initial.generator.is_stochastic() && cfg.initial.seed.is_none() {
        return Err(Error::config(
            "initial.seed",
            "required for stochastic initial data",
        ));
    }
    if cfg.initial.mean.abs() + cfg.initial.amplitude >= 1.0 {
        return Err(Error::config(
            "initial.amplitude",
            "mean + amplitude must stay below 1",
        ));
    }
    if cfg.experiment == Experiment::EllipticConvergence && cfg.elliptic.levels.len() < 2 {
        return Err(Error::config("elliptic.levels", "need at least two levels"));
    }
    if cfg.experiment == Experiment::InequalitySuite && cfg.suite.levels.is_empty() {
        return Err(Error::config("suite.levels", "need at least one level"));
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    parse_config_at(text, None)
}

fn build_mobility(src: &MobilitySource, side: &str) -> Result<MobilitySpec> {
    let key = |f: &str| format!("mobility.{side}.{f}");
    let base = match src.kind.as_str() {
        "constant" => MobilitySpec::constant(src.value),
        "polynomial" => {
            if src.coeffs.is_empty() {
                return Err(Error::config(
                    &key("coeffs"),
                    "required for a polynomial mobility",
                ));
            }
            let m = MobilitySpec::polynomial(src.coeffs.clone());
            if !(m.m_star > 0.0) {
                return Err(Error::config(
                    &key("coeffs"),
                    format!("mobility not positive on [-1, 1] (min {})", m.m_star),
                ));
            }
            m
        }
        "tabulated" => {
            let path = src
                .path
                .as_ref()
                .ok_or_else(|| Error::config(&key("path"), "required for a tabulated mobility"))?;
            let file = std::fs::File::open(path)
                .map_err(|e| Error::config(&key("path"), format!("{path}: {e}")))?;
            MobilitySpec::from_csv(file).map_err(|e| Error::config(&key("path"), e.to_string()))?
        }
        other => {
            return Err(Error::config(
                &key("kind"),
                format!("unknown mobility {other:?}"),
            ))
        }
    };
    match src.regularize {
        Some(k) => regularize_mobility(&base, k)
            .map_err(|e| Error::config(&key("regularize"), e.to_string())),
        None => Ok(base),
    }
}

fn ext_json(r: ExtReal) -> Json {
    match r {
        ExtReal::Finite(x) => Json::from(x),
        ExtReal::Infinite => Json::from("inf"),
    }
}

impl ScenarioConfig {
    /// Every key with its resolved value, in key order.
    pub fn resolved(&self) -> BTreeMap<String, Json> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Json| {
            m.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.name().into());
        put("mesh.level", self.level.into());
        put("model.K", ext_json(self.params.k));
        put("model.L", ext_json(self.params.l));
        put("model.alpha", self.params.alpha.into());
        put("model.beta", self.params.beta.into());
        let pot = &self.params.potential;
        if pot.is_zero() {
            put("potential.kind", "none".into());
        } else {
            put("potential.kind", "flory_huggins".into());
            put("potential.theta", pot.theta_bulk.into());
            put("potential.theta0", pot.theta0_bulk.into());
            put("potential.theta_surf", pot.theta_surf.into());
            put("potential.theta0_surf", pot.theta0_surf.into());
        }
        for (i, side) in ["bulk", "surf"].iter().enumerate() {
            let s = &self.mobility_source[i];
            put(&format!("mobility.{side}.kind"), s.kind.clone().into());
            match s.kind.as_str() {
                "constant" => put(&format!("mobility.{side}.value"), s.value.into()),
                "polynomial" => put(&format!("mobility.{side}.coeffs"), s.coeffs.clone().into()),
                _ => put(
                    &format!("mobility.{side}.path"),
                    s.path.clone().unwrap_or_default().into(),
                ),
            }
            if let Some(k) = s.regularize {
                put(&format!("mobility.{side}.regularize"), k.into());
            }
        }
        put("scheme.dt", self.scheme.dt.into());
        put("scheme.newton_tol", self.scheme.newton_tol.into());
        put("scheme.newton_max", self.scheme.newton_max.into());
        put("scheme.clip_margin", self.scheme.clip_margin.into());
        put("scheme.max_retries", self.scheme.max_retries.into());
        put("initial.generator", self.initial.generator.name().into());
        if let Some(s) = self.initial.seed {
            put("initial.seed", s.into());
        }
        put("initial.amplitude", self.initial.amplitude.into());
        put("initial.mean", self.initial.mean.into());
        put("run.t_final", self.t_final.into());
        put("run.output_every", self.scheme.output_every.into());
        put("run.snapshot_every", self.snapshot_every.into());
        put("cdep.perturbation", self.cdep.perturbation.into());
        put("cdep.seed", self.cdep.seed.into());
        put("cdep.check_halving", self.cdep.check_halving.into());
        put("suite.levels", self.suite.levels.clone().into());
        put("suite.r_values", self.suite.r_values.clone().into());
        put("suite.samples", self.suite.samples.into());
        put("suite.seed", self.suite.seed.into());
        put("elliptic.levels", self.elliptic.levels.clone().into());
        put(
            "elliptic.variable_mobility",
            self.elliptic.variable_mobility.into(),
        );
        m
    }
}
