//! Run configuration: a JSON document with `schema`, `problem`, `task`,
//! `numerics` and `output` blocks.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use eigendrift::exhaustion::LadderConfig;
use eigendrift::expr::Expression;
use eigendrift::grid::{CoefficientSet, DriftScheme};
use eigendrift::sde::SimConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub problem: ProblemBlock,
    pub task: TaskBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub dim: usize,
    /// Diagonal of `a`, one expression per axis.
    pub a: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a12: Option<String>,
    pub b: Vec<String>,
    #[serde(default = "zero")]
    pub f: String,
    #[serde(default)]
    pub scheme: Scheme,
    /// Running cost `c(x,u)` of the control task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<f64>>,
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Upwind,
    ExponentialFitting,
}

impl From<Scheme> for DriftScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Upwind => DriftScheme::Upwind,
            Scheme::ExponentialFitting => DriftScheme::ExponentialFitting,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskBlock {
    Eigen(EigenTask),
    Curve(CurveTask),
    Simulate(SimulateTask),
    Classify(ClassifyTask),
    Hjb(HjbTask),
    Identities(IdentitiesTask),
}

impl TaskBlock {
    pub fn name(&self) -> &'static str {
        match self {
            TaskBlock::Eigen(_) => "eigen",
            TaskBlock::Curve(_) => "curve",
            TaskBlock::Simulate(_) => "simulate",
            TaskBlock::Classify(_) => "classify",
            TaskBlock::Hjb(_) => "hjb",
            TaskBlock::Identities(_) => "identities",
        }
    }

    fn stochastic(&self) -> bool {
        match self {
            TaskBlock::Simulate(_) | TaskBlock::Classify(_) => true,
            TaskBlock::Identities(t) => t.recurrence.is_some(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenTask {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveTask {
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bisection_depth: Option<usize>,
    #[serde(default)]
    pub allow_nonvanishing: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    #[default]
    Base,
    /// Ground-state diffusion with drift `b + 2a∇log Ψ*`.
    Twisted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTask {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub process: ProcessKind,
    #[serde(default)]
    pub lambda_shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_radius: Option<f64>,
    #[serde(default)]
    pub record_stride: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
}

fn default_bins() -> usize {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_mono: Option<f64>,
    #[serde(default = "one")]
    pub target_radius: f64,
    /// Classify the twisted process at this eigenvalue instead of `λ*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    #[default]
    Cheapest,
    Costliest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbTask {
    pub radius: f64,
    #[serde(default)]
    pub start: Start,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceBlock {
    pub x0: Vec<f64>,
    #[serde(default = "one")]
    pub target_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesTask {
    pub beta: f64,
    #[serde(default = "default_d_beta")]
    pub d_beta: f64,
    #[serde(default)]
    pub slack: f64,
    /// Extra controls for the duality residual, one vector field each;
    /// the ground-state control is always evaluated.
    #[serde(default)]
    pub controls: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<RecurrenceBlock>,
}

fn default_d_beta() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rungs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_unit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_outer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    #[serde(default)]
    pub ladder: LadderBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: default_directory(),
            formats: all_formats(),
        }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("eigendrift-out")
}

fn all_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv, Format::Svg]
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

pub fn parse_expression(key: &str, text: &str) -> Result<Expression, ConfigError> {
    text.parse::<Expression>()
        .map_err(|e| invalid(key, format!("cannot parse {text:?}: {e}")))
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, None)
    }

    /// Parses and validates, with `seed` replacing `numerics.seed`.
    pub fn parse(text: &str, seed: Option<u64>) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            invalid(
                if key == "." { "<root>".to_string() } else { key },
                format!("{inner} (line {}, column {})", inner.line(), inner.column()),
            )
        })?;
        if seed.is_some() {
            cfg.numerics.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, seed)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        let p = &self.problem;
        if !(p.dim == 1 || p.dim == 2) {
            return Err(invalid("problem.dim", "must be 1 or 2"));
        }
        if p.a.len() != p.dim {
            return Err(invalid("problem.a", format!("expected {} expressions", p.dim)));
        }
        if p.b.len() != p.dim {
            return Err(invalid("problem.b", format!("expected {} expressions", p.dim)));
        }
        self.coefficients()?;
        let n = &self.numerics;
        positive_opt("numerics.dt", n.dt)?;
        positive_opt("numerics.horizon", n.horizon)?;
        positive_opt("numerics.eigen_tol", n.eigen_tol)?;
        positive_opt("numerics.box_radius", n.box_radius)?;
        positive_opt("numerics.ladder.r0", n.ladder.r0)?;
        positive_opt("numerics.ladder.points_per_unit", n.ladder.points_per_unit)?;
        positive_opt("numerics.ladder.tol_outer", n.ladder.tol_outer)?;
        if let Some(g) = n.ladder.growth {
            if !(g > 1.0) {
                return Err(invalid("numerics.ladder.growth", "must exceed 1"));
            }
        }
        if n.ladder.rungs == Some(0) {
            return Err(invalid("numerics.ladder.rungs", "must be at least 1"));
        }
        if n.paths == Some(0) {
            return Err(invalid("numerics.paths", "must be at least 1"));
        }
        if self.task.stochastic() && n.seed.is_none() {
            return Err(invalid("numerics.seed", format!("required by the {} task", self.task.name())));
        }
        let point = |key: &str, x: &[f64]| -> Result<(), ConfigError> {
            if x.len() != p.dim {
                return Err(invalid(key, format!("expected {} coordinates", p.dim)));
            }
            Ok(())
        };
        match &self.task {
            TaskBlock::Eigen(_) => {}
            TaskBlock::Curve(t) => {
                if t.betas.len() < 2 || t.betas.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("task.curve.betas", "need at least two strictly increasing values"));
                }
            }
            TaskBlock::Simulate(t) => {
                point("task.simulate.x0", &t.x0)?;
                positive_opt("task.simulate.target_radius", t.target_radius)?;
                if t.histogram_bins == 0 {
                    return Err(invalid("task.simulate.histogram_bins", "must be at least 1"));
                }
            }
            TaskBlock::Classify(t) => {
                if let Some(x0) = &t.x0 {
                    point("task.classify.x0", x0)?;
                }
                if let Some(b) = &t.bump {
                    parse_expression("task.classify.bump", b)?;
                }
                if let Some(eps) = &t.eps {
                    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
                        return Err(invalid("task.classify.eps", "need positive values"));
                    }
                }
                positive_opt("task.classify.target_radius", Some(t.target_radius))?;
            }
            TaskBlock::Hjb(t) => {
                positive_opt("task.hjb.radius", Some(t.radius))?;
                if p.cost.is_none() {
                    return Err(invalid("problem.cost", "required by the hjb task"));
                }
                match &p.actions {
                    Some(a) if !a.is_empty() => {}
                    _ => return Err(invalid("problem.actions", "required by the hjb task")),
                }
            }
            TaskBlock::Identities(t) => {
                positive_opt("task.identities.d_beta", Some(t.d_beta))?;
                for (k, c) in t.controls.iter().enumerate() {
                    if c.len() != p.dim {
                        return Err(invalid(format!("task.identities.controls[{k}]"), format!("expected {} expressions", p.dim)));
                    }
                    for (j, e) in c.iter().enumerate() {
                        parse_expression(&format!("task.identities.controls[{k}][{j}]"), e)?;
                    }
                }
                if let Some(r) = &t.recurrence {
                    point("task.identities.recurrence.x0", &r.x0)?;
                }
            }
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, ConfigError> {
        let p = &self.problem;
        let list = |key: &str, v: &[String]| -> Result<Vec<Expression>, ConfigError> {
            v.iter()
                .enumerate()
                .map(|(i, s)| parse_expression(&format!("{key}[{i}]"), s))
                .collect()
        };
        let a = list("problem.a", &p.a)?;
        let b = list("problem.b", &p.b)?;
        let f = parse_expression("problem.f", &p.f)?;
        let mut c = CoefficientSet::new(a, b, f).with_scheme(p.scheme.into());
        if let Some(a12) = &p.a12 {
            c.a_offdiag = Some(parse_expression("problem.a12", a12)?);
        }
        if let Some(cost) = &p.cost {
            c = c.with_cost(parse_expression("problem.cost", cost)?);
        }
        Ok(c)
    }

    pub fn ladder(&self) -> LadderConfig {
        let l = &self.numerics.ladder;
        let mut cfg = LadderConfig::for_dim(self.problem.dim);
        if let Some(v) = l.r0 {
            cfg.r0 = v;
        }
        if let Some(v) = l.growth {
            cfg.growth = v;
        }
        if let Some(v) = l.rungs {
            cfg.max_rungs = v;
        }
        if let Some(v) = l.points_per_unit {
            cfg.points_per_unit = v;
        }
        if let Some(v) = l.tol_outer {
            cfg.tol_outer = v;
        }
        if let Some(v) = l.early_stop {
            cfg.early_stop = v;
        }
        if let Some(v) = l.parallel {
            cfg.parallel = v;
        }
        if let Some(v) = self.numerics.eigen_tol {
            cfg.eigen.tol = v;
        }
        if let Some(v) = self.numerics.eigen_max_iter {
            cfg.eigen.max_iter = v;
        }
        cfg
    }

    /// Simulation settings with the given fallbacks for unset fields.
    pub fn sim(&self, dt: f64, horizon: f64, paths: usize) -> SimConfig {
        let n = &self.numerics;
        let mut sim = SimConfig::new(
            n.dt.unwrap_or(dt),
            n.horizon.unwrap_or(horizon),
            n.paths.unwrap_or(paths),
            n.seed.unwrap_or(0),
        );
        sim.box_radius = n.box_radius;
        sim
    }
}

fn positive_opt(key: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(key, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}
