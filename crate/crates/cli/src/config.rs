//! TOML run configuration.
//!
//! ```toml
//! seed = 42
//!
//! [grid]
//! dim = 1               # 1, 2 or 3
//! n = 16
//! m = 256
//! horizon = 1.0
//! boundary = "dirichlet" # or "neumann"
//!
//! [noise]
//! kind = "riesz"        # or "white" (d = 1 only)
//! alpha = 0.5
//!
//! [coefficients]
//! sigma = { kind = "affine", a = 0.2, b = 1.0 }
//! drift = { kind = "constant", value = 0.0 }
//!
//! [initial]
//! kind = "sine"         # zero | sine | bump | table
//! amplitude = 1.0
//!
//! [scheme]
//! kind = "implicit"     # or "explicit"
//! q = 0.45
//! record = "all"        # all | final | [0, 16, 32]
//!
//! [study]
//! axis = "time"         # time: ladder divides grid.m; space: divides grid.n
//! ladder = [16, 32, 64]
//! replicas = 100
//!
//! [green]
//! checks = ["space", "time_implicit"]
//!
//! [noise_check]
//! samples = 50000
//!
//! [output]
//! dir = "out"
//! trajectory = "csv"    # csv | binary | both
//! ```

use serde::Deserialize;

use spde_lab::lattice::{BoundaryCondition, GridSpec};
use spde_lab::noise::NoiseModel;
use spde_lab::schemes::{Coefficient, CoefficientSet, InitialCondition, RecordLevels, SchemeKind, DEFAULT_Q};
use spde_lab::study::Axis;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub noise_check: NoiseCheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKindConfig {
    Riesz,
    White,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefficientConfig {
    Constant { value: f64 },
    Affine { a: f64, b: f64 },
    Cosine { a: f64, b: f64 },
}

impl From<CoefficientConfig> for Coefficient {
    fn from(c: CoefficientConfig) -> Self {
        match c {
            CoefficientConfig::Constant { value } => Coefficient::Constant(value),
            CoefficientConfig::Affine { a, b } => Coefficient::Affine { a, b },
            CoefficientConfig::Cosine { a, b } => Coefficient::Cosine { a, b },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub sigma: CoefficientConfig,
    pub drift: CoefficientConfig,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        Self {
            sigma: CoefficientConfig::Constant { value: 1.0 },
            drift: CoefficientConfig::Constant { value: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Zero,
    Sine {
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Bump,
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default)]
    pub kind: SchemeKindConfig,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub record: RecordConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { kind: SchemeKindConfig::Implicit, q: DEFAULT_Q, record: RecordConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKindConfig {
    #[default]
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RecordConfig {
    Named(String),
    Levels(Vec<usize>),
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig::Named("all".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub axis: AxisConfig,
    pub ladder: Vec<usize>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub t_star: Option<f64>,
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisConfig {
    Time,
    Space,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenCheck {
    Space,
    TimeImplicit,
    TimeExplicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    #[serde(default = "default_checks")]
    pub checks: Vec<GreenCheck>,
    /// `n` ladder of the space check.
    #[serde(default = "default_space_ladder")]
    pub space_ladder: Vec<usize>,
    /// Quadrature cells per lattice cell in the space check.
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// x-grid resolution of the space check (default: 8 per finest cell).
    pub x_resolution: Option<usize>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Lattice size of the time checks.
    #[serde(default = "default_time_n")]
    pub time_n: usize,
    /// `m` ladder of the time checks.
    #[serde(default = "default_time_ladder")]
    pub time_ladder: Vec<usize>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            checks: default_checks(),
            space_ladder: default_space_ladder(),
            refine: default_refine(),
            x_resolution: None,
            rel_tol: default_rel_tol(),
            time_n: default_time_n(),
            time_ladder: default_time_ladder(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCheckConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for NoiseCheckConfig {
    fn default() -> Self {
        Self { samples: default_samples() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default)]
    pub trajectory: TrajectoryFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), trajectory: TrajectoryFormat::Csv }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    #[default]
    Csv,
    Binary,
    Both,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_q() -> f64 {
    DEFAULT_Q
}
fn default_replicas() -> usize {
    100
}
fn default_checks() -> Vec<GreenCheck> {
    vec![GreenCheck::Space, GreenCheck::TimeImplicit]
}
fn default_space_ladder() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_refine() -> usize {
    16
}
fn default_rel_tol() -> f64 {
    1e-4
}
fn default_time_n() -> usize {
    64
}
fn default_time_ladder() -> Vec<usize> {
    vec![8, 16, 32, 64, 128, 256]
}
fn default_samples() -> usize {
    50_000
}
fn default_dir() -> String {
    "out".into()
}

/// Parses a document and applies `key.path=value` overrides; values are
/// read as TOML and fall back to bare strings.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, String> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| format!("override `{item}` is not key=value"))?;
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        set_path(&mut table, key.trim(), value)?;
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.message().to_string())
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| format!("empty override key `{key}`"))?;
    let mut current = table;
    for part in parts {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| format!("override key `{key}`: `{part}` is not a table"))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn grid_spec(&self) -> spde_lab::Result<GridSpec> {
        let bc = match self.grid.boundary {
            Boundary::Dirichlet => BoundaryCondition::Dirichlet,
            Boundary::Neumann => BoundaryCondition::Neumann,
        };
        GridSpec::new(self.grid.dim, self.grid.n, self.grid.m, self.grid.horizon, bc)
    }

    pub fn noise_model(&self) -> spde_lab::Result<NoiseModel> {
        match (self.noise.kind, self.noise.alpha) {
            (NoiseKindConfig::Riesz, Some(alpha)) => NoiseModel::riesz(alpha, self.grid.dim),
            (NoiseKindConfig::Riesz, None) => {
                Err(spde_lab::Error::InvalidParameter("noise.alpha is required for riesz noise".into()))
            }
            (NoiseKindConfig::White, None) => NoiseModel::white(self.grid.dim),
            (NoiseKindConfig::White, Some(_)) => {
                Err(spde_lab::Error::InvalidParameter("noise.alpha is not used with white noise".into()))
            }
        }
    }

    pub fn coefficient_set(&self) -> CoefficientSet {
        CoefficientSet::new(self.coefficients.sigma.into(), self.coefficients.drift.into())
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match &self.initial {
            InitialConfig::Zero => InitialCondition::Zero,
            InitialConfig::Sine { amplitude } => InitialCondition::SineProduct { amplitude: *amplitude },
            InitialConfig::Bump => InitialCondition::Bump,
            InitialConfig::Table { values } => InitialCondition::Table(values.clone()),
        }
    }

    pub fn scheme_kind(&self) -> SchemeKind {
        match self.scheme.kind {
            SchemeKindConfig::Implicit => SchemeKind::Implicit,
            SchemeKindConfig::Explicit => SchemeKind::Explicit,
        }
    }

    pub fn record_levels(&self) -> spde_lab::Result<RecordLevels> {
        match &self.scheme.record {
            RecordConfig::Named(s) if s == "all" => Ok(RecordLevels::All),
            RecordConfig::Named(s) if s == "final" => Ok(RecordLevels::Final),
            RecordConfig::Named(s) => {
                Err(spde_lab::Error::InvalidParameter(format!("scheme.record `{s}` is not all, final or a list")))
            }
            RecordConfig::Levels(l) => Ok(RecordLevels::Levels(l.clone())),
        }
    }

    pub fn axis(&self) -> Option<Axis> {
        self.study.as_ref().map(|s| match s.axis {
            AxisConfig::Time => Axis::Time,
            AxisConfig::Space => Axis::Space,
        })
    }
}
