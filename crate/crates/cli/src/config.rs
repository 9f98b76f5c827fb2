//! Experiment configuration (TOML) and its translation into core objects.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use levyou::harness::Tolerance;
use levyou::kalman::{matrix_from_rows, SystemPair};
use levyou::levy::{Atom, Family, LevyModel, SphericalMeasure};
use levyou::semigroup::{FourierGrid, GridSpec, OuModel};
use levyou::testfn::{TestFn, TestFnSpec};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    /// Named test functions referenced by runs.
    #[serde(default)]
    pub functions: BTreeMap<String, TestFnSpec>,
    #[serde(default, rename = "run")]
    pub runs: Vec<RunBlock>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Drift matrix A, row-major.
    pub a: Vec<Vec<f64>>,
    /// Input matrix B, row-major.
    pub b: Vec<Vec<f64>>,
    pub levy: LevyConfig,
    #[serde(default)]
    pub time_dependent: Option<TimeDependentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    pub family: Family,
    pub alpha: f64,
    #[serde(default = "one")]
    pub r0: f64,
    pub measure: MeasureConfig,
    /// Gaussian covariance; zero when absent.
    #[serde(default)]
    pub gaussian: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    /// Atoms at +-1 (d = 1).
    Symmetric1d,
    /// Equally spaced atoms on the circle (d = 2).
    Equiangular(usize),
    Atoms(Vec<Atom>),
}

/// A(t) = a + t * drift_rate and sigma0(t) = sigma0 + t * sigma0_rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeDependentConfig {
    #[serde(default)]
    pub drift_rate: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma0_rate: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_check_times")]
    pub check_times: Vec<f64>,
}

fn default_check_times() -> Vec<f64> {
    (0..=8).map(|k| k as f64 / 8.0).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_points")]
    pub points: usize,
    /// Half-widths per axis; sized automatically when absent.
    #[serde(default)]
    pub half_width: Option<Vec<f64>>,
}

fn default_points() -> usize {
    256
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: default_points(), half_width: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> String {
    "levyou-out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Log-spaced times.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl TimeRange {
    pub fn values(&self) -> Vec<f64> {
        levyou::geometry::log_offsets(self.min, self.max, self.count)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_probe_count")]
    pub count: usize,
    /// Half-width of the box the probes are drawn from.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_probe_count() -> usize {
    16
}

fn default_radius() -> f64 {
    2.0
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { count: default_probe_count(), radius: default_radius() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunBlock {
    pub id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<Tolerance>,
    #[serde(flatten)]
    pub kind: RunKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunKind {
    Decomposition,
    Symbol {
        frequencies: Vec<Vec<f64>>,
        /// Also report the OU exponent over [0, t].
        #[serde(default)]
        time: Option<f64>,
    },
    Density {
        times: Vec<f64>,
    },
    Elliptic {
        lambda: f64,
        source: String,
        #[serde(default)]
        probes: ProbeSpec,
    },
    Parabolic {
        horizon: f64,
        times: Vec<f64>,
        initial: String,
        source: String,
        #[serde(default)]
        probes: ProbeSpec,
    },
    VerifyGradientDecay {
        function: String,
        times: TimeRange,
        /// 1-based blocks; all when empty.
        #[serde(default)]
        blocks: Vec<usize>,
        #[serde(default = "default_probe_radius")]
        probe_radius: f64,
    },
    VerifyHolderContinuity {
        function: String,
        beta: f64,
        gamma: f64,
        times: TimeRange,
        #[serde(default = "default_probe_radius")]
        probe_radius: f64,
    },
    VerifySchauder {
        problem: SchauderProblem,
        source: String,
        beta: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        initial: Option<String>,
        #[serde(default)]
        times: Vec<f64>,
        #[serde(default = "default_probe_radius")]
        probe_radius: f64,
    },
    VerifyDensityTail {
        times: Vec<f64>,
    },
}

fn default_probe_radius() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchauderProblem {
    Elliptic,
    Parabolic,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Decomposition => "decomposition",
            RunKind::Symbol { .. } => "symbol",
            RunKind::Density { .. } => "density",
            RunKind::Elliptic { .. } => "elliptic",
            RunKind::Parabolic { .. } => "parabolic",
            RunKind::VerifyGradientDecay { .. } => "verify_gradient_decay",
            RunKind::VerifyHolderContinuity { .. } => "verify_holder_continuity",
            RunKind::VerifySchauder { .. } => "verify_schauder",
            RunKind::VerifyDensityTail { .. } => "verify_density_tail",
        }
    }

    fn function_refs(&self) -> Vec<&str> {
        match self {
            RunKind::Elliptic { source, .. } => vec![source],
            RunKind::Parabolic { initial, source, .. } => vec![initial, source],
            RunKind::VerifyGradientDecay { function, .. } | RunKind::VerifyHolderContinuity { function, .. } => {
                vec![function]
            }
            RunKind::VerifySchauder { source, initial, .. } => {
                let mut v = vec![source.as_str()];
                v.extend(initial.as_deref());
                v
            }
            _ => vec![],
        }
    }
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Config(levyou::Error::SchemaError(msg.into()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.check_references()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(levyou::Error::Io(format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    fn check_references(&self) -> Result<(), CliError> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.runs {
            if !seen.insert(r.id.as_str()) {
                return Err(schema(format!("run id `{}` is used twice", r.id)));
            }
            if r.id.is_empty() || !r.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(schema(format!("run id `{}` must be non-empty and use [A-Za-z0-9_-]", r.id)));
            }
            for f in r.kind.function_refs() {
                if !self.functions.contains_key(f) {
                    return Err(schema(format!("run `{}` refers to unknown function `{f}`", r.id)));
                }
            }
            if let RunKind::VerifySchauder { problem: SchauderProblem::Parabolic, initial: None, .. } = r.kind {
                return Err(schema(format!("run `{}`: parabolic Schauder checks need `initial`", r.id)));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SystemPair, CliError> {
        let a = matrix_from_rows(&self.model.a).map_err(|e| schema(format!("model.a: {e}")))?;
        let b = matrix_from_rows(&self.model.b).map_err(|e| schema(format!("model.b: {e}")))?;
        SystemPair::new(a, b).map_err(CliError::Config)
    }

    pub fn levy(&self) -> Result<LevyModel, CliError> {
        let l = &self.model.levy;
        let mu = match &l.measure {
            MeasureConfig::Symmetric1d => SphericalMeasure::symmetric_1d(),
            MeasureConfig::Equiangular(k) => SphericalMeasure::equiangular_2d(*k),
            MeasureConfig::Atoms(a) => SphericalMeasure::new(a.clone()).map_err(CliError::Config)?,
        };
        let d = mu.dim();
        let q = match &l.gaussian {
            Some(rows) => matrix_from_rows(rows).map_err(|e| schema(format!("model.levy.gaussian: {e}")))?,
            None => DMatrix::zeros(d, d),
        };
        let drift = DVector::from_vec(l.drift.clone().unwrap_or_else(|| vec![0.0; d]));
        LevyModel::new(l.family, l.alpha, l.r0, mu, q, drift).map_err(CliError::Config)
    }

    pub fn ou_model(&self) -> Result<OuModel, CliError> {
        let sys = self.system()?;
        let levy = self.levy()?;
        match &self.model.time_dependent {
            None => OuModel::new(sys, levy).map_err(CliError::Config),
            Some(td) => {
                let (a_fn, sigma_fn) = td.functions(&sys, levy.dim())?;
                OuModel::time_dependent(a_fn, sys.b.clone(), sigma_fn, levy, &td.check_times).map_err(CliError::Config)
            }
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        match &self.grid.half_width {
            None => Ok(GridSpec::Auto { points_per_dim: self.grid.points }),
            Some(hw) => Ok(GridSpec::Fixed(FourierGrid::new(self.grid.points, hw.clone(), None).map_err(CliError::Config)?)),
        }
    }

    pub fn function(&self, name: &str, dim: usize) -> Result<TestFn, CliError> {
        self.functions
            .get(name)
            .ok_or_else(|| schema(format!("unknown function `{name}`")))?
            .build(dim)
            .map_err(CliError::Config)
    }
}

pub type MatrixFn = levyou::semigroup::MatrixFn;

impl TimeDependentConfig {
    pub fn functions(&self, sys: &SystemPair, d: usize) -> Result<(MatrixFn, MatrixFn), CliError> {
        let mat = |rows: &Option<Vec<Vec<f64>>>, r: usize, c: usize, name: &str, default: DMatrix<f64>| {
            match rows {
                None => Ok(default),
                Some(rows) => {
                    let m = matrix_from_rows(rows).map_err(|e| schema(format!("model.time_dependent.{name}: {e}")))?;
                    if m.nrows() != r || m.ncols() != c {
                        return Err(schema(format!("model.time_dependent.{name} must be {r}x{c}")));
                    }
                    Ok(m)
                }
            }
        };
        let n = sys.state_dim();
        let a0 = sys.a.clone();
        let ar = mat(&self.drift_rate, n, n, "drift_rate", DMatrix::zeros(n, n))?;
        let s0 = mat(&self.sigma0, d, d, "sigma0", DMatrix::identity(d, d))?;
        let sr = mat(&self.sigma0_rate, d, d, "sigma0_rate", DMatrix::zeros(d, d))?;
        Ok((Arc::new(move |t| &a0 + &ar * t), Arc::new(move |t| &s0 + &sr * t)))
    }
}
