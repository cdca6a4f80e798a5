//! TOML run configuration.
//!
//! ```toml
//! command = "train"          # train | predict | active-learn | benchmark | kernel-check
//! output_dir = "out"
//! seed = 7
//!
//! [operator]
//! variant = "laplacian"      # identity | first-derivative | integro-differential
//! dimension = 2              # laplacian | advection-diffusion-reaction | fractional
//!
//! [data]
//! anchors = "u.csv"
//! high = "f.csv"
//!
//! [train]
//! restarts = 10
//! freeze = ["rho=0"]
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use mfgp_core::model::{Frozen, TrainConfig};
use mfgp_core::{LinearOperatorSpec, QuadratureSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Predict,
    ActiveLearn,
    Benchmark,
    KernelCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Predict => "predict",
            Self::ActiveLearn => "active-learn",
            Self::Benchmark => "benchmark",
            Self::KernelCheck => "kernel-check",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            Self::Train => &["problem", "seed", "operator", "data", "train", "eval"],
            Self::Predict => &["model", "queries"],
            Self::ActiveLearn => &["problem", "seed", "train", "eval", "active"],
            Self::Benchmark => &["problem", "seed", "train", "benchmark"],
            Self::KernelCheck => &["seed", "operator", "check"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Model file read by `predict`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Query points read by `predict`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Operator table. Only the keys that apply to `variant` may be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_cutoff: Option<f64>,
}

pub const OPERATOR_VARIANTS: [&str; 6] = [
    "identity",
    "first-derivative",
    "integro-differential",
    "laplacian",
    "advection-diffusion-reaction",
    "fractional",
];

impl OperatorSection {
    pub fn to_spec(&self) -> Result<LinearOperatorSpec> {
        let allowed: &[&str] = match self.variant.as_str() {
            "identity" | "first-derivative" | "advection-diffusion-reaction" => &[],
            "integro-differential" => &["lower_bound"],
            "laplacian" => &["dimension"],
            "fractional" => &["alpha", "node_count", "frequency_cutoff"],
            other => {
                return Err(CliError::usage(format!(
                    "operator.variant: unknown operator `{other}` (expected one of {})",
                    OPERATOR_VARIANTS.join(", ")
                )))
            }
        };
        let present = [
            ("alpha", self.alpha.is_some()),
            ("dimension", self.dimension.is_some()),
            ("lower_bound", self.lower_bound.is_some()),
            ("node_count", self.node_count.is_some()),
            ("frequency_cutoff", self.frequency_cutoff.is_some()),
        ];
        if let Some((key, _)) = present.iter().find(|(k, p)| *p && !allowed.contains(k)) {
            return Err(CliError::usage(format!(
                "operator.{key} does not apply to variant `{}`",
                self.variant
            )));
        }
        let spec = match self.variant.as_str() {
            "identity" => LinearOperatorSpec::Identity,
            "first-derivative" => LinearOperatorSpec::FirstDerivative1D,
            "advection-diffusion-reaction" => LinearOperatorSpec::AdvectionDiffusionReaction,
            "integro-differential" => LinearOperatorSpec::IntegroDifferential1D {
                lower_bound: self.lower_bound.unwrap_or(0.0),
            },
            "laplacian" => LinearOperatorSpec::Laplacian {
                dim: self.dimension.ok_or_else(|| {
                    CliError::usage("operator.dimension is required for variant `laplacian`")
                })?,
            },
            _ => {
                let default = QuadratureSpec::default();
                LinearOperatorSpec::FractionalRL {
                    alpha: self.alpha.ok_or_else(|| {
                        CliError::usage("operator.alpha is required for variant `fractional`")
                    })?,
                    quadrature: QuadratureSpec {
                        node_count: self.node_count.unwrap_or(default.node_count),
                        frequency_cutoff: self.frequency_cutoff.unwrap_or(default.frequency_cutoff),
                    },
                }
            }
        };
        spec.validate()
            .map_err(|e| CliError::usage(format!("operator: {e}")))?;
        Ok(spec)
    }

    pub fn from_spec(spec: &LinearOperatorSpec) -> Self {
        let mut s = Self {
            variant: spec.name().to_string(),
            ..Self::default()
        };
        match spec {
            LinearOperatorSpec::IntegroDifferential1D { lower_bound } => {
                s.lower_bound = Some(*lower_bound)
            }
            LinearOperatorSpec::Laplacian { dim } => s.dimension = Some(*dim),
            LinearOperatorSpec::FractionalRL { alpha, quadrature } => {
                s.alpha = Some(*alpha);
                s.node_count = Some(quadrature.node_count);
                s.frequency_cutoff = Some(quadrature.frequency_cutoff);
            }
            _ => {}
        }
        s
    }
}

/// Observation CSV files, one per fidelity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// Overrides the top-level seed for the optimizer restarts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Entries `name=value` with name one of `rho`, `noise_u`, `noise_f1`,
    /// `noise_f2`. Noise values are variances.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeze: Vec<String>,
}

/// Tensor grid of evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Points per dimension.
    pub grid: Vec<usize>,
    /// `[lower, upper]` per dimension.
    pub bounds: Vec<[f64; 2]>,
}

impl EvalSection {
    /// Grid points, last dimension varying fastest. A single point per
    /// dimension sits at the midpoint.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![Vec::new()];
        for (&n, &[a, b]) in self.grid.iter().zip(&self.bounds) {
            let coords: Vec<f64> = (0..n)
                .map(|i| {
                    if n == 1 {
                        0.5 * (a + b)
                    } else {
                        a + (b - a) * i as f64 / (n - 1) as f64
                    }
                })
                .collect();
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    coords.iter().map(move |c| {
                        let mut q = p.clone();
                        q.push(*c);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.len() != self.bounds.len() {
            return Err(CliError::usage(
                "eval.grid and eval.bounds must be non-empty and of equal length",
            ));
        }
        if self.grid.contains(&0) {
            return Err(CliError::usage("eval.grid entries must be >= 1"));
        }
        if self
            .bounds
            .iter()
            .any(|[a, b]| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(CliError::usage(
                "eval.bounds entries must be finite with lower < upper",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveSection {
    /// Number of acquisitions.
    pub budget: usize,
    /// Candidate CSV. Defaults to the `[eval]` grid, then to the problem's
    /// evaluation points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Data seeds to run. Defaults to the top-level seed alone.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    /// Random `(x, x', θ)` samples per operator.
    pub samples: usize,
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_str(&text, &base).map_err(|e| match e {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses config text; relative paths resolve against `base_dir`.
pub fn parse_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig =
        toml::from_str(text).map_err(|e| CliError::usage(e.to_string().trim_end().to_string()))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical TOML text of a config.
pub fn serialize(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::usage(format!("cannot serialize config: {e}")))
}

/// Canonical form of arbitrary TOML text: keys sorted, formatting uniform.
pub fn normalize(text: &str) -> Result<String> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::usage(e.to_string()))?;
    toml::to_string(&table).map_err(|e| CliError::usage(e.to_string()))
}

impl RunConfig {
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn present_keys(&self) -> Vec<&'static str> {
        [
            ("problem", self.problem.is_some()),
            ("seed", self.seed.is_some()),
            ("model", self.model.is_some()),
            ("queries", self.queries.is_some()),
            ("operator", self.operator.is_some()),
            ("data", self.data.is_some()),
            ("train", self.train.is_some()),
            ("eval", self.eval.is_some()),
            ("active", self.active.is_some()),
            ("benchmark", self.benchmark.is_some()),
            ("check", self.check.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.then_some(k))
        .collect()
    }

    fn require<T>(&self, v: &Option<T>, key: &str) -> Result<()> {
        match v {
            Some(_) => Ok(()),
            None => Err(CliError::usage(format!(
                "missing required key `{key}` for command `{}`",
                self.command.name()
            ))),
        }
    }

    fn require_file(&self, p: &Path, key: &str) -> Result<()> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "{key}: file {} does not exist",
                full.display()
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.command.allowed_keys();
        if let Some(k) = self
            .present_keys()
            .into_iter()
            .find(|k| !allowed.contains(k))
        {
            return Err(CliError::usage(format!(
                "key `{k}` is not used by command `{}`",
                self.command.name()
            )));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::usage("output_dir must not be empty"));
        }
        let out = self.output_dir();
        if out.exists() && !out.is_dir() {
            return Err(CliError::usage(format!(
                "output_dir: {} exists and is not a directory",
                out.display()
            )));
        }
        if self.command != Command::Predict {
            self.require(&self.seed, "seed")?;
        }
        if let Some(name) = &self.problem {
            mfgp_core::benchmarks::make_problem(name)
                .map_err(|e| CliError::usage(format!("problem: {e}")))?;
        }
        if let Some(op) = &self.operator {
            op.to_spec()?;
        }
        if self.train.is_some() {
            self.train_config(None)?;
        }
        if let Some(e) = &self.eval {
            e.validate()?;
        }
        match self.command {
            Command::Train => {
                match (&self.problem, &self.data) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::usage(
                            "`problem` and `data` are mutually exclusive",
                        ))
                    }
                    (Some(_), None) if self.operator.is_some() => {
                        return Err(CliError::usage(
                            "`operator` is implied by `problem`; remove one of them",
                        ))
                    }
                    (None, None) => {
                        return Err(CliError::usage(
                            "command `train` needs either `problem` or `data`",
                        ))
                    }
                    _ => {}
                }
                if let Some(d) = &self.data {
                    self.require(&self.operator, "operator")?;
                    let files = [
                        ("data.anchors", &d.anchors),
                        ("data.low", &d.low),
                        ("data.high", &d.high),
                    ];
                    if files.iter().all(|(_, f)| f.is_none()) {
                        return Err(CliError::usage("data: at least one CSV file is required"));
                    }
                    for (key, f) in files {
                        if let Some(f) = f {
                            self.require_file(f, key)?;
                        }
                    }
                }
            }
            Command::Predict => {
                self.require(&self.model, "model")?;
                self.require(&self.queries, "queries")?;
                self.require_file(self.model.as_ref().unwrap(), "model")?;
                self.require_file(self.queries.as_ref().unwrap(), "queries")?;
            }
            Command::ActiveLearn => {
                self.require(&self.problem, "problem")?;
                self.require(&self.active, "active")?;
                if let Some(c) = self.active.as_ref().and_then(|a| a.candidates.as_ref()) {
                    self.require_file(c, "active.candidates")?;
                }
            }
            Command::Benchmark => {
                self.require(&self.problem, "problem")?;
                if self.benchmark.as_ref().is_some_and(|b| b.seeds.is_empty()) {
                    return Err(CliError::usage("benchmark.seeds must not be empty"));
                }
            }
            Command::KernelCheck => {
                if self.check.as_ref().is_some_and(|c| c.samples == 0) {
                    return Err(CliError::usage("check.samples must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Training options, starting from `base_frozen` (a problem's fixed
    /// parameters) with the `freeze` entries applied on top.
    pub fn train_config(&self, base_frozen: Option<Frozen>) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            seed: self.seed.unwrap_or(0),
            frozen: base_frozen.unwrap_or_default(),
            ..TrainConfig::default()
        };
        if let Some(t) = &self.train {
            if let Some(r) = t.restarts {
                cfg.restarts = r;
            }
            if let Some(s) = t.seed {
                cfg.seed = s;
            }
            if let Some(m) = t.max_iterations {
                cfg.max_iterations = m;
            }
            if let Some(tol) = t.tolerance {
                cfg.tolerance = tol;
            }
            for entry in &t.freeze {
                apply_freeze(&mut cfg.frozen, entry)?;
            }
        }
        cfg.validate()
            .map_err(|e| CliError::usage(format!("train: {e}")))?;
        Ok(cfg)
    }

    pub fn operator_spec(&self) -> Result<Option<LinearOperatorSpec>> {
        self.operator
            .as_ref()
            .map(OperatorSection::to_spec)
            .transpose()
    }
}

fn apply_freeze(frozen: &mut Frozen, entry: &str) -> Result<()> {
    let bad = || {
        CliError::usage(format!(
            "train.freeze: `{entry}` is not of the form name=value with name one of \
             rho, noise_u, noise_f1, noise_f2"
        ))
    };
    let (name, value) = entry.split_once('=').ok_or_else(bad)?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("train.freeze: malformed number in `{entry}`")))?;
    let slot = match name.trim() {
        "rho" => &mut frozen.rho,
        "noise_u" => &mut frozen.noise_u,
        "noise_f1" => &mut frozen.noise_f1,
        "noise_f2" => &mut frozen.noise_f2,
        _ => return Err(bad()),
    };
    *slot = Some(value);
    Ok(())
}
