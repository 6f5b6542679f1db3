//! Run configuration: one JSON file, unknown keys rejected, every field
//! optional except the model.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fate::FateThresholds;
use crate::integrate::StepperConfig;
use crate::models::ModelSpec;
use crate::system::Point3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    /// serde_json reports the line, column and offending key.
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid value for `{key}`: {detail}")]
    Invalid { key: &'static str, detail: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

/// Starting points of a simulation batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConditions {
    /// Explicit `[x, y, z]` triples.
    Points { points: Vec<[f64; 3]> },
    /// `(cx + r cos θ, cy + r sin θ, 0)` for θ from `theta_start` by
    /// `theta_step` while θ ≤ `theta_stop`.
    Circle {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
        #[serde(default = "default_theta_start")]
        theta_start: f64,
        #[serde(default = "default_theta_step")]
        theta_step: f64,
        #[serde(default = "default_theta_stop")]
        theta_stop: f64,
    },
    /// `(θ, −θ, 0)` on r₀ for θ from `theta_start` by `theta_step` while
    /// θ ≤ `theta_stop`.
    R0 { theta_start: f64, theta_step: f64, theta_stop: f64 },
}

fn default_theta_start() -> f64 {
    0.1
}
fn default_theta_step() -> f64 {
    0.1
}
fn default_theta_stop() -> f64 {
    TAU - 0.1
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions::Points { points: vec![] }
    }
}

fn theta_range(start: f64, step: f64, stop: f64) -> Vec<f64> {
    // tolerate rounding in the last step
    let n = ((stop - start) / step + 1e-9).floor();
    if !(n >= 0.0) {
        return vec![];
    }
    (0..=n as usize).map(|i| start + step * i as f64).collect()
}

impl InitialConditions {
    pub fn points(&self) -> Vec<Point3> {
        match self {
            InitialConditions::Points { points } => points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
            InitialConditions::Circle { radius, center, theta_start, theta_step, theta_stop } => {
                theta_range(*theta_start, *theta_step, *theta_stop)
                    .into_iter()
                    .map(|th| Point3::new(center[0] + radius * th.cos(), center[1] + radius * th.sin(), 0.0))
                    .collect()
            }
            InitialConditions::R0 { theta_start, theta_step, theta_stop } => {
                theta_range(*theta_start, *theta_step, *theta_stop)
                    .into_iter()
                    .map(|th| Point3::new(th, -th, 0.0))
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |detail: String| Err(ConfigError::Invalid { key: "initial_conditions", detail });
        match self {
            InitialConditions::Points { points } => {
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("non-finite coordinate".into());
                }
            }
            InitialConditions::Circle { theta_step, .. } | InitialConditions::R0 { theta_step, .. } => {
                if !(*theta_step > 0.0 && theta_step.is_finite()) {
                    return bad(format!("theta_step must be positive, got {theta_step}"));
                }
            }
        }
        Ok(())
    }
}

/// Rectangle of Σ sampled on an `nx × ny` grid (inclusive of the edges).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { x_min: -0.4, x_max: 0.4, y_min: -0.4, y_max: 0.4, nx: 21, ny: 21 }
    }
}

impl GridConfig {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// Row-major `(x, y)` points: `y` varies fastest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let ys = Self::axis(self.y_min, self.y_max, self.ny);
        Self::axis(self.x_min, self.x_max, self.nx)
            .into_iter()
            .flat_map(|x| ys.iter().map(move |&y| (x, y)))
            .collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(ConfigError::Invalid { key: "grid", detail: "bounds must be finite with min ≤ max".into() });
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(ConfigError::Invalid { key: "grid", detail: "nx and ny must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclesConfig {
    pub interval: (f64, f64),
    pub grid_n: usize,
}

impl Default for CyclesConfig {
    fn default() -> Self {
        Self { interval: (0.01, 0.8), grid_n: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnMapConfig {
    /// Σ points `[x, y]` to iterate from.
    pub points: Vec<[f64; 2]>,
    pub iterations: usize,
    /// Base points `(x₀, −x₀)` to linearize at.
    pub x0: Vec<f64>,
}

impl Default for ReturnMapConfig {
    fn default() -> Self {
        Self { points: vec![], iterations: 10, x0: vec![0.1, 0.05, 0.025] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub initial_conditions: InitialConditions,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub fate: FateThresholds,
    #[serde(default)]
    pub cycles: CyclesConfig,
    #[serde(default)]
    pub return_map: ReturnMapConfig,
}

fn default_t_max() -> f64 {
    20.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            initial_conditions: InitialConditions::default(),
            t_max: default_t_max(),
            stepper: StepperConfig::default(),
            output_dir: default_output_dir(),
            format: OutputFormat::default(),
            grid: GridConfig::default(),
            fate: FateThresholds::default(),
            cycles: CyclesConfig::default(),
            return_map: ReturnMapConfig::default(),
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid { key: "model", detail: e.to_string() })?;
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(ConfigError::Invalid { key: "t_max", detail: format!("must be positive, got {}", self.t_max) });
        }
        self.stepper.validate().map_err(|e| ConfigError::Invalid { key: "stepper", detail: e.to_string() })?;
        self.initial_conditions.validate()?;
        self.grid.validate()?;
        let (a, b) = self.cycles.interval;
        if !(a > 0.0 && b > a && b.is_finite()) || self.cycles.grid_n < 2 {
            return Err(ConfigError::Invalid {
                key: "cycles",
                detail: "interval must satisfy 0 < a < b and grid_n ≥ 2".into(),
            });
        }
        let f = &self.fate;
        let pos = [f.t_max, f.origin_radius, f.origin_dwell, f.periodic_tol, f.cycle_lock];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(f.boundary_band >= 0.0) {
            return Err(ConfigError::Invalid { key: "fate", detail: "thresholds must be positive and finite".into() });
        }
        if self.return_map.x0.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(ConfigError::Invalid { key: "return_map.x0", detail: "base points must be positive".into() });
        }
        Ok(())
    }
}
