use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::TimeSpaceGrid;
use crate::problem::catalog_ids;
use crate::simulate::TimeGrid;

/// One-dimensional PDE grid as given by `--grid nt,nx,lo,hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_t: usize,
    pub n_x: usize,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "unit")]
    pub t_end: f64,
}

fn unit() -> f64 {
    1.0
}

impl GridSpec {
    pub fn to_grid(&self) -> Result<TimeSpaceGrid> {
        TimeSpaceGrid::uniform(self.t_end, self.n_t, self.n_x, self.lo, self.hi)
    }
}

/// `nt,nx,lo,hi`, horizon 1.
pub fn parse_grid_flag(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::parse(1, format!("grid needs `nt,nx,lo,hi`, got `{s}`")));
    }
    let count = |v: &str| v.parse::<usize>().map_err(|_| Error::parse(1, format!("bad count `{v}`")));
    let num = |v: &str| v.parse::<f64>().map_err(|_| Error::parse(1, format!("bad bound `{v}`")));
    let spec =
        GridSpec { n_t: count(parts[0])?, n_x: count(parts[1])?, lo: num(parts[2])?, hi: num(parts[3])?, t_end: 1.0 };
    if spec.n_t == 0 || spec.n_x < 3 || !(spec.lo < spec.hi) || !spec.lo.is_finite() || !spec.hi.is_finite() {
        return Err(Error::parse(1, format!("grid `{s}` needs nt ≥ 1, nx ≥ 3 and finite lo < hi")));
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub x0: Vec<f64>,
}

fn default_paths() -> usize {
    10_000
}

fn default_dt() -> f64 {
    0.01
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { paths: default_paths(), dt: default_dt(), x0: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    crate::mgcheck::DEFAULT_THRESHOLD
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { threshold: default_threshold() }
    }
}

/// A run description. The seed has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub checks: CheckConfig,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text.as_bytes()[..s.start.min(text.len())].iter().filter(|&&c| c == b'\n').count() + 1)
                .unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !catalog_ids().iter().any(|(id, _)| *id == self.problem) {
            return Err(Error::UnknownProblem(self.problem.clone()));
        }
        if self.simulation.paths == 0 {
            return Err(Error::Config("simulation.paths must be positive".into()));
        }
        if !(self.checks.threshold > 0.0) {
            return Err(Error::Config("checks.threshold must be positive".into()));
        }
        if let Some(g) = &self.grid {
            g.to_grid()?;
        }
        self.time_grid()?;
        Ok(())
    }

    /// Simulation grid: the PDE horizon (or 1) split into steps of `dt`.
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_dt(self.grid.map_or(1.0, |g| g.t_end), self.simulation.dt)
    }
}
