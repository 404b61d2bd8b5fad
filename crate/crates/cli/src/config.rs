//! Experiment configuration: one strict JSON document per run.
//!
//! Unknown fields are rejected (silent typos in experiment configs are the
//! dominant failure mode), and every command validates the presence of the
//! fields it needs with a field-path diagnostic.

use sdde_lab::estimate::TerminalFunctional;
use sdde_lab::model::{parse_model_json, LyapunovSuite, ModelSpec, Segment, SegmentSpec};
use sdde_lab::simulate::SimGrid;
use sdde_lab::verify::GridSpec;
use serde::Deserialize;

/// Error that must surface as exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub name: String,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// The full experiment configuration. Commands read the subset they need;
/// unused optional fields are allowed so one config can drive several
/// commands.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model definition: built-in reference or explicit registry form.
    pub model: serde_json::Value,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub xi: Option<SegmentSpec>,
    #[serde(default)]
    pub h: Option<SegmentSpec>,
    #[serde(default)]
    pub f: Option<FunctionalConfig>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub eps_fd: Option<f64>,
    #[serde(default)]
    pub control_variate: Option<bool>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub assumptions: Option<Vec<String>>,
    #[serde(default)]
    pub eps_param: Option<f64>,
    #[serde(default)]
    pub t_list: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_t: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_r: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_p: Option<Vec<f64>>,
    /// Gramian command: steering horizon (defaults to `t_final - r0`).
    #[serde(default)]
    pub tau: Option<f64>,
    /// Gramian command: quadrature step (defaults to `dt`).
    #[serde(default)]
    pub quad_step: Option<f64>,
    /// Gramian command: upper integration horizon (defaults to `tau`).
    #[serde(default)]
    pub t_horizon: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("{e}")))
    }

    pub fn build_model(&self) -> Result<(ModelSpec, Option<LyapunovSuite>), ConfigError> {
        let text = serde_json::to_string(&self.model)
            .map_err(|e| ConfigError(format!("model: {e}")))?;
        parse_model_json(&text).map_err(|e| ConfigError(format!("model: {e}")))
    }

    pub fn require<T: Copy>(&self, field: &str, value: Option<T>) -> Result<T, ConfigError> {
        value.ok_or_else(|| ConfigError(format!("missing required field '{field}'")))
    }

    pub fn require_ref<'a, T>(
        &self,
        field: &str,
        value: &'a Option<T>,
    ) -> Result<&'a T, ConfigError> {
        value
            .as_ref()
            .ok_or_else(|| ConfigError(format!("missing required field '{field}'")))
    }

    pub fn sim_grid(&self, model: &ModelSpec) -> Result<SimGrid, ConfigError> {
        let t_final = self.require("t_final", self.t_final)?;
        let dt = self.require("dt", self.dt)?;
        SimGrid::from_times(t_final, model.r0(), dt).map_err(|e| ConfigError(format!("{e}")))
    }

    /// Validates grid compatibility for commands that build their own grids
    /// per horizon, so bad steps fail as config errors.
    pub fn check_grid_times(&self, model: &ModelSpec, t_list: &[f64]) -> Result<f64, ConfigError> {
        let dt = self.require("dt", self.dt)?;
        for &t in t_list {
            SimGrid::from_times(t.max(model.r0() + dt), model.r0(), dt)
                .map_err(|e| ConfigError(format!("{e}")))?;
        }
        Ok(dt)
    }

    pub fn segment(
        &self,
        field: &str,
        spec: &Option<SegmentSpec>,
        model: &ModelSpec,
        grid: &SimGrid,
    ) -> Result<Segment, ConfigError> {
        let spec = self.require_ref(field, spec)?;
        spec.build(model.r0(), model.dim(), grid.n_hist())
            .map_err(|e| ConfigError(format!("{field}: {e}")))
    }

    pub fn functional(&self, model: &ModelSpec) -> Result<TerminalFunctional, ConfigError> {
        let f = self.require_ref("f", &self.f)?;
        TerminalFunctional::by_name(&f.name, model.m())
            .map_err(|e| ConfigError(format!("f: {e}")))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let g = self.require("grid", self.grid)?;
        GridSpec::new(g.lo, g.hi, g.step).map_err(|e| ConfigError(format!("grid: {e}")))
    }

    pub fn n_paths_checked(&self) -> Result<usize, ConfigError> {
        let n = self.require("n_paths", self.n_paths)?;
        if n < 2 {
            return Err(ConfigError(format!("n_paths must be >= 2, got {n}")));
        }
        Ok(n)
    }

    pub fn seed_checked(&self) -> Result<u64, ConfigError> {
        self.require("seed", self.seed)
    }
}
