//! JSON scenario documents and their assembly into a [`Scenario`].

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error as ModelError;
use crate::model::{CurrentInjection, PllParams};
use crate::network::{per_unit_network, preset_z_eq, FaultSpec, FaultType, MmcSource, PhysicalNetwork};
use crate::sim::{LvrtPolicy, Scenario};

pub const DEFAULT_DT: f64 = 5e-5;
/// Simulated time after clearing when no horizon is given.
pub const DEFAULT_POST_CLEARING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse { message: String, line: usize, column: usize },
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn from_model(prefix: &str, e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter { field, reason } => Self::validation(format!("{prefix}.{field}"), reason),
            other => Self::validation(prefix, other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PllConfig {
    pub kp: f64,
    pub ki: f64,
    #[serde(default = "default_f_nominal")]
    pub f_nominal_hz: f64,
}

fn default_f_nominal() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub mva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(rename = "type")]
    pub fault_type: FaultType,
    #[serde(default = "default_location")]
    pub location: f64,
    /// Preset for the fault type when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_eq: Option<f64>,
    pub t_fault: f64,
    pub fct: f64,
}

fn default_location() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    pub isd: f64,
    #[serde(default)]
    pub isq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// `t_fault + fct + 1 s` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Every `stride`-th sample is written.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { stride: 1 }
    }
}

fn default_mmc() -> MmcSource {
    MmcSource {
        u_mmc_pos: 1.0,
        i_lim: 1.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub pll: PllConfig,
    pub base: BaseConfig,
    pub network: PhysicalNetwork,
    #[serde(default = "default_mmc")]
    pub mmc: MmcSource,
    pub fault: FaultConfig,
    pub injection: InjectionConfig,
    #[serde(default = "LvrtPolicy::disabled")]
    pub lvrt: LvrtPolicy,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
        cfg.to_scenario()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_overrides(mut self, dt: Option<f64>, horizon: Option<f64>) -> Result<Self, ConfigError> {
        if let Some(dt) = dt {
            self.sim.dt = dt;
        }
        if horizon.is_some() {
            self.sim.horizon = horizon;
        }
        self.to_scenario()?;
        Ok(self)
    }

    /// Validated scenario, with the fault-type preset applied when `z_eq`
    /// is not given.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::validation("name", "must not be empty"));
        }
        if self.pll.f_nominal_hz.is_nan() || self.pll.f_nominal_hz <= 0.0 {
            return Err(ConfigError::validation("pll.f_nominal_hz", "must be > 0"));
        }
        let pll = PllParams::new(self.pll.kp, self.pll.ki, TAU * self.pll.f_nominal_hz)
            .map_err(|e| ConfigError::from_model("pll", e))?;
        let net = per_unit_network(&self.network, self.base.mva).map_err(|e| ConfigError::from_model("network", e))?;
        let mmc = MmcSource::new(self.mmc.u_mmc_pos, self.mmc.i_lim).map_err(|e| ConfigError::from_model("mmc", e))?;
        let z_eq = match self.fault.z_eq {
            Some(z) => z,
            None => preset_z_eq(&net, &mmc, self.fault.fault_type).map_err(|e| ConfigError::from_model("fault", e))?,
        };
        let fault = FaultSpec::new(self.fault.fault_type, self.fault.location, z_eq, self.fault.t_fault, self.fault.fct)
            .map_err(|e| ConfigError::from_model("fault", e))?;
        if !self.injection.isd.is_finite() || !self.injection.isq.is_finite() {
            return Err(ConfigError::validation("injection", "currents must be finite"));
        }
        if self.output.stride == 0 {
            return Err(ConfigError::validation("output.stride", "must be >= 1"));
        }
        let scenario = Scenario {
            pll,
            net,
            mmc,
            fault,
            base_injection: CurrentInjection::new(self.injection.isd, self.injection.isq),
            lvrt: self.lvrt,
            dt: self.sim.dt,
            horizon: self.sim.horizon.unwrap_or(fault.t_clear() + DEFAULT_POST_CLEARING),
        };
        scenario.validate().map_err(|e| match e {
            ModelError::InvalidParameter { field, reason } => {
                let field = match field {
                    "dt" | "horizon" => format!("sim.{field}"),
                    other if other.starts_with("lvrt") => other.to_owned(),
                    other => format!("scenario.{other}"),
                };
                ConfigError::validation(field, reason)
            }
            other => ConfigError::validation("scenario", other.to_string()),
        })?;
        Ok(scenario)
    }
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ScenarioConfig::from_json(&text)
}

/// The six reference cases shipped with the crate.
pub const BUNDLED: [(&str, &str); 6] = [
    ("case1", include_str!("../configs/case1.json")),
    ("case2", include_str!("../configs/case2.json")),
    ("case3", include_str!("../configs/case3.json")),
    ("case4", include_str!("../configs/case4.json")),
    ("case5", include_str!("../configs/case5.json")),
    ("case6", include_str!("../configs/case6.json")),
];

pub fn bundled_config(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_json(text).expect("bundled configs are valid"))
}

pub fn bundled_configs() -> Vec<ScenarioConfig> {
    BUNDLED
        .iter()
        .map(|(_, text)| ScenarioConfig::from_json(text).expect("bundled configs are valid"))
        .collect()
}

/// Named scenarios for [`crate::analysis::case_suite`].
pub fn named_scenarios(configs: &[ScenarioConfig]) -> Result<Vec<(String, Scenario)>, ConfigError> {
    configs.iter().map(|c| Ok((c.name.clone(), c.to_scenario()?))).collect()
}
