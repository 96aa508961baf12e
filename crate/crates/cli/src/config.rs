//! Run configuration file (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! energies = [1.0, -1.0, 0.5]
//! angles = [0.7853981633974483, 1.0471975511965976, 0.5235987755982988]
//! mode = "finite"              # or "countable"
//! horizon = 10000000
//! target_exponent = 5.0
//! stop_factor = 8.0
//! start_ratio = 0.1
//! envelope_ratio = 4.0
//! initial_gap = 1
//! per_decade = 200
//! # full_trace_window = [2000, 200000]
//!
//! [envelope]                   # countable mode only
//! kind = "log"                 # or { kind = "power", alpha = 0.5 }
//!                              # or { kind = "table", points = [[0, 1.0], [100, 2.0]] }
//! [tolerances]
//! max_decay_slope = -1.0
//! max_abs_exponent = -1.0
//! max_last_decade_fraction = 0.01
//! # max_oscillatory_c = 1000.0
//! ```

use serde::{Deserialize, Serialize};

use embedded_eigs::gluer::{plan, Envelope, GlueOptions, GluingPlan, Mode};
use embedded_eigs::model::BoundaryAngle;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Finite,
    Countable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvelopeConfig {
    Log,
    Power { alpha: f64 },
    Table { points: Vec<(u64, f64)> },
}

impl EnvelopeConfig {
    pub fn to_envelope(&self) -> Envelope {
        match self {
            EnvelopeConfig::Log => Envelope::Log,
            EnvelopeConfig::Power { alpha } => Envelope::Power(*alpha),
            EnvelopeConfig::Table { points } => Envelope::Table(points.clone()),
        }
    }
}

/// Pass/fail bounds used by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Fitted slope of `ln R` against `ln n` must not exceed this.
    #[serde(default = "minus_one")]
    pub max_decay_slope: f64,
    /// Fitted exponent of the `|u|` envelope must not exceed this.
    #[serde(default = "minus_one")]
    pub max_abs_exponent: f64,
    #[serde(default = "one_percent")]
    pub max_last_decade_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_oscillatory_c: Option<f64>,
}

fn minus_one() -> f64 {
    -1.0
}

fn one_percent() -> f64 {
    0.01
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            max_decay_slope: minus_one(),
            max_abs_exponent: minus_one(),
            max_last_decade_fraction: one_percent(),
            max_oscillatory_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub energies: Vec<f64>,
    pub angles: Vec<f64>,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_exponent")]
    pub target_exponent: f64,
    #[serde(default = "default_stop")]
    pub stop_factor: f64,
    #[serde(default = "default_start_ratio")]
    pub start_ratio: f64,
    #[serde(default = "default_envelope_ratio")]
    pub envelope_ratio: f64,
    #[serde(default = "default_gap")]
    pub initial_gap: u64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_trace_window: Option<(u64, u64)>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_horizon() -> u64 {
    1_000_000
}
fn default_exponent() -> f64 {
    GlueOptions::default().target_exponent
}
fn default_stop() -> f64 {
    GlueOptions::default().stop_factor
}
fn default_start_ratio() -> f64 {
    GlueOptions::default().start_ratio
}
fn default_envelope_ratio() -> f64 {
    GlueOptions::default().envelope_ratio
}
fn default_gap() -> u64 {
    GlueOptions::default().initial_gap
}
fn default_per_decade() -> usize {
    GlueOptions::default().per_decade
}

impl RunConfig {
    /// A finite-mode configuration with default rules.
    pub fn new(energies: Vec<f64>, angles: Vec<f64>) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            energies,
            angles,
            mode: ModeName::Finite,
            envelope: None,
            horizon: default_horizon(),
            target_exponent: default_exponent(),
            stop_factor: default_stop(),
            start_ratio: default_start_ratio(),
            envelope_ratio: default_envelope_ratio(),
            initial_gap: default_gap(),
            per_decade: default_per_decade(),
            full_trace_window: None,
            tolerances: Tolerances::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!("unsupported config version {}", self.version)));
        }
        if self.energies.len() != self.angles.len() {
            return Err(CliError::Config(format!(
                "{} energies but {} angles",
                self.energies.len(),
                self.angles.len()
            )));
        }
        if self.mode == ModeName::Countable && self.envelope.is_none() {
            return Err(CliError::Config("countable mode needs an [envelope]".into()));
        }
        Ok(())
    }

    pub fn boundary_angles(&self) -> Result<Vec<BoundaryAngle>, CliError> {
        Ok(self.angles.iter().map(|&t| BoundaryAngle::new(t)).collect::<Result<Vec<_>, _>>()?)
    }

    pub fn options(&self) -> GlueOptions {
        GlueOptions {
            target_exponent: self.target_exponent,
            stop_factor: self.stop_factor,
            start_ratio: self.start_ratio,
            envelope_ratio: self.envelope_ratio,
            initial_gap: self.initial_gap,
            per_decade: self.per_decade,
            full_trace_window: self.full_trace_window,
            ..GlueOptions::default()
        }
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeName::Finite => Mode::Finite,
            ModeName::Countable => {
                Mode::Countable(self.envelope.as_ref().map(EnvelopeConfig::to_envelope).unwrap_or(Envelope::Log))
            }
        }
    }

    pub fn plan(&self) -> Result<GluingPlan, CliError> {
        self.validate()?;
        Ok(plan(&self.energies, &self.boundary_angles()?, self.mode(), self.options())?)
    }
}
