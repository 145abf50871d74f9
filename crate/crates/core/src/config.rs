//! JSON run configuration.
//!
//! Every block is optional and falls back to hyperparameter set 1 with the
//! default drift model. The master seed is split into named sub-seeds.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drb::{DrbDesign, RuntimeModel};
use crate::error::Error;
use crate::esc::{quadrature_knobs, EscKnob};
use crate::harness::{ControlOffsets, DriftMode, GridSpace, LoopConfig};
use crate::ion::DriftConfig;
use crate::rng;

/// Default number of calibrations in the offset-recovery demo.
pub const DEFAULT_DEMO_CALIBRATIONS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscBlock {
    pub n_samples: usize,
    pub iterations: usize,
    pub knobs: Vec<EscKnob>,
}

impl Default for EscBlock {
    fn default() -> Self {
        EscBlock {
            n_samples: 30,
            iterations: 3,
            knobs: quadrature_knobs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopBlock {
    pub duration_hours: f64,
    pub interval_minutes: f64,
    #[serde(default = "default_report_minutes")]
    pub report_minutes: f64,
    #[serde(default)]
    pub drift_mode: DriftMode,
    #[serde(default)]
    pub initial_offsets: ControlOffsets,
    #[serde(default = "default_demo_calibrations")]
    pub offset_demo_calibrations: usize,
}

fn default_report_minutes() -> f64 {
    5.0
}

fn default_demo_calibrations() -> usize {
    DEFAULT_DEMO_CALIBRATIONS
}

impl Default for LoopBlock {
    fn default() -> Self {
        LoopBlock {
            duration_hours: 15.0,
            interval_minutes: 75.0,
            report_minutes: default_report_minutes(),
            drift_mode: DriftMode::Advancing,
            initial_offsets: ControlOffsets::default(),
            offset_demo_calibrations: DEFAULT_DEMO_CALIBRATIONS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default = "default_drb")]
    pub drb: DrbDesign,
    #[serde(default)]
    pub esc: EscBlock,
    #[serde(rename = "loop", default)]
    pub loop_: LoopBlock,
    #[serde(default)]
    pub runtime: RuntimeModel,
    #[serde(default)]
    pub output: OutputBlock,
}

fn default_drb() -> DrbDesign {
    DrbDesign::simulation(5, 18)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            drift: DriftConfig::default(),
            drb: default_drb(),
            esc: EscBlock::default(),
            loop_: LoopBlock::default(),
            runtime: RuntimeModel::default(),
            output: OutputBlock::default(),
        }
    }
}

/// Sub-seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub master: u64,
    pub drift: u64,
    pub drb: u64,
    pub esc: u64,
}

impl Seeds {
    pub fn split(master: u64) -> Self {
        Seeds {
            master,
            drift: rng::derive_named(master, "drift"),
            drb: rng::derive_named(master, "drb"),
            esc: rng::derive_named(master, "esc"),
        }
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} drift_seed={} drb_seed={} esc_seed={}",
            self.master, self.drift, self.drb, self.esc
        )
    }
}

/// A config problem with its location in the source, when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            (Some(l), None) => write!(f, "line {l}: ")?,
            _ => {}
        }
        if let Some(field) = &self.field {
            write!(f, "`{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigIssue {}

/// Line of the first occurrence of `"key"` in `src`, 1-based.
fn locate_key(src: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

impl ConfigIssue {
    fn from_json(e: &serde_json::Error) -> Self {
        ConfigIssue {
            line: Some(e.line()),
            column: Some(e.column()),
            field: None,
            message: e.to_string(),
        }
    }

    fn from_error(e: Error, src: &str) -> Self {
        match e {
            Error::Config { field, message } => {
                let leaf = field.rsplit('.').next().unwrap_or(&field).to_string();
                ConfigIssue {
                    line: locate_key(src, &leaf),
                    column: None,
                    field: Some(field),
                    message,
                }
            }
            other => ConfigIssue {
                line: None,
                column: None,
                field: None,
                message: other.to_string(),
            },
        }
    }
}

/// Short hex digest of the raw config bytes.
pub fn config_hash(src: &str) -> String {
    let digest = Sha256::digest(src.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_json_str(src: &str) -> Result<Self, ConfigIssue> {
        let cfg: RunConfig = serde_json::from_str(src).map_err(|e| ConfigIssue::from_json(&e))?;
        cfg.validate().map_err(|e| ConfigIssue::from_error(e, src))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.loop_.offset_demo_calibrations < 1 {
            return Err(Error::config("loop.offset_demo_calibrations", "must be >= 1"));
        }
        self.loop_config().validate()
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::split(self.seed)
    }

    /// Loop configuration with sub-seeds applied.
    pub fn loop_config(&self) -> LoopConfig {
        let seeds = self.seeds();
        LoopConfig {
            duration_hours: self.loop_.duration_hours,
            interval_minutes: self.loop_.interval_minutes,
            iterations: self.esc.iterations,
            n_samples: self.esc.n_samples,
            knobs: self.esc.knobs.clone(),
            drb: DrbDesign {
                seed: seeds.drb,
                ..self.drb.clone()
            },
            drift: DriftConfig {
                seed: seeds.drift,
                ..self.drift.clone()
            },
            runtime: self.runtime,
            initial_offsets: self.loop_.initial_offsets,
            report_minutes: self.loop_.report_minutes,
            drift_mode: self.loop_.drift_mode,
            probe_seed: seeds.esc,
        }
    }
}

/// Parses a grid-space document.
pub fn grid_space_from_json_str(src: &str) -> Result<GridSpace, ConfigIssue> {
    let space: GridSpace = serde_json::from_str(src).map_err(|e| ConfigIssue::from_json(&e))?;
    if space.enumerate().is_empty() {
        return Err(ConfigIssue {
            line: None,
            column: None,
            field: None,
            message: "grid space has no points".into(),
        });
    }
    Ok(space)
}
