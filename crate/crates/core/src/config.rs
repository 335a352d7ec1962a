//! Flat key-value configuration documents.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Unknown keys are errors (they are almost always typos), and the
//! raw text is echoed into logs and manifests for provenance.
//!
//! ## Schema
//!
//! Generation:
//!   paradigm         A | B | C | D | tsp
//!   frames           frame count for A/C (default 1200)
//!   steps            action steps for B (default 1200)
//!   sequence_length  token count for D (default 1200)
//!   cities           TSP city count (default 30)
//!   frame_size       pixels per side (default 32)
//!   ball_radius      pixels (default 3.0)
//!   action_step      pixels per action (default 2.0)
//!   velocity_x/_y    passive velocity, pixels/frame (default 1.37, 0.93)
//!   seed             u64 (default 0)
//!
//! Training:
//!   height, width    grid size (default 15 x 15)
//!   sigma            smearing kernel width in node units (default 1.5)
//!   batch_size       default 64 (must be >= 2; batch-mean losses are
//!                    degenerate at B=1)
//!   epochs           default per paradigm: A 150, B 150, C 200, D 300
//!   learning_rate    default 1e-3
//!   alpha_schedule   constant | ramp (default ramp)
//!   alpha_start      default 3.0 (ramp peak)
//!   alpha_final      default 1.0
//!   alpha_ramp_fraction  fraction of epochs to anneal over (default 0.2)
//!   gamma            default 0.5
//!   snapshot_cadence checkpoint every N epochs (default 50; 0 = final only)
//!
//! TSP solving:
//!   ring_factor      N = ceil(ring_factor * C) (default 2.5)
//!   sigma_start      default 0.3 * N
//!   sigma_end        default 0.5
//!   tsp_steps        optimization steps (default 3000)
//!   lambda0          elastic weight at sigma_start (default 0.3)
//!   tsp_learning_rate  default 0.03
//!   restarts         default 5

use crate::dataset::Paradigm;
use std::collections::BTreeMap;
use std::fmt;

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Syntax { line: usize, text: String },
    MissingKey { key: &'static str },
    UnknownKey { key: String },
    BadValue { key: String, value: String, expected: &'static str },
    Invalid { reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { line, text } => {
                write!(f, "config line {line} is not `key = value`: {text:?}")
            }
            ConfigError::MissingKey { key } => write!(f, "missing config key: {key}"),
            ConfigError::UnknownKey { key } => write!(f, "unknown config key: {key}"),
            ConfigError::BadValue { key, value, expected } => {
                write!(f, "config key {key}: expected {expected}, got {value:?}")
            }
            ConfigError::Invalid { reason } => write!(f, "invalid config: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

const KNOWN_KEYS: &[&str] = &[
    "paradigm",
    "frames",
    "steps",
    "sequence_length",
    "cities",
    "frame_size",
    "ball_radius",
    "action_step",
    "velocity_x",
    "velocity_y",
    "seed",
    "height",
    "width",
    "sigma",
    "batch_size",
    "epochs",
    "learning_rate",
    "alpha_schedule",
    "alpha_start",
    "alpha_final",
    "alpha_ramp_fraction",
    "gamma",
    "snapshot_cadence",
    "ring_factor",
    "sigma_start",
    "sigma_end",
    "tsp_steps",
    "lambda0",
    "tsp_learning_rate",
    "restarts",
];

/// Parsed document plus the verbatim source text.
#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    pairs: BTreeMap<String, String>,
    pub raw_text: String,
}

impl FlatConfig {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut pairs = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let stripped = line.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((k, v)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: line.to_string() });
            };
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { key });
            }
            pairs.insert(key, v.trim().to_string());
        }
        Ok(FlatConfig { pairs, raw_text: text.to_string() })
    }

    pub fn empty() -> Self {
        FlatConfig::default()
    }

    /// Overrides from CLI flags; flag values win over file values.
    pub fn set(&mut self, key: &str, value: String) {
        assert!(KNOWN_KEYS.contains(&key), "unknown override key {key}");
        self.pairs.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(
        &self,
        key: &str,
        expected: &'static str,
    ) -> ConfigResult<Option<T>> {
        match self.pairs.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                expected,
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        Ok(self.get_parsed::<f64>(key, "a real number")?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> ConfigResult<usize> {
        Ok(self.get_parsed::<usize>(key, "a nonnegative integer")?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> ConfigResult<u64> {
        Ok(self.get_parsed::<u64>(key, "a nonnegative integer")?.unwrap_or(default))
    }

    /// Canonical resolved form: sorted `key = value` lines.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn paradigm(&self) -> ConfigResult<Option<Paradigm>> {
        match self.pairs.get("paradigm") {
            None => Ok(None),
            Some(v) => Paradigm::from_letter(v).map(Some).ok_or(ConfigError::BadValue {
                key: "paradigm".into(),
                value: v.clone(),
                expected: "A, B, C, or D",
            }),
        }
    }
}

/// Alpha heating schedule: either constant, or a linear ramp from
/// `start` down to `final` over the first `fraction` of all epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    Constant(f64),
    Ramp { start: f64, end: f64, fraction: f64 },
}

impl AlphaSchedule {
    /// Alpha at a fractional training progress in [0, 1].
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Ramp { start, end, fraction } => {
                if fraction <= 0.0 || progress >= fraction {
                    end
                } else {
                    start + (end - start) * (progress / fraction)
                }
            }
        }
    }
}

/// Resolved training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub grid_h: usize,
    pub grid_w: usize,
    pub sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub alpha: AlphaSchedule,
    pub gamma: f64,
    pub seed: u64,
    /// Checkpoint every N epochs; 0 means final checkpoint only.
    pub snapshot_cadence: usize,
}

impl TrainConfig {
    pub fn from_flat(cfg: &FlatConfig, paradigm: Paradigm) -> ConfigResult<Self> {
        let default_epochs = match paradigm {
            Paradigm::PassiveBall | Paradigm::ActionBall => 150,
            Paradigm::TwoBall => 200,
            Paradigm::Grammar => 300,
        };
        let schedule = match cfg.get("alpha_schedule").unwrap_or("ramp") {
            "constant" => AlphaSchedule::Constant(cfg.f64_or("alpha_start", 1.0)?),
            "ramp" => AlphaSchedule::Ramp {
                start: cfg.f64_or("alpha_start", 3.0)?,
                end: cfg.f64_or("alpha_final", 1.0)?,
                fraction: cfg.f64_or("alpha_ramp_fraction", 0.2)?,
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "alpha_schedule".into(),
                    value: other.into(),
                    expected: "constant or ramp",
                })
            }
        };
        let tc = TrainConfig {
            paradigm,
            grid_h: cfg.usize_or("height", 15)?,
            grid_w: cfg.usize_or("width", 15)?,
            sigma: cfg.f64_or("sigma", 1.5)?,
            batch_size: cfg.usize_or("batch_size", 64)?,
            epochs: cfg.usize_or("epochs", default_epochs)?,
            learning_rate: cfg.f64_or("learning_rate", 1e-3)?,
            alpha: schedule,
            gamma: cfg.f64_or("gamma", 0.5)?,
            seed: cfg.u64_or("seed", 0)?,
            snapshot_cadence: cfg.usize_or("snapshot_cadence", 50)?,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> ConfigResult<()> {
        if self.batch_size < 2 {
            return Err(ConfigError::Invalid {
                reason: format!(
                    "batch_size {} < 2: batch-mean losses are degenerate at B=1",
                    self.batch_size
                ),
            });
        }
        if let AlphaSchedule::Ramp { fraction, .. } = self.alpha {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(ConfigError::Invalid {
                    reason: format!("alpha_ramp_fraction {fraction} outside [0, 1]"),
                });
            }
        }
        if !(self.sigma > 0.0) {
            return Err(ConfigError::Invalid { reason: format!("sigma {} must be > 0", self.sigma) });
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid { reason: "epochs must be >= 1".into() });
        }
        Ok(())
    }
}
