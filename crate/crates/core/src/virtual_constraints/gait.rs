use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DEFAULT_KD, DEFAULT_KP, DEFAULT_TAU_MARGIN};
use crate::error::{Error, Result};
use crate::rigid_body::{RobotModel, State};

pub const GAIT_SCHEMA_VERSION: &str = "1.0";

/// A periodic walking gait: Bézier virtual constraints plus everything the
/// controller needs to track them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gait {
    /// Name of the model the gait was synthesized for.
    pub model: String,
    /// `o × (b+1)` Bézier coefficients, one row per output.
    pub alpha: DMatrix<f64>,
    /// Step duration in seconds.
    pub step_duration: f64,
    /// Linearized hip position at the start of the step (`τ = 0`).
    pub phase_start: f64,
    /// Linearized hip position at impact (`τ = 1`).
    pub phase_end: f64,
    pub tau_margin: f64,
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    /// `(w1, w2)` used at synthesis.
    pub weights: (f64, f64),
    /// Designed post-impact state (start of the step).
    pub initial_state: Option<State>,
    /// Designed pre-impact state.
    pub pre_impact_state: Option<State>,
    /// Free-form provenance, e.g. solver status and report path.
    pub metadata: BTreeMap<String, String>,
}

impl Gait {
    /// A gait with default gains and no designed states.
    pub fn new(model: &str, alpha: DMatrix<f64>, step_duration: f64, phase_start: f64, phase_end: f64) -> Self {
        let o = alpha.nrows();
        Self {
            model: model.to_string(),
            alpha,
            step_duration,
            phase_start,
            phase_end,
            tau_margin: DEFAULT_TAU_MARGIN,
            kp: DVector::from_element(o, DEFAULT_KP),
            kd: DVector::from_element(o, DEFAULT_KD),
            weights: (1.0, 0.0),
            initial_state: None,
            pre_impact_state: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.alpha.ncols().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.ncols() < 4 {
            return Err(Error::Gait("Bézier degree must be at least 3".into()));
        }
        if self.phase_end == self.phase_start || !(self.phase_end - self.phase_start).is_finite() {
            return Err(Error::Gait("degenerate phasing: start and end hip positions coincide".into()));
        }
        if self.kp.len() != self.alpha.nrows() || self.kd.len() != self.alpha.nrows() {
            return Err(Error::Gait("one Kp and one Kd per output required".into()));
        }
        if !(self.step_duration > 0.0) {
            return Err(Error::Gait("step duration must be positive".into()));
        }
        if !(self.tau_margin >= 0.0) {
            return Err(Error::Gait("tau margin must be non-negative".into()));
        }
        Ok(())
    }

    /// Checks that the gait fits `model` (name, output count and state sizes).
    pub fn check_model(&self, model: &RobotModel) -> Result<()> {
        self.validate()?;
        if self.model != model.name {
            return Err(Error::Mismatch { gait: self.model.clone(), model: model.name.clone() });
        }
        if self.alpha.nrows() != model.m() {
            return Err(Error::Mismatch {
                gait: format!("{} ({} outputs)", self.model, self.alpha.nrows()),
                model: format!("{} ({} actuators)", model.name, model.m()),
            });
        }
        for s in [&self.initial_state, &self.pre_impact_state].into_iter().flatten() {
            if s.dim() != model.n() {
                return Err(Error::Mismatch {
                    gait: format!("{} (state dimension {})", self.model, s.dim()),
                    model: format!("{} (n = {})", model.name, model.n()),
                });
            }
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    pub fn to_file(&self) -> GaitFile {
        GaitFile {
            schema_version: GAIT_SCHEMA_VERSION.to_string(),
            model: self.model.clone(),
            step_duration: self.step_duration,
            alpha: (0..self.alpha.nrows()).map(|r| self.alpha.row(r).iter().copied().collect()).collect(),
            phasing: PhasingSpec {
                kind: "linearized_hip_position".into(),
                start: self.phase_start,
                end: self.phase_end,
                tau_margin: self.tau_margin,
            },
            gains: GainSpec { kp: self.kp.iter().copied().collect(), kd: self.kd.iter().copied().collect() },
            weights: WeightSpec { torque: self.weights.0, saltation: self.weights.1 },
            states: StateSpec {
                initial: self.initial_state.as_ref().map(|s| s.to_vector().iter().copied().collect()),
                pre_impact: self.pre_impact_state.as_ref().map(|s| s.to_vector().iter().copied().collect()),
            },
            metadata: self.metadata.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("gait serialization cannot fail")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GaitFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_gait()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasingSpec {
    pub kind: String,
    pub start: f64,
    pub end: f64,
    #[serde(default = "default_margin")]
    pub tau_margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_TAU_MARGIN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub torque: f64,
    pub saltation: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub pre_impact: Option<Vec<f64>>,
}

/// On-disk gait (TOML). Versioned by `schema_version`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitFile {
    pub schema_version: String,
    pub model: String,
    pub step_duration: f64,
    /// One row of Bézier coefficients per output.
    pub alpha: Vec<Vec<f64>>,
    pub phasing: PhasingSpec,
    pub gains: GainSpec,
    pub weights: WeightSpec,
    #[serde(default)]
    pub states: StateSpec,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl GaitFile {
    pub fn into_gait(self) -> Result<Gait> {
        crate::rigid_body::check_schema(&self.schema_version)?;
        if self.phasing.kind != "linearized_hip_position" {
            return Err(Error::Gait(format!("unsupported phasing `{}`", self.phasing.kind)));
        }
        let rows = self.alpha.len();
        let cols = self.alpha.first().map_or(0, Vec::len);
        if self.alpha.iter().any(|r| r.len() != cols) {
            return Err(Error::Gait("ragged Bézier coefficient matrix".into()));
        }
        let state = |v: Option<Vec<f64>>| -> Result<Option<State>> {
            match v {
                None => Ok(None),
                Some(v) if v.len() % 2 == 1 => Err(Error::Gait("state vector must have even length".into())),
                Some(v) => Ok(Some(State::from_vector(&DVector::from_vec(v)))),
            }
        };
        let gait = Gait {
            model: self.model,
            alpha: DMatrix::from_fn(rows, cols, |r, c| self.alpha[r][c]),
            step_duration: self.step_duration,
            phase_start: self.phasing.start,
            phase_end: self.phasing.end,
            tau_margin: self.phasing.tau_margin,
            kp: DVector::from_vec(self.gains.kp),
            kd: DVector::from_vec(self.gains.kd),
            weights: (self.weights.torque, self.weights.saltation),
            initial_state: state(self.states.initial)?,
            pre_impact_state: state(self.states.pre_impact)?,
            metadata: self.metadata,
        };
        gait.validate()?;
        Ok(gait)
    }
}
