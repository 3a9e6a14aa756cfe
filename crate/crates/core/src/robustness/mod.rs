//! Robustness experiments on synthesized gaits: walking over perturbed guard
//! surfaces, return-map spectra, first-order checks of the saltation matrix
//! and zero-dynamics phase portraits.
//!
//! Steps completed before failure (within a 20 s budget) is the quantitative
//! stand-in for a binary walk / fall outcome on hardware.

mod first_order;
mod portrait;
mod return_map;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use first_order::{first_order_validation, log_spaced, ConvergenceTable, DEFAULT_SEED};
pub use portrait::{band_path, phase_portrait, BandPoint, PhasePortrait, PortraitPoint, PORTRAIT_SCHEMA_VERSION};
pub use return_map::{poincare_spectrum, return_map, step_map, ReturnMap, Spectrum, RETURN_MAP_STEP};

use crate::error::Result;
use crate::hybrid_sim::{simulate_gait, TerrainSpec, Termination};
use crate::rigid_body::RobotModel;
use crate::saltation::gait_saltation;
use crate::virtual_constraints::Gait;

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

const METRIC_NOTE: &str = "steps completed within the 20 s budget stand in for a binary walk/fall outcome";

/// Flat ground, ±1° slope and ±2 cm steps.
pub fn default_conditions() -> Vec<TerrainSpec> {
    vec![TerrainSpec::flat(), TerrainSpec::slope(1.0), TerrainSpec::slope(-1.0), TerrainSpec::step(0.02), TerrainSpec::step(-0.02)]
}

/// Outcome of walking one terrain condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub terrain: TerrainSpec,
    pub steps_requested: usize,
    pub steps_completed: usize,
    /// Simulated time at the last recorded state (s).
    pub time_s: f64,
    /// `None` when the simulation itself raised an error.
    pub termination: Option<Termination>,
    pub note: String,
    /// Largest absolute actuator torque seen (N·m).
    pub peak_torque: f64,
    /// Mean of `‖u‖²` over the recorded samples.
    pub mean_effort: f64,
}

impl ConditionResult {
    pub fn survived(&self) -> bool {
        self.termination == Some(Termination::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub schema_version: String,
    pub gait_id: String,
    pub model: String,
    pub metric: String,
    pub conditions: Vec<ConditionResult>,
    /// `σ_max(Se)` at the designed impact; absent if it could not be computed.
    pub sigma_max: Option<f64>,
    pub poincare: Option<Spectrum>,
    /// Path of the phase-portrait CSV, when one was written.
    pub phase_portrait: Option<String>,
}

impl RobustnessReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("robustness report serializes")
    }

    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut s = format!("robustness report ({}), gait {} on {}\n", self.schema_version, self.gait_id, self.model);
        s += &format!("metric: {}\n", self.metric);
        if let Some(sigma) = self.sigma_max {
            s += &format!("sigma_max(Se) = {sigma:.6}\n");
        }
        if let Some(p) = &self.poincare {
            s += &format!("return-map spectral radius = {:.6}\n", p.spectral_radius);
        }
        s += &format!("{:<16} {:>6} {:>9} {:>14} {:>12} {:>12}\n", "condition", "steps", "time_s", "outcome", "peak_torque", "mean_effort");
        for c in &self.conditions {
            let outcome = c.termination.map(|t| t.as_str().to_string()).unwrap_or_else(|| "error".into());
            s += &format!(
                "{:<16} {:>3}/{:<2} {:>9.3} {:>14} {:>12.3} {:>12.3}\n",
                c.label, c.steps_completed, c.steps_requested, c.time_s, outcome, c.peak_torque, c.mean_effort
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# saltwalk robustness schema {} gait {} model {}", self.schema_version, self.gait_id, self.model)?;
        writeln!(f, "condition,slope_deg,step_height,steps_requested,steps_completed,time_s,termination,peak_torque,mean_effort")?;
        for c in &self.conditions {
            let outcome = c.termination.map(|t| t.as_str()).unwrap_or("error");
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                c.label, c.terrain.slope_deg, c.terrain.step_height, c.steps_requested, c.steps_completed, c.time_s, outcome, c.peak_torque, c.mean_effort
            )?;
        }
        Ok(())
    }
}

/// Identifier for reports: the gait's `id` metadata, or model and weights.
pub fn gait_id(gait: &Gait) -> String {
    gait.meta("id")
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}_w1={}_w2={}", gait.model, gait.weights.0, gait.weights.1))
}

/// Walks `n_steps` on every condition. Simulation errors are recorded in the
/// affected condition and the sweep moves on.
pub fn guard_sweep(model: &RobotModel, gait: &Gait, conditions: &[TerrainSpec], n_steps: usize) -> Result<RobustnessReport> {
    gait.check_model(model)?;
    let mut results = Vec::with_capacity(conditions.len());
    for terrain in conditions {
        let result = match simulate_gait(model, gait, terrain, n_steps) {
            Ok(trace) => {
                let efforts: Vec<f64> = trace.samples.iter().map(|s| s.u.norm_squared()).collect();
                ConditionResult {
                    label: terrain.label(),
                    terrain: terrain.clone(),
                    steps_requested: n_steps,
                    steps_completed: trace.steps(),
                    time_s: trace.samples.last().map_or(0.0, |s| s.t),
                    termination: Some(trace.termination),
                    note: trace.note.clone().unwrap_or_default(),
                    peak_torque: trace.samples.iter().map(|s| s.u.amax()).fold(0.0, f64::max),
                    mean_effort: if efforts.is_empty() { 0.0 } else { efforts.iter().sum::<f64>() / efforts.len() as f64 },
                }
            }
            Err(e) => ConditionResult {
                label: terrain.label(),
                terrain: terrain.clone(),
                steps_requested: n_steps,
                steps_completed: 0,
                time_s: 0.0,
                termination: None,
                note: e.to_string(),
                peak_torque: 0.0,
                mean_effort: 0.0,
            },
        };
        results.push(result);
    }
    let sigma_max = gait.pre_impact_state.as_ref().and_then(|x| gait_saltation(model, gait, x).ok()).map(|b| b.sigma_max);
    Ok(RobustnessReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        gait_id: gait_id(gait),
        model: model.name.clone(),
        metric: METRIC_NOTE.to_string(),
        conditions: results,
        sigma_max,
        poincare: None,
        phase_portrait: None,
    })
}
