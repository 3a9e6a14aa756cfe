//! Periodic gait synthesis.
//!
//! One step of the closed-loop walker is transcribed with compressed
//! Hermite–Simpson collocation: node states, node and midpoint torques, the
//! step duration and the Bézier coefficients are all unknowns. Equalities
//! enforce the collocation defects, zero output error at every node, impact
//! periodicity and the footstrike. The cost mixes torque effort with the
//! squared induced norm of the extended saltation matrix at impact:
//!
//! ```text
//! J = w1 · Σ_k (‖u_k‖² + 4‖u_k+½‖² + ‖u_k+1‖²) / 6  +  w2 · σ_max(Se)²
//! ```
//!
//! With `w1 = 0` a small effort weight ([`NlpOptions::effort_floor`]) stands
//! in so the torques stay determined.

pub mod nlp;
mod transcription;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use nlp::{SolveStatus, SolverOptions, SolverResult};
pub use transcription::{GaitNlp, Layout};

use crate::error::{Error, Result};
use crate::rigid_body::{RobotModel, State};
use crate::virtual_constraints::{Gait, DEFAULT_KD, DEFAULT_KP, DEFAULT_TAU_MARGIN};

/// Problem setup for [`synthesize`]. Geometric defaults scale with the leg
/// length; see [`NlpOptions::for_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlpOptions {
    /// Collocation intervals.
    pub intervals: usize,
    /// Bézier degree of every output.
    pub degree: usize,
    /// `(w1, w2)`: torque effort and saltation weights.
    pub weights: (f64, f64),
    /// Step duration bounds (s).
    pub duration: (f64, f64),
    /// Step duration of the initial guess (s).
    pub nominal_duration: f64,
    /// Bounds on the swing-foot position at impact (m).
    pub step_length: (f64, f64),
    /// Step length of the initial guess (m).
    pub nominal_step: f64,
    /// Bounds on step length over step duration (m/s).
    pub speed: (f64, f64),
    /// Minimum swing-foot height inside the clearance window (m).
    pub clearance: f64,
    /// Fraction of the step, as `[start, end]`, whose nodes keep the clearance.
    pub clearance_window: (f64, f64),
    /// Minimum downward swing-foot speed at impact (m/s).
    pub impact_velocity: f64,
    /// Lower bound on the phase rate `τ̇` at every node (1/s).
    pub min_phase_rate: f64,
    /// Bound on every joint velocity (rad/s).
    pub velocity_limit: f64,
    /// Fraction of each actuator limit the nominal torques may use; the rest
    /// is left to the output feedback.
    pub torque_headroom: f64,
    /// Effort weight, relative to `w2`, used in place of `w1 = 0`. Without it
    /// the torques are free and the optimum is not unique.
    pub effort_floor: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_margin: f64,
    pub solver: SolverOptions,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            intervals: 20,
            degree: 5,
            weights: (1.0, 0.0),
            duration: (0.3, 1.2),
            nominal_duration: 0.7,
            step_length: (0.2, 0.8),
            nominal_step: 0.4,
            speed: (0.1, 2.0),
            clearance: 0.01,
            clearance_window: (0.55, 0.9),
            impact_velocity: 0.05,
            min_phase_rate: 0.2,
            velocity_limit: 10.0,
            torque_headroom: 0.8,
            effort_floor: 1e-4,
            kp: DEFAULT_KP,
            kd: DEFAULT_KD,
            tau_margin: DEFAULT_TAU_MARGIN,
            solver: SolverOptions::default(),
        }
    }
}

impl NlpOptions {
    /// Defaults sized to `model`. Rigid-legged models scuff the ground when
    /// the legs pass each other, so their clearance window starts later.
    pub fn for_model(model: &RobotModel) -> Self {
        let l = model.leg_length;
        let knees = model.n() > 2;
        Self {
            step_length: (0.2 * l, 0.8 * l),
            nominal_step: 0.4 * l,
            nominal_duration: if knees { 0.6 } else { 0.7 },
            clearance_window: if knees { (0.2, 0.9) } else { (0.55, 0.9) },
            ..Self::default()
        }
    }

    pub fn with_weights(mut self, w1: f64, w2: f64) -> Self {
        self.weights = (w1, w2);
        self
    }

    /// Weight the solver puts on the torque term.
    pub fn effort_weight(&self) -> f64 {
        match self.weights {
            (w1, w2) if w1 == 0.0 => self.effort_floor * w2,
            (w1, _) => w1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        let (w1, w2) = self.weights;
        if !(w1 >= 0.0 && w2 >= 0.0 && w1.is_finite() && w2.is_finite()) || w1 + w2 == 0.0 {
            return bad("weights must be finite, non-negative and not both zero");
        }
        if self.intervals < 2 {
            return bad("need at least two collocation intervals");
        }
        if self.degree < 2 {
            return bad("Bézier degree must be at least 2");
        }
        if !(0.0 < self.duration.0 && self.duration.0 <= self.duration.1) {
            return bad("duration bounds must satisfy 0 < min <= max");
        }
        if !(self.step_length.0 > 0.0 && self.step_length.0 <= self.step_length.1) {
            return bad("step length bounds must satisfy 0 < min <= max");
        }
        if !(self.speed.0 <= self.speed.1) {
            return bad("speed bounds must satisfy min <= max");
        }
        if !(self.effort_floor >= 0.0 && self.effort_floor.is_finite()) {
            return bad("effort floor must be finite and non-negative");
        }
        if !(0.0 < self.torque_headroom && self.torque_headroom <= 1.0) {
            return bad("torque headroom must lie in (0, 1]");
        }
        let (a, b) = self.clearance_window;
        if !(0.0 <= a && a <= b && b < 1.0) {
            return bad("clearance window must lie in [0, 1)");
        }
        Ok(())
    }

    /// Interior nodes whose swing-foot height is bounded below.
    pub fn clearance_nodes(&self) -> Vec<usize> {
        let n = self.intervals as f64;
        let first = (self.clearance_window.0 * n).ceil().max(1.0) as usize;
        let last = ((self.clearance_window.1 * n).floor() as usize).min(self.intervals - 1);
        (first..=last).collect()
    }
}

/// Pose with the swing foot on the ground `step` ahead of the stance foot:
/// minimum-norm Newton iterations from the upright configuration.
pub fn nominal_pose(model: &RobotModel, step: f64) -> Result<DVector<f64>> {
    let foot = model.swing_foot_name()?.to_string();
    let mut q = DVector::zeros(model.n());
    for _ in 0..50 {
        let p = model.frame_position(&foot, &q)?;
        let r = DVector::from_vec(vec![p.x - step, p.y]);
        if r.amax() < 1e-13 {
            return Ok(q);
        }
        let j = model.frame_jacobian(&foot, &q)?;
        let pinv = j.pseudo_inverse(1e-9).map_err(|e| Error::Singular { what: format!("foot Jacobian: {e}") })?;
        q -= pinv * r;
    }
    Err(Error::Singular { what: format!("no pose places the swing foot {step} m ahead") })
}

/// A starting point that satisfies the output constraints exactly: joint
/// angles interpolate linearly between a relabeled pair of nominal poses at
/// constant velocity, torques are zero and every Bézier row is the straight
/// line between its endpoint outputs.
pub fn initial_guess(nlp: &GaitNlp<'_>) -> Result<DVector<f64>> {
    let model = nlp.model;
    let l = &nlp.layout;
    let opts = &nlp.options;
    let q_end = nominal_pose(model, opts.nominal_step)?;
    let q_start = &model.relabel * &q_end;
    let t = opts.nominal_duration.clamp(opts.duration.0, opts.duration.1);
    let qd = (&q_end - &q_start) / t;
    let mut x = DVector::zeros(l.len());
    for i in 0..l.nodes() {
        let s = i as f64 / l.intervals as f64;
        l.set_state(&mut x, i, &State::new(&q_start + (&q_end - &q_start) * s, qd.clone()));
    }
    x[l.duration()] = t;
    let y0 = model.actuated_angles(&q_start);
    let y1 = model.actuated_angles(&q_end);
    let b = l.coeffs - 1;
    let alpha = DMatrix::from_fn(l.outputs, l.coeffs, |r, c| y0[r] + (y1[r] - y0[r]) * c as f64 / b as f64);
    for r in 0..l.outputs {
        for c in 0..l.coeffs {
            x[l.alpha() + r * l.coeffs + c] = alpha[(r, c)];
        }
    }
    Ok(x)
}

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

/// Summary of one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: String,
    pub model: String,
    pub status: SolveStatus,
    pub message: String,
    pub weights: (f64, f64),
    pub iterations: usize,
    pub outer_iterations: usize,
    pub cost: f64,
    /// Unweighted torque effort.
    pub torque_cost: f64,
    /// Unweighted `σ_max(Se)²`.
    pub saltation_cost: f64,
    pub sigma_max: f64,
    pub step_duration: f64,
    pub step_length: f64,
    pub max_equality: f64,
    pub max_inequality: f64,
    pub stationarity: f64,
    /// Left out of the TOML so repeated solves write identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("solve report serializes")
    }
}

/// A synthesized gait with its report and the raw solver output.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub gait: Gait,
    pub report: SolveReport,
    pub solution: SolverResult,
}

/// Solves the gait NLP from `warm_start`, or from [`initial_guess`].
///
/// The initial guess strikes the ground tangentially, where the saltation
/// term is undefined, so a cold start with `w2 > 0` first solves the
/// torque-only problem and continues from there.
pub fn synthesize(model: &RobotModel, options: &NlpOptions, warm_start: Option<&DVector<f64>>) -> Result<Synthesis> {
    let started = Instant::now();
    let nlp = GaitNlp::new(model, options.clone())?;
    let x0 = match warm_start {
        Some(x) => {
            crate::error::check_dim("warm start", nlp.layout.len(), x.len())?;
            x.clone()
        }
        None if options.weights.1 > 0.0 => synthesize(model, &options.clone().with_weights(1.0, 0.0), None)?.solution.x,
        None => initial_guess(&nlp)?,
    };
    let solution = nlp::solve(&nlp, &x0, &options.solver)?;
    let x = &solution.x;
    let (torque_cost, saltation_cost) = nlp.cost_terms(x)?;
    let step_length = model.swing_foot(&nlp.layout.state_at(x, nlp.layout.intervals))?.forward;
    let report = SolveReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        model: model.name.clone(),
        status: solution.status,
        message: solution.message.clone(),
        weights: options.weights,
        iterations: solution.iterations,
        outer_iterations: solution.outer_iterations,
        cost: solution.cost,
        torque_cost,
        saltation_cost,
        sigma_max: saltation_cost.sqrt(),
        step_duration: x[nlp.layout.duration()],
        step_length,
        max_equality: solution.max_equality,
        max_inequality: solution.max_inequality,
        stationarity: solution.stationarity,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let mut gait = nlp.gait(x);
    gait.set_meta("solver_status", report.status.as_str());
    gait.set_meta("intervals", options.intervals.to_string());
    gait.set_meta("cost", format!("{:.12e}", report.cost));
    gait.set_meta("sigma_max", format!("{:.12e}", report.sigma_max));
    gait.set_meta("torque_cost", format!("{:.12e}", report.torque_cost));
    Ok(Synthesis { gait, report, solution })
}

/// Weights that make both cost terms equal at `x`: `(w1, w1·U/σ²)`, with
/// `w1` taken from `nlp` (or 1 when it is zero).
pub fn weight_scaling_hint(nlp: &GaitNlp<'_>, x: &DVector<f64>) -> Result<(f64, f64)> {
    let (u, s) = nlp.cost_terms(x)?;
    if !(u > 0.0) {
        return Err(Error::Config("torque effort is zero at this point; no weight balances it".into()));
    }
    let w1 = if nlp.options.weights.0 > 0.0 { nlp.options.weights.0 } else { 1.0 };
    Ok((w1, w1 * u / s))
}

/// The three standard weight settings, each warm-started from the previous
/// one: torque only, balanced, and saltation only (at the balancing `w2`).
pub fn weight_sweep(model: &RobotModel, base: &NlpOptions) -> Result<Vec<Synthesis>> {
    let torque_only = synthesize(model, &base.clone().with_weights(1.0, 0.0), None)?;
    let nlp = GaitNlp::new(model, base.clone().with_weights(1.0, 0.0))?;
    let (_, k) = weight_scaling_hint(&nlp, &torque_only.solution.x)?;
    let balanced = synthesize(model, &base.clone().with_weights(1.0, k), Some(&torque_only.solution.x))?;
    let saltation_only = synthesize(model, &base.clone().with_weights(0.0, k), Some(&balanced.solution.x))?;
    Ok(vec![torque_only, balanced, saltation_only])
}

#[cfg(test)]
mod tests;
