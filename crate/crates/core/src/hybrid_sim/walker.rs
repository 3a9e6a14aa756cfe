use std::borrow::Cow;

use nalgebra::DVector;

use super::{integrate_until_event, EventOptions, HybridSystem, ImpactMap, Sample, SegmentEnd, SimTrace, TerrainSpec, Termination};
use crate::error::{ErrorCategory, Result};
use crate::hybrid_sim::trace::Event;
use crate::rigid_body::{RobotModel, State};
use crate::virtual_constraints::{ClosedLoop, ControlValue, Gait};

/// Ground surface seen by the swing foot, relative to the stance foot:
/// `z = offset + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GuardSurface {
    pub offset: f64,
    /// Tangent of the incline.
    pub slope: f64,
}

impl GuardSurface {
    pub fn height_at(&self, x: f64) -> f64 {
        self.offset + self.slope * x
    }
}

/// `h(x) = p_sw^z − terrain(p_sw^x)` for the first step of `terrain`.
pub fn guard_value(model: &RobotModel, x: &State, terrain: &TerrainSpec) -> Result<f64> {
    let foot = model.swing_foot(x)?;
    Ok(foot.height - terrain.guard_surface(0).height_at(foot.forward))
}

/// A robot model as a hybrid system, closed-loop under a gait or passive.
#[derive(Debug, Clone)]
pub struct Walker<'a> {
    pub model: &'a RobotModel,
    control: Option<ClosedLoop<'a>>,
    impact: Cow<'a, ImpactMap>,
    pub surface: GuardSurface,
}

impl<'a> Walker<'a> {
    pub fn closed_loop(model: &'a RobotModel, gait: &'a Gait) -> Result<Self> {
        let impact = Cow::Owned(ImpactMap::new(model)?);
        Ok(Self { model, control: Some(ClosedLoop::new(model, gait)?), impact, surface: GuardSurface::default() })
    }

    /// Closed loop reusing an impact map built for `model`.
    pub fn with_impact(model: &'a RobotModel, gait: &'a Gait, impact: &'a ImpactMap) -> Result<Self> {
        Ok(Self { model, control: Some(ClosedLoop::new(model, gait)?), impact: Cow::Borrowed(impact), surface: GuardSurface::default() })
    }

    /// Zero torque.
    pub fn passive(model: &'a RobotModel) -> Result<Self> {
        Ok(Self { model, control: None, impact: Cow::Owned(ImpactMap::new(model)?), surface: GuardSurface::default() })
    }

    pub fn with_surface(mut self, surface: GuardSurface) -> Self {
        self.surface = surface;
        self
    }

    pub fn controller(&self) -> Option<&ClosedLoop<'a>> {
        self.control.as_ref()
    }

    pub fn impact_map(&self) -> &ImpactMap {
        &self.impact
    }

    pub fn control(&self, x: &State) -> Result<ControlValue> {
        match &self.control {
            Some(c) => c.control(x),
            None => Ok(ControlValue { u: DVector::zeros(self.model.m()), saturated: false }),
        }
    }

    fn state(&self, x: &DVector<f64>) -> Result<State> {
        crate::error::check_dim("state vector", 2 * self.model.n(), x.len())?;
        Ok(State::from_vector(x))
    }
}

impl HybridSystem for Walker<'_> {
    fn dim(&self) -> usize {
        2 * self.model.n()
    }

    fn flow(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.state(x)?;
        match &self.control {
            Some(c) => c.field(&s),
            None => {
                let qdd = self.model.forward_dynamics(&s, &DVector::zeros(self.model.m()))?;
                let n = self.model.n();
                Ok(DVector::from_fn(2 * n, |i, _| if i < n { s.qd[i] } else { qdd[i - n] }))
            }
        }
    }

    fn guard(&self, x: &DVector<f64>) -> Result<f64> {
        let foot = self.model.swing_foot(&self.state(x)?)?;
        Ok(foot.height - self.surface.height_at(foot.forward))
    }

    fn guard_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.state(x)?;
        let jac = self.model.frame_jacobian(self.model.swing_foot_name()?, &s.q)?;
        let n = self.model.n();
        Ok(DVector::from_fn(2 * n, |i, _| if i < n { jac[(1, i)] - self.surface.slope * jac[(0, i)] } else { 0.0 }))
    }

    fn guard_rate(&self, x: &DVector<f64>) -> Result<f64> {
        let foot = self.model.swing_foot(&self.state(x)?)?;
        Ok(foot.vertical_velocity - self.surface.slope * foot.forward_velocity)
    }

    fn guard_enabled(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.model.swing_foot(&self.state(x)?)?.forward >= self.model.min_step)
    }

    fn reset(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.impact.apply(&self.state(x)?)?.x_plus.to_vector())
    }
}

/// Knobs for [`simulate_gait_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    /// Keep every k-th integrator step in the trace.
    pub record_every: usize,
    /// Per-step time limit as a multiple of the gait's step duration.
    pub step_time_factor: f64,
    /// Total simulated time cap (s).
    pub max_time: f64,
    /// Fall when hip height drops below this fraction of the leg length.
    pub fall_fraction: f64,
    /// Continuous saturation longer than this (s) is a blow-up.
    pub saturation_window: f64,
    /// Start here instead of the gait's designed initial state.
    pub start: Option<State>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: super::DEFAULT_DT,
            record_every: 10,
            step_time_factor: 3.0,
            max_time: 20.0,
            fall_fraction: 0.4,
            saturation_window: 0.1,
            start: None,
        }
    }
}

/// Walks `n_steps` steps of `gait` over `terrain` with default options.
pub fn simulate_gait(model: &RobotModel, gait: &Gait, terrain: &TerrainSpec, n_steps: usize) -> Result<SimTrace> {
    simulate_gait_with(model, gait, terrain, n_steps, &SimOptions::default())
}

pub fn simulate_gait_with(model: &RobotModel, gait: &Gait, terrain: &TerrainSpec, n_steps: usize, opts: &SimOptions) -> Result<SimTrace> {
    terrain.validate()?;
    let mut walker = Walker::closed_loop(model, gait)?;
    let mut trace = SimTrace::new(&model.name);
    if n_steps == 0 {
        return Ok(trace);
    }
    let mut x = match (&opts.start, &gait.initial_state) {
        (Some(s), _) | (None, Some(s)) => s.clone(),
        (None, None) => return Err(crate::Error::Gait("gait has no initial state to start from".into())),
    };
    let fall_height = opts.fall_fraction * model.leg_length;
    let step_limit = opts.step_time_factor * gait.step_duration;
    let mut t = 0.0;

    for k in 0..n_steps {
        walker.surface = terrain.guard_surface(k);
        let budget = step_limit.min(opts.max_time - t);
        if budget <= 0.0 {
            trace.termination = Termination::GuardMissed;
            trace.note = Some(format!("total time cap {} s reached", opts.max_time));
            break;
        }
        let eopts = EventOptions { dt: opts.dt, max_time: budget };
        let mut saturated_since: Option<f64> = None;
        let mut count = 0usize;
        let samples = &mut trace.samples;
        let w = &walker;
        let outcome = integrate_until_event(w, &x.to_vector(), t, &eopts, |ts, xv| {
            let s = State::from_vector(xv);
            let c = w.control(&s)?;
            if c.saturated {
                let since = *saturated_since.get_or_insert(ts);
                if ts - since > opts.saturation_window {
                    return Ok(Some((Termination::TorqueBlowup, format!("torque saturated for more than {} s", opts.saturation_window))));
                }
            } else {
                saturated_since = None;
            }
            if model.hip.is_some() && model.hip_position(&s.q)?.y < fall_height {
                return Ok(Some((Termination::Fell, format!("hip below {fall_height} m"))));
            }
            count += 1;
            if count % opts.record_every.max(1) == 0 {
                samples.push(Sample { t: ts, guard: w.guard(xv)?, x: s, u: c.u, saturated: c.saturated });
            }
            Ok(None)
        });
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) if e.category() == ErrorCategory::Numerical => {
                trace.termination = Termination::TorqueBlowup;
                trace.note = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        match outcome {
            SegmentEnd::Event { t: te, x: xe, guard, guard_rate } => {
                let pre = State::from_vector(&xe);
                if trace.samples.last().is_none_or(|s| s.t < te) {
                    let c = walker.control(&pre)?;
                    trace.samples.push(Sample { t: te, x: pre.clone(), u: c.u, guard, saturated: c.saturated });
                }
                let impact = walker.impact_map().apply(&pre)?;
                x = impact.x_plus.clone();
                trace.events.push(Event { t: te, step: k, guard, guard_rate, impact });
                t = te;
            }
            SegmentEnd::Timeout { t: te, .. } => {
                trace.termination = Termination::GuardMissed;
                trace.note = Some(format!("no impact within {budget:.3} s of step {k} (t = {te:.4})"));
                break;
            }
            SegmentEnd::Stopped { reason, note, t: te, .. } => {
                trace.termination = reason;
                trace.note = Some(format!("step {k} at t = {te:.4}: {note}"));
                break;
            }
        }
    }
    Ok(trace)
}
