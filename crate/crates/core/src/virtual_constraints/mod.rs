//! Bézier virtual constraints, state-based phasing and the feedback
//! linearizing controller that closes the loop `ẋ = f(x) + g(x)u*(x)`.

mod gait;

pub use gait::{Gait, GaitFile, GAIT_SCHEMA_VERSION};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::rigid_body::{RobotModel, State};

/// Default proportional gain on every output.
pub const DEFAULT_KP: f64 = 100.0;
/// Default derivative gain on every output.
pub const DEFAULT_KD: f64 = 20.0;
/// Default width of the band outside `[0, 1]` in which desired outputs follow
/// the polynomial before being held constant.
pub const DEFAULT_TAU_MARGIN: f64 = 0.1;

/// A Bézier value with its first two derivatives in `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierPoint {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    /// `τ` was outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn bernstein_sum(coeffs: &[f64], tau: f64) -> f64 {
    let b = coeffs.len() - 1;
    coeffs
        .iter()
        .enumerate()
        .map(|(k, a)| a * binomial(b, k) * tau.powi(k as i32) * (1.0 - tau).powi((b - k) as i32))
        .sum()
}

fn differences(coeffs: &[f64]) -> Vec<f64> {
    coeffs.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Evaluates the polynomial at any `τ`, without clamping.
pub fn bezier_polynomial(coeffs: &[f64], tau: f64) -> BezierPoint {
    assert!(!coeffs.is_empty(), "Bézier polynomial needs at least one coefficient");
    let b = coeffs.len() - 1;
    let value = bernstein_sum(coeffs, tau);
    let d1 = if b >= 1 { b as f64 * bernstein_sum(&differences(coeffs), tau) } else { 0.0 };
    let d2 = if b >= 2 {
        (b * (b - 1)) as f64 * bernstein_sum(&differences(&differences(coeffs)), tau)
    } else {
        0.0
    };
    BezierPoint { value, d1, d2, clamped: false }
}

/// Evaluates a Bézier row on `[0, 1]`; `τ` outside that range is clamped and flagged.
pub fn bezier(coeffs: &[f64], tau: f64) -> BezierPoint {
    let clamped_tau = tau.clamp(0.0, 1.0);
    let mut p = bezier_polynomial(coeffs, clamped_tau);
    p.clamped = clamped_tau != tau;
    p
}

/// Phase of the gait and its rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub tau: f64,
    pub dtau: f64,
}

/// Output error `y = y^a(q) − y^d(τ)` and its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputValue {
    pub y: DVector<f64>,
    pub yd: DVector<f64>,
    /// Phase clamped to `[0, 1]`.
    pub tau: f64,
    pub dtau: f64,
    pub clamped: bool,
}

/// Torque selected by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlValue {
    pub u: DVector<f64>,
    /// At least one actuator hit its limit.
    pub saturated: bool,
}

/// `τ = (c·q − p⁻)/(p⁺ − p⁻)` for the linearized forward hip position `c·q`.
pub fn phasing(model: &RobotModel, x: &State, gait: &Gait) -> Result<Phase> {
    ClosedLoop::new(model, gait)?.phase(x)
}

pub fn outputs(model: &RobotModel, x: &State, gait: &Gait) -> Result<OutputValue> {
    ClosedLoop::new(model, gait)?.outputs(x)
}

pub fn closed_loop_field(model: &RobotModel, x: &State, gait: &Gait) -> Result<DVector<f64>> {
    ClosedLoop::new(model, gait)?.field(x)
}

struct Desired {
    value: DVector<f64>,
    d1: DVector<f64>,
    d2: DVector<f64>,
}

/// Model plus gait with the quantities the controller reuses precomputed.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub model: &'a RobotModel,
    pub gait: &'a Gait,
    /// Linearized hip position `c·q`.
    phase_coeffs: DVector<f64>,
    /// `∂τ/∂q`.
    phase_gradient: DVector<f64>,
    actuation: DMatrix<f64>,
    rows: Vec<Vec<f64>>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(model: &'a RobotModel, gait: &'a Gait) -> Result<Self> {
        gait.check_model(model)?;
        let span = gait.phase_end - gait.phase_start;
        let phase_coeffs = model.hip_phase_coeffs()?;
        let phase_gradient = &phase_coeffs / span;
        let rows = (0..gait.alpha.nrows()).map(|r| gait.alpha.row(r).iter().copied().collect()).collect();
        Ok(Self { model, gait, phase_coeffs, phase_gradient, actuation: model.actuation(), rows })
    }

    fn raw_tau(&self, q: &DVector<f64>) -> f64 {
        (self.phase_coeffs.dot(q) - self.gait.phase_start) / (self.gait.phase_end - self.gait.phase_start)
    }

    pub fn phase(&self, x: &State) -> Result<Phase> {
        check_dim("state", self.model.n(), x.dim())?;
        Ok(Phase { tau: self.raw_tau(&x.q), dtau: self.phase_gradient.dot(&x.qd) })
    }

    /// Desired outputs inside the margin band follow the polynomial; beyond it
    /// they are held at the band edge.
    fn desired(&self, tau: f64) -> Desired {
        let margin = self.gait.tau_margin;
        let t = tau.clamp(-margin, 1.0 + margin);
        let held = t != tau;
        let o = self.rows.len();
        let mut d = Desired { value: DVector::zeros(o), d1: DVector::zeros(o), d2: DVector::zeros(o) };
        for (i, row) in self.rows.iter().enumerate() {
            let p = bezier_polynomial(row, t);
            d.value[i] = p.value;
            if !held {
                d.d1[i] = p.d1;
                d.d2[i] = p.d2;
            }
        }
        d
    }

    /// `∂y/∂q` at a given desired-output slope.
    fn output_jacobian(&self, d1: &DVector<f64>) -> DMatrix<f64> {
        self.actuation.transpose() - d1 * self.phase_gradient.transpose()
    }

    pub fn outputs(&self, x: &State) -> Result<OutputValue> {
        let phase = self.phase(x)?;
        let des = self.desired(phase.tau);
        let jy = self.output_jacobian(&des.d1);
        let y = self.actuation.transpose() * &x.q - &des.value;
        let yd = jy * &x.qd;
        let clamped = !(0.0..=1.0).contains(&phase.tau);
        Ok(OutputValue { y, yd, tau: phase.tau.clamp(0.0, 1.0), dtau: phase.dtau, clamped })
    }

    /// Input–output linearizing torque with PD on the outputs, clipped to limits.
    pub fn control(&self, x: &State) -> Result<ControlValue> {
        let terms = self.model.dynamics_terms(x)?;
        let phase = self.phase(x)?;
        let des = self.desired(phase.tau);
        let jy = self.output_jacobian(&des.d1);
        let y = self.actuation.transpose() * &x.q - &des.value;
        let yd = &jy * &x.qd;
        let chol = terms.d.clone().cholesky().ok_or_else(|| Error::Singular { what: "mass matrix".into() })?;
        let dinv_b = chol.solve(&terms.b);
        let dinv_h = chol.solve(&terms.h);
        let decoupling = &jy * dinv_b;
        let kp = DMatrix::from_diagonal(&self.gait.kp);
        let kd = DMatrix::from_diagonal(&self.gait.kd);
        let rhs = -(kp * &y) - kd * &yd + &jy * dinv_h + &des.d2 * (phase.dtau * phase.dtau);
        let svd = decoupling.clone().svd(false, false);
        if !(svd.singular_values.min() > 1e-9) {
            return Err(Error::Singular {
                what: format!("decoupling matrix at q = {:?}, qd = {:?}", x.q.as_slice(), x.qd.as_slice()),
            });
        }
        let mut u = decoupling
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular { what: "decoupling matrix".into() })?;
        let mut saturated = false;
        for (k, a) in self.model.actuators.iter().enumerate() {
            if u[k].abs() > a.torque_limit {
                u[k] = u[k].clamp(-a.torque_limit, a.torque_limit);
                saturated = true;
            }
        }
        Ok(ControlValue { u, saturated })
    }

    /// `ẋ = f(x) + g(x)u*(x)` as a stacked `(q̇, q̈)`.
    pub fn field(&self, x: &State) -> Result<DVector<f64>> {
        let u = self.control(x)?.u;
        let qdd = self.model.forward_dynamics(x, &u)?;
        let n = self.model.n();
        Ok(DVector::from_fn(2 * n, |i, _| if i < n { x.qd[i] } else { qdd[i - n] }))
    }
}

#[cfg(test)]
mod tests;
