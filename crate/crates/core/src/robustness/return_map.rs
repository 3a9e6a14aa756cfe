use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_sim::{integrate_until_event, EventOptions, HybridSystem, SegmentEnd, Walker, DEFAULT_DT};
use crate::linalg::{eigenvalue_magnitudes, orthonormal_complement};
use crate::rigid_body::RobotModel;
use crate::virtual_constraints::Gait;

/// Central-difference step for the return-map Jacobian.
pub const RETURN_MAP_STEP: f64 = 1e-5;

/// Linearized step-to-step map on the guard section.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMap {
    /// `2n − 1` square Jacobian in section coordinates.
    pub jacobian: DMatrix<f64>,
    /// Section basis, one column per coordinate.
    pub basis: DMatrix<f64>,
    pub spectrum: Spectrum,
}

/// Eigenvalue magnitudes in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub spectral_radius: f64,
}

/// One full step: reset at the pre-impact state `x`, then flow to the next
/// guard crossing (at most `max_time` later).
pub fn step_map<S: HybridSystem + ?Sized>(sys: &S, x: &DVector<f64>, max_time: f64, dt: f64) -> Result<DVector<f64>> {
    let post = sys.reset(x)?;
    match integrate_until_event(sys, &post, 0.0, &EventOptions { dt, max_time }, |_, _| Ok(None))? {
        SegmentEnd::Event { x, .. } => Ok(x),
        _ => Err(Error::NonPeriodic(max_time)),
    }
}

/// Return-map Jacobian at the pre-impact state `x_star` of a periodic orbit.
/// Section coordinates span the orthonormal complement of `∇h(x*)`, so the
/// neutral multiplier along the flow never appears.
pub fn return_map<S: HybridSystem + ?Sized>(sys: &S, x_star: &DVector<f64>, max_time: f64, dt: f64) -> Result<ReturnMap> {
    let basis = orthonormal_complement(&sys.guard_gradient(x_star)?);
    let mut cols = Vec::with_capacity(basis.ncols());
    for j in 0..basis.ncols() {
        let e = basis.column(j);
        let plus = step_map(sys, &(x_star + e * RETURN_MAP_STEP), max_time, dt)?;
        let minus = step_map(sys, &(x_star - e * RETURN_MAP_STEP), max_time, dt)?;
        cols.push(basis.transpose() * (plus - minus) / (2.0 * RETURN_MAP_STEP));
    }
    let jacobian = DMatrix::from_columns(&cols);
    let magnitudes = eigenvalue_magnitudes(&jacobian);
    let spectral_radius = magnitudes.first().copied().unwrap_or(0.0);
    Ok(ReturnMap { jacobian, basis, spectrum: Spectrum { magnitudes, spectral_radius } })
}

/// Return-map spectrum of the closed-loop gait at its designed pre-impact
/// state. The orbit must come back to the guard within two step durations.
pub fn poincare_spectrum(model: &RobotModel, gait: &Gait) -> Result<ReturnMap> {
    let walker = Walker::closed_loop(model, gait)?;
    let x = gait
        .pre_impact_state
        .as_ref()
        .ok_or_else(|| Error::Gait("gait has no pre-impact state to linearize at".into()))?;
    return_map(&walker, &x.to_vector(), 2.0 * gait.step_duration, DEFAULT_DT)
}
