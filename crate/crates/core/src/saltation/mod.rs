//! Saltation matrices: first-order propagation of state and guard
//! perturbations through an impact.
//!
//! With `F⁻ = f(x⁻)`, `F⁺ = f(Δ(x⁻))`, `J_Δ = ∂Δ/∂x` and `J_h = ∇h`,
//!
//! ```text
//! S  = J_Δ + (F⁺ − J_Δ F⁻) J_hᵀ / (J_hᵀ F⁻)
//! Sg = (J_Δ F⁻ − F⁺) / (J_hᵀ F⁻)
//! Se = [ S  Sg ]
//!      [ 0   1 ]
//! ```
//!
//! so that `δx⁺ ≈ S δx⁻ + Sg δ_h` when the guard surface is raised by `δ_h`.
//! The induced 2-norm of `Se` is the robustness measure the optimizer shrinks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid_sim::{HybridSystem, Walker};
pub use crate::linalg::induced_norm;
use crate::rigid_body::{RobotModel, State};
use crate::virtual_constraints::Gait;

/// Below this `|J_hᵀ F⁻|` the impact is treated as grazing.
pub const TRANSVERSALITY_TOL: f64 = 1e-8;

/// Everything computed for one impact.
#[derive(Debug, Clone, PartialEq)]
pub struct SaltationBundle {
    pub s: DMatrix<f64>,
    pub sg: DVector<f64>,
    pub se: DMatrix<f64>,
    pub sigma_max: f64,
    pub j_reset: DMatrix<f64>,
    /// Transversality denominator `J_hᵀ F⁻`.
    pub denominator: f64,
    pub f_minus: DVector<f64>,
    pub f_plus: DVector<f64>,
    pub guard_gradient: DVector<f64>,
}

/// Central finite-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central finite-difference Jacobian of the reset map.
pub fn reset_jacobian<S: HybridSystem + ?Sized>(sys: &S, x_minus: &DVector<f64>) -> Result<DMatrix<f64>> {
    let steps: Vec<f64> = x_minus.iter().map(|x| fd_step(*x)).collect();
    crate::linalg::central_jacobian(x_minus, &steps, |x| {
        sys.reset(x).map_err(|e| match e {
            Error::Singular { what } => Error::Singular { what: format!("reset map near {:?}: {what}", x.as_slice()) },
            other => other,
        })
    })
}

pub fn saltation_matrix<S: HybridSystem + ?Sized>(sys: &S, x_minus: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(extended_saltation(sys, x_minus)?.s)
}

pub fn guard_saltation<S: HybridSystem + ?Sized>(sys: &S, x_minus: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(extended_saltation(sys, x_minus)?.sg)
}

pub fn extended_saltation<S: HybridSystem + ?Sized>(sys: &S, x_minus: &DVector<f64>) -> Result<SaltationBundle> {
    let j_reset = reset_jacobian(sys, x_minus)?;
    let f_minus = sys.flow(x_minus)?;
    let f_plus = sys.flow(&sys.reset(x_minus)?)?;
    let jh = sys.guard_gradient(x_minus)?;
    assemble(j_reset, f_minus, f_plus, jh)
}

/// Builds the bundle from its ingredients.
pub fn assemble(j_reset: DMatrix<f64>, f_minus: DVector<f64>, f_plus: DVector<f64>, jh: DVector<f64>) -> Result<SaltationBundle> {
    let denominator = jh.dot(&f_minus);
    if !(denominator.abs() >= TRANSVERSALITY_TOL) {
        return Err(Error::Grazing(denominator));
    }
    let jf = &j_reset * &f_minus;
    let s = &j_reset + (&f_plus - &jf) * jh.transpose() / denominator;
    let sg = (&jf - &f_plus) / denominator;
    let n = s.nrows();
    let mut se = DMatrix::zeros(n + 1, n + 1);
    se.view_mut((0, 0), (n, n)).copy_from(&s);
    se.view_mut((0, n), (n, 1)).copy_from(&sg);
    se[(n, n)] = 1.0;
    let sigma_max = induced_norm(&se);
    Ok(SaltationBundle { s, sg, se, sigma_max, j_reset, denominator, f_minus, f_plus, guard_gradient: jh })
}

/// Saltation of the closed loop `model` + `gait` at a pre-impact state on flat ground.
pub fn gait_saltation(model: &RobotModel, gait: &Gait, x_minus: &State) -> Result<SaltationBundle> {
    extended_saltation(&Walker::closed_loop(model, gait)?, &x_minus.to_vector())
}

/// Saltation of the unactuated model (the bouncing ball, for instance).
pub fn passive_saltation(model: &RobotModel, x_minus: &State) -> Result<SaltationBundle> {
    extended_saltation(&Walker::passive(model)?, &x_minus.to_vector())
}
