use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::symmetric_eigen;
use crate::rigid_body::{RobotModel, State};

/// Outcome of one impact.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactResult {
    /// Post-impact state after relabeling, in the model's own coordinates.
    pub x_plus: State,
    /// Contact impulse `δF` (N·s), one entry per constrained axis.
    pub impulse: DVector<f64>,
    pub pre_state: State,
    /// Post-impact velocity before relabeling, in floating-base coordinates.
    pub floating_velocity: DVector<f64>,
}

/// Plastic (or restituted) impact at the swing foot followed by relabeling.
///
/// Pinned models are lifted to a floating base placed at the stance foot, the
/// impact is solved there and the result is projected back onto the pinned
/// coordinates of the new stance leg.
#[derive(Debug, Clone)]
pub struct ImpactMap {
    model: RobotModel,
    floating: Option<RobotModel>,
    contact: String,
}

impl ImpactMap {
    pub fn new(model: &RobotModel) -> Result<Self> {
        let floating = if model.is_pinned() { Some(model.floating()?) } else { None };
        let contact = model.swing_foot_name()?.to_string();
        Ok(Self { model: model.clone(), floating, contact })
    }

    /// The model the impact is solved in.
    pub fn impact_model(&self) -> &RobotModel {
        self.floating.as_ref().unwrap_or(&self.model)
    }

    /// Lifts a state of the model to the impact model (base at rest at the origin).
    pub fn lift(&self, x: &State) -> State {
        if self.floating.is_none() {
            return x.clone();
        }
        let n = self.model.n();
        let pad = |v: &DVector<f64>| DVector::from_fn(n + 2, |i, _| if i < n { v[i] } else { 0.0 });
        State::new(pad(&x.q), pad(&x.qd))
    }

    pub fn apply(&self, x_minus: &State) -> Result<ImpactResult> {
        check_dim("pre-impact q", self.model.n(), x_minus.q.len())?;
        check_dim("pre-impact qd", self.model.n(), x_minus.qd.len())?;
        check_finite("pre-impact state", x_minus.q.as_slice())?;
        check_finite("pre-impact state", x_minus.qd.as_slice())?;
        let fm = self.impact_model();
        let xe = self.lift(x_minus);
        let d = fm.mass_matrix(&xe.q);
        let j = fm.constraint_jacobian(&xe.q, &self.contact)?;
        let chol = d.cholesky().ok_or_else(|| Error::Singular { what: "mass matrix at impact".into() })?;
        let dinv_jt = chol.solve(&j.transpose());
        let lambda = &j * &dinv_jt;
        check_rank(&lambda)?;
        let jqd = &j * &xe.qd;
        let impulse = -lambda
            .lu()
            .solve(&jqd)
            .ok_or_else(|| Error::Singular { what: "impact constraint matrix".into() })?
            * (1.0 + fm.restitution);
        let qd_plus = &xe.qd + &dinv_jt * &impulse;

        let n = self.model.n();
        let r = &self.model.relabel;
        let x_plus = State::new(r * &x_minus.q, r * qd_plus.rows(0, n));
        Ok(ImpactResult { x_plus, impulse, pre_state: x_minus.clone(), floating_velocity: qd_plus })
    }
}

pub(super) fn check_rank(lambda: &DMatrix<f64>) -> Result<()> {
    let (eig, _) = symmetric_eigen(lambda);
    let max = eig.amax();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular { what: format!("rank-deficient J D⁻¹ Jᵀ (eigenvalues {:?})", eig.as_slice()) });
    }
    Ok(())
}

/// Applies the impact map of `model` at `x_minus` without checking the guard.
pub fn reset_map(model: &RobotModel, x_minus: &State) -> Result<ImpactResult> {
    ImpactMap::new(model)?.apply(x_minus)
}
