//! Hand-built gaits shared by unit tests.

use nalgebra::{DMatrix, DVector};

use crate::rigid_body::State;
use crate::virtual_constraints::Gait;

/// Compass gait whose inter-leg angle runs from 0.4 to −0.4 rad, swinging the
/// leg forward early enough for the foot to clear the ground ahead of the
/// stance foot. Not periodic; good enough to exercise the controller and the
/// event logic.
pub(crate) fn compass_test_gait() -> Gait {
    let alpha = DMatrix::from_row_slice(1, 6, &[0.4, 0.0, -0.5, -0.6, -0.5, -0.4]);
    let mut g = Gait::new("compass", alpha, 0.7, -0.2, 0.2);
    g.initial_state = Some(State::new(DVector::from_vec(vec![-0.2, 0.2]), DVector::from_vec(vec![1.0, -4.0])));
    g.pre_impact_state = Some(State::new(DVector::from_vec(vec![0.2, -0.2]), DVector::from_vec(vec![0.8, 1.8])));
    g
}

/// Torque-optimal periodic compass gait, synthesized once per test binary.
pub(crate) fn compass_optimal_gait() -> &'static Gait {
    use std::sync::OnceLock;

    use crate::gait_opt::{synthesize, NlpOptions};
    use crate::rigid_body::preset;

    static GAIT: OnceLock<Gait> = OnceLock::new();
    GAIT.get_or_init(|| {
        let m = preset("compass").unwrap();
        synthesize(&m, &NlpOptions::for_model(&m), None).unwrap().gait
    })
}
