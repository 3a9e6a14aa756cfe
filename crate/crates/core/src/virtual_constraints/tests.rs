use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::rigid_body::preset;
use crate::test_fixtures::compass_test_gait;

fn fd_derivative(coeffs: &[f64], tau: f64, h: f64) -> (f64, f64) {
    let p = |t| bezier_polynomial(coeffs, t);
    let d1 = (p(tau + h).value - p(tau - h).value) / (2.0 * h);
    let d2 = (p(tau + h).d1 - p(tau - h).d1) / (2.0 * h);
    (d1, d2)
}

#[test]
fn constant_bezier() {
    let c = [0.7; 6];
    for tau in [0.0, 0.2, 0.55, 1.0] {
        let p = bezier(&c, tau);
        assert!((p.value - 0.7).abs() < 1e-14);
        assert!(p.d1.abs() < 1e-13 && p.d2.abs() < 1e-12);
    }
}

#[test]
fn endpoints_and_clamping() {
    let a = [0.3, -0.1, 0.8, 0.25, -0.6, 1.1];
    assert_eq!(bezier(&a, 0.0).value, 0.3);
    assert!((bezier(&a, 1.0).value - 1.1).abs() < 1e-15);
    let early = bezier(&a, -0.2);
    assert!(early.clamped && early.value == 0.3);
    let late = bezier(&a, 1.3);
    assert!(late.clamped && (late.value - 1.1).abs() < 1e-15);
    assert!(!bezier(&a, 0.5).clamped);
}

#[test]
fn derivative_matches_finite_differences() {
    let a = [0.12, -0.47, 0.93, 0.31, -0.88, 0.54];
    let p = bezier(&a, 0.37);
    let (d1, d2) = fd_derivative(&a, 0.37, 1e-5);
    assert!((p.d1 - d1).abs() < 1e-7, "{} vs {d1}", p.d1);
    assert!((p.d2 - d2).abs() < 1e-6, "{} vs {d2}", p.d2);
}

proptest! {
    #[test]
    fn endpoint_derivative_identities(a in proptest::collection::vec(-2.0f64..2.0, 4..9)) {
        let b = (a.len() - 1) as f64;
        let last = a.len() - 1;
        let start = bezier(&a, 0.0);
        let end = bezier(&a, 1.0);
        prop_assert_eq!(start.value, a[0]);
        prop_assert!((end.value - a[last]).abs() <= 1e-12);
        prop_assert!((start.d1 - b * (a[1] - a[0])).abs() <= 1e-12);
        prop_assert!((end.d1 - b * (a[last] - a[last - 1])).abs() <= 1e-12);
    }

    #[test]
    fn gait_file_round_trip_is_bit_exact(vals in proptest::collection::vec(-10.0f64..10.0, 6), t in 0.3f64..1.2) {
        let mut g = compass_test_gait();
        g.alpha = DMatrix::from_row_slice(1, 6, &vals);
        g.step_duration = t;
        let back = Gait::from_toml(&g.to_toml()).unwrap();
        prop_assert_eq!(back.to_toml(), g.to_toml());
        prop_assert_eq!(back, g);
    }
}

#[test]
fn phasing_normalization() {
    let model = preset("compass").unwrap();
    let g = compass_test_gait();
    let x0 = g.initial_state.clone().unwrap();
    let xn = g.pre_impact_state.clone().unwrap();
    assert!(phasing(&model, &x0, &g).unwrap().tau.abs() < 1e-12);
    assert!((phasing(&model, &xn, &g).unwrap().tau - 1.0).abs() < 1e-12);

    let mut bad = g.clone();
    bad.phase_end = bad.phase_start;
    assert!(matches!(bad.validate(), Err(Error::Gait(_))));
}

/// A compass state on the zero-dynamics surface with stance angle `ts` and rate `w`.
fn on_surface(g: &Gait, ts: f64, w: f64) -> State {
    let row: Vec<f64> = g.alpha.row(0).iter().copied().collect();
    let span = g.phase_end - g.phase_start;
    let tau = (ts - g.phase_start) / span;
    let p = bezier_polynomial(&row, tau);
    let tn = ts + p.value;
    let wn = w + p.d1 * w / span;
    State::new(DVector::from_vec(vec![ts, tn]), DVector::from_vec(vec![w, wn]))
}

#[test]
fn outputs_vanish_on_surface_and_grow_off_it() {
    let model = preset("compass").unwrap();
    let g = compass_test_gait();
    let x = on_surface(&g, 0.05, 0.9);
    let out = outputs(&model, &x, &g).unwrap();
    assert!(out.y.amax() < 1e-14 && out.yd.amax() < 1e-13);

    let dir = DVector::from_vec(vec![0.3, -0.7]);
    let mut prev = f64::INFINITY;
    for k in 1..8 {
        let s = 10f64.powi(-k);
        let xp = State::new(&x.q + &dir * s, x.qd.clone());
        let y = outputs(&model, &xp, &g).unwrap().y.norm();
        assert!(y > 0.0 && y < prev);
        prev = y;
    }
    assert!(prev < 1e-6);
}

#[test]
fn output_rate_matches_finite_difference_along_motion() {
    let model = preset("compass").unwrap();
    let g = compass_test_gait();
    let x = State::new(DVector::from_vec(vec![-0.05, 0.22]), DVector::from_vec(vec![0.8, -1.7]));
    let out = outputs(&model, &x, &g).unwrap();
    let h = 1e-6;
    let yp = outputs(&model, &State::new(&x.q + &x.qd * h, x.qd.clone()), &g).unwrap().y;
    let ym = outputs(&model, &State::new(&x.q - &x.qd * h, x.qd.clone()), &g).unwrap().y;
    assert!(((yp - ym) / (2.0 * h) - out.yd).amax() < 1e-6);
}

#[test]
fn on_orbit_torque_is_feedforward() {
    let model = preset("compass").unwrap();
    let g = compass_test_gait();
    let mut ff = g.clone();
    ff.kp.fill(0.0);
    ff.kd.fill(0.0);
    let x = on_surface(&g, -0.1, 1.1);
    let u = ClosedLoop::new(&model, &g).unwrap().control(&x).unwrap().u;
    let u_ff = ClosedLoop::new(&model, &ff).unwrap().control(&x).unwrap().u;
    assert!((u - u_ff).amax() < 1e-9);
}

#[test]
fn closed_loop_output_dynamics_are_linear() {
    // ÿ = −Kp y − Kd ẏ, so V = ½ẏ² + ½Kp y² has V̇ = −Kd ẏ² ≤ 0.
    let model = preset("compass").unwrap();
    let g = compass_test_gait();
    let cl = ClosedLoop::new(&model, &g).unwrap();
    let mut x = on_surface(&g, -0.1, 0.9);
    x.q[1] += 0.05;
    x.qd[1] -= 0.2;
    assert!(!cl.control(&x).unwrap().saturated);
    let f = cl.field(&x).unwrap();
    let h = 1e-6;
    let step = |s: f64| State::from_vector(&(x.to_vector() + &f * s));
    let ydd = (cl.outputs(&step(h)).unwrap().yd - cl.outputs(&step(-h)).unwrap().yd) / (2.0 * h);
    let out = cl.outputs(&x).unwrap();
    let expected = -(&out.y * DEFAULT_KP) - &out.yd * DEFAULT_KD;
    assert!((ydd - &expected).amax() < 1e-4, "{expected}");
    let vdot = out.yd.dot(&expected) + DEFAULT_KP * out.y.dot(&out.yd);
    assert!(vdot <= 0.0);
}

#[test]
fn torque_saturation_is_flagged() {
    let mut model = preset("compass").unwrap();
    model.actuators[0].torque_limit = 1e-3;
    let g = compass_test_gait();
    let x = State::new(DVector::from_vec(vec![-0.1, 0.5]), DVector::from_vec(vec![0.9, 0.0]));
    let c = ClosedLoop::new(&model, &g).unwrap().control(&x).unwrap();
    assert!(c.saturated);
    assert!((c.u[0].abs() - 1e-3).abs() < 1e-15);
}

#[test]
fn gait_model_mismatch() {
    let model = preset("five_link").unwrap();
    let g = compass_test_gait();
    assert!(matches!(ClosedLoop::new(&model, &g), Err(Error::Mismatch { .. })));
}
