use nalgebra::DVector;

use super::nlp::Problem;
use super::*;
use crate::hybrid_sim::{simulate_gait, TerrainSpec};
use crate::rigid_body::preset;
use crate::saltation::gait_saltation;
use crate::virtual_constraints::outputs;

fn compass() -> RobotModel {
    preset("compass").unwrap()
}

/// The initial guess with the stance leg sped up at impact so the swing
/// foot strikes transversally.
fn transversal_guess(nlp: &GaitNlp<'_>) -> DVector<f64> {
    let mut x = initial_guess(nlp).unwrap();
    let l = nlp.layout;
    x[l.state(l.intervals) + l.n] += 0.5;
    x
}

#[test]
fn constraint_counts_follow_the_transcription() {
    for name in ["compass", "five_link"] {
        let m = preset(name).unwrap();
        let opts = NlpOptions::for_model(&m);
        let nlp = GaitNlp::new(&m, opts.clone()).unwrap();
        let (n, o, big_n) = (m.n(), m.m(), opts.intervals);
        assert_eq!(nlp.num_equalities(), 2 * n * big_n + 2 * o * (big_n + 1) + 2 * n + 1, "{name}");
        let x = initial_guess(&nlp).unwrap();
        assert_eq!(nlp.equalities(&x).unwrap().len(), nlp.num_equalities());
        assert_eq!(nlp.inequalities(&x).unwrap().len(), nlp.num_inequalities());
        assert_eq!(x.len(), nlp.layout.len());
    }
}

#[test]
fn initial_guess_satisfies_outputs_and_guard() {
    let m = compass();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    let x = initial_guess(&nlp).unwrap();
    let l = nlp.layout;
    let eq = nlp.equalities(&x).unwrap();
    let outputs_start = 2 * l.n * l.intervals;
    let outputs_len = 2 * l.outputs * l.nodes();
    assert!(eq.rows(outputs_start, outputs_len).amax() < 1e-12);
    assert!(eq[eq.len() - 1].abs() < 1e-12);
    let q_end = l.state_at(&x, l.intervals).q;
    assert!((q_end[0] - 0.2f64.asin()).abs() < 1e-12 && (q_end[1] + 0.2f64.asin()).abs() < 1e-12);
}

#[test]
fn output_constraints_agree_with_the_controller() {
    let m = compass();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    let mut x = initial_guess(&nlp).unwrap();
    let l = nlp.layout;
    for (k, v) in x.rows_mut(l.alpha(), l.coeffs).iter_mut().enumerate() {
        *v += 0.05 * (k as f64).sin();
    }
    let gait = nlp.gait(&x);
    let eq = nlp.equalities(&x).unwrap();
    let start = 2 * l.n * l.intervals;
    for i in 0..l.nodes() {
        let y = outputs(&m, &l.state_at(&x, i), &gait).unwrap();
        let r = eq.rows(start + 2 * i, 2);
        assert!((r[0] - y.y[0]).abs() < 1e-12 && (r[1] - y.yd[0]).abs() < 1e-12, "node {i}");
    }
}

#[test]
fn decision_vector_round_trips_through_the_layout() {
    let m = preset("five_link").unwrap();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    let l = nlp.layout;
    let x = DVector::from_fn(l.len(), |i, _| i as f64 * 0.001);
    let mut y = DVector::zeros(l.len());
    for i in 0..l.nodes() {
        l.set_state(&mut y, i, &l.state_at(&x, i));
        y.rows_mut(l.torque(i), l.m).copy_from(&l.torque_at(&x, i));
    }
    for k in 0..l.intervals {
        y.rows_mut(l.midpoint_torque(k), l.m).copy_from(&l.midpoint_torque_at(&x, k));
    }
    y[l.duration()] = x[l.duration()];
    let alpha = l.alpha_at(&x);
    for r in 0..l.outputs {
        for c in 0..l.coeffs {
            y[l.alpha() + r * l.coeffs + c] = alpha[(r, c)];
        }
    }
    assert_eq!(x, y);
}

#[test]
fn torque_only_cost_never_touches_the_saltation_term() {
    let m = compass();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    // the guess strikes tangentially, where the saltation term is an error
    let x = initial_guess(&nlp).unwrap();
    assert!(matches!(nlp.sigma_max(&x), Err(crate::Error::Grazing(_))));
    assert_eq!(nlp.cost(&x).unwrap(), nlp.torque_cost(&x));
    assert!(nlp.cost_gradient(&x).is_ok());
}

#[test]
fn saltation_only_cost_is_the_squared_induced_norm() {
    let m = compass();
    let opts = NlpOptions { effort_floor: 0.0, ..NlpOptions::for_model(&m).with_weights(0.0, 1.0) };
    let nlp = GaitNlp::new(&m, opts).unwrap();
    let x = transversal_guess(&nlp);
    let gait = nlp.gait(&x);
    let b = gait_saltation(&m, &gait, gait.pre_impact_state.as_ref().unwrap()).unwrap();
    assert_eq!(nlp.cost(&x).unwrap(), b.sigma_max * b.sigma_max);
}

#[test]
fn cost_gradient_matches_directional_differences() {
    let m = compass();
    for weights in [(1.0, 0.0), (0.3, 2.0)] {
        let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m).with_weights(weights.0, weights.1)).unwrap();
        let mut x = transversal_guess(&nlp);
        let l = nlp.layout;
        for i in 0..l.nodes() {
            x[l.torque(i)] = 3.0 * (i as f64).cos();
        }
        for k in 0..l.intervals {
            x[l.midpoint_torque(k)] = 2.0 * (k as f64).sin();
        }
        let g = nlp.cost_gradient(&x).unwrap();
        for seed in 0..3 {
            let d = DVector::from_fn(l.len(), |i, _| ((i * 7 + seed * 13) as f64).sin());
            let h = 1e-4;
            let fd = (nlp.cost(&(&x + &d * h)).unwrap() - nlp.cost(&(&x - &d * h)).unwrap()) / (2.0 * h);
            let an = g.dot(&d);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "{weights:?}: {fd} vs {an}");
        }
    }
}

#[test]
fn equality_jacobian_matches_directional_differences() {
    let m = compass();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    let x = initial_guess(&nlp).unwrap();
    let j = nlp.equality_jacobian(&x).unwrap();
    let d = DVector::from_fn(x.len(), |i, _| ((i * 5) as f64).cos() * 0.1);
    let h = 1e-5;
    let fd = (nlp.equalities(&(&x + &d * h)).unwrap() - nlp.equalities(&(&x - &d * h)).unwrap()) / (2.0 * h);
    assert!((fd - j * d).amax() < 1e-6);
}

#[test]
fn weight_hint_equalizes_the_terms() {
    let m = compass();
    let nlp = GaitNlp::new(&m, NlpOptions::for_model(&m)).unwrap();
    let mut x = transversal_guess(&nlp);
    let l = nlp.layout;
    x[l.torque(3)] = 4.0;
    let (w1, w2) = weight_scaling_hint(&nlp, &x).unwrap();
    let (u, s) = nlp.cost_terms(&x).unwrap();
    assert!((w1 * u - w2 * s).abs() <= 1e-12 * w1 * u);
    let balanced = GaitNlp::new(&m, NlpOptions::for_model(&m).with_weights(w1, w2)).unwrap();
    let again = weight_scaling_hint(&balanced, &x).unwrap();
    assert!((again.0 - w1).abs() < 1e-12 && (again.1 - w2).abs() <= 1e-12 * w2);
}

#[test]
fn invalid_options_are_rejected() {
    let m = compass();
    assert!(GaitNlp::new(&m, NlpOptions::for_model(&m).with_weights(0.0, 0.0)).is_err());
    assert!(GaitNlp::new(&m, NlpOptions::for_model(&m).with_weights(-1.0, 0.0)).is_err());
    let bad = NlpOptions { duration: (1.0, 0.5), ..NlpOptions::for_model(&m) };
    assert!(GaitNlp::new(&m, bad).is_err());
}

#[test]
fn compass_torque_optimal_gait_is_periodic_in_simulation() {
    let m = compass();
    let syn = synthesize(&m, &NlpOptions::for_model(&m), None).unwrap();
    eprintln!("{}", syn.report.to_toml());
    assert_eq!(syn.report.status, SolveStatus::Converged, "{}", syn.report.message);
    let trace = simulate_gait(&m, &syn.gait, &TerrainSpec::flat(), 1).unwrap();
    assert_eq!(trace.steps(), 1, "{:?}: {:?}", trace.termination, trace.note);
    let x0 = syn.gait.initial_state.clone().unwrap().to_vector();
    let back = trace.events[0].impact.x_plus.to_vector();
    eprintln!("return error {:e}", (&back - &x0).amax());
    assert!((back - x0).amax() < 1e-3);
}
