//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL ...` line
//! before asserting, so a full run doubles as a scorecard.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saltwalk::gait_opt::nlp::Problem;
use saltwalk::gait_opt::{weight_sweep, GaitNlp, NlpOptions, SolveStatus, Synthesis};
use saltwalk::hybrid_sim::{integrate_flow, simulate_gait, AffineHybrid, ImpactMap, TerrainSpec, Walker, DEFAULT_DT};
use saltwalk::rigid_body::preset;
use saltwalk::robustness::{self, first_order_validation, log_spaced, return_map, DEFAULT_SEED};
use saltwalk::saltation::passive_saltation;
use saltwalk::{RobotModel, State};

fn report(id: u32, pass: bool, detail: impl AsRef<str>) -> bool {
    println!("criterion {id}: {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    pass
}

struct Sweep {
    runs: Vec<Synthesis>,
    elapsed: Duration,
}

fn sweep(name: &str) -> Sweep {
    let model = preset(name).unwrap();
    let started = Instant::now();
    let runs = weight_sweep(&model, &NlpOptions::for_model(&model)).unwrap();
    Sweep { runs, elapsed: started.elapsed() }
}

fn compass_sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| sweep("compass"))
}

fn five_link_sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| sweep("five_link"))
}

#[test]
fn criterion_1_bouncing_ball_saltation_oracle() {
    let started = Instant::now();
    let mut ball = preset("bouncing_ball").unwrap();
    let g = ball.gravity;
    let mut worst: f64 = 0.0;
    for e in [0.0, 0.5, 0.9] {
        ball.restitution = e;
        for v in [-0.5, -1.0, -3.0] {
            let b = passive_saltation(&ball, &State::new(DVector::from_element(1, 0.0), DVector::from_element(1, v))).unwrap();
            let s = [[-e, 0.0], [-(1.0 + e) * g / v, -e]];
            let sg = [1.0 + e, (1.0 + e) * g / v];
            for r in 0..2 {
                for c in 0..2 {
                    worst = worst.max((b.s[(r, c)] - s[r][c]).abs());
                }
                worst = worst.max((b.sg[r] - sg[r]).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = report(1, worst <= 1e-6 && secs < 1.0, format!("max deviation {worst:.2e} (tol 1e-6), {secs:.2} s (< 1 s)"));
    assert!(pass);
}

#[test]
fn criterion_2_first_order_convergence() {
    let started = Instant::now();
    let eps = log_spaced(1e-4, 1e-2, 5);
    let mut ball = preset("bouncing_ball").unwrap();
    ball.restitution = 0.7;
    let ball_table = first_order_validation(&Walker::passive(&ball).unwrap(), &DVector::from_vec(vec![0.0, -2.0]), &eps, 20, DEFAULT_SEED).unwrap();

    let ball_time = started.elapsed();
    let compass = preset("compass").unwrap();
    let gait = &compass_sweep().runs[1].gait;
    let timed = Instant::now();
    let walker = Walker::closed_loop(&compass, gait).unwrap();
    let x = gait.pre_impact_state.as_ref().unwrap().to_vector();
    let compass_table = first_order_validation(&walker, &x, &eps, 20, DEFAULT_SEED).unwrap();
    let secs = (ball_time + timed.elapsed()).as_secs_f64();

    let ok = |s: f64| (1.8..=2.2).contains(&s);
    let pass = report(
        2,
        ok(ball_table.slope) && ok(compass_table.slope) && secs < 30.0,
        format!("slopes ball {:.3}, compass {:.3} (want [1.8, 2.2]), {secs:.1} s excluding gait synthesis (< 30 s)", ball_table.slope, compass_table.slope),
    );
    assert!(pass);
}

fn random_state(m: &RobotModel, rng: &mut ChaCha8Rng) -> State {
    let n = m.n();
    State::new(DVector::from_fn(n, |_, _| rng.random_range(-0.6..0.6)), DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)))
}

#[test]
fn criterion_3_impact_map_properties() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let (mut residual, mut energy_gain, mut momentum): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, 0.0);
    for name in ["compass", "five_link"] {
        let m = preset(name).unwrap();
        let map = ImpactMap::new(&m).unwrap();
        let fm = map.impact_model();
        let foot = m.swing_foot_name().unwrap();
        for _ in 0..1000 {
            let x = random_state(&m, &mut rng);
            let r = map.apply(&x).unwrap();
            let lifted = map.lift(&x);
            let after = State::new(lifted.q.clone(), r.floating_velocity.clone());
            residual = residual.max((fm.constraint_jacobian(&lifted.q, foot).unwrap() * &r.floating_velocity).amax());
            energy_gain = energy_gain.max(fm.kinetic_energy(&after) - fm.kinetic_energy(&lifted));
            let p = fm.frame_position(foot, &lifted.q).unwrap();
            momentum = momentum.max((fm.angular_momentum_about(&after, p) - fm.angular_momentum_about(&lifted, p)).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = report(
        3,
        residual <= 1e-10 && energy_gain <= 0.0 && momentum <= 1e-8 && secs < 30.0,
        format!("2000 states: contact residual {residual:.1e} (≤ 1e-10), max KE change {energy_gain:.2e} (≤ 0), momentum change {momentum:.1e} (≤ 1e-8), {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_passive_energy_drift() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for (name, q, qd) in [
        ("compass", vec![0.1, -0.3], vec![0.6, -1.0]),
        ("five_link", vec![0.1, 0.2, 0.05, -0.3, -0.2], vec![0.5, -0.4, 0.3, 0.8, -0.6]),
    ] {
        let m = preset(name).unwrap();
        let x0 = State::new(DVector::from_vec(q), DVector::from_vec(qd));
        let x1 = integrate_flow(&Walker::passive(&m).unwrap(), &x0.to_vector(), 1.0, DEFAULT_DT).unwrap();
        worst = worst.max((m.energy(&State::from_vector(&x1)) - m.energy(&x0)).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = report(4, worst <= 1e-6 && secs < 10.0, format!("energy drift {worst:.2e} J over 1 s (≤ 1e-6), {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_5_optimizer_soundness() {
    let model = preset("compass").unwrap();
    let s = compass_sweep();
    let mut ok = s.elapsed.as_secs_f64() <= 600.0;
    let mut parts = Vec::new();
    for run in &s.runs {
        let r = &run.report;
        let trace = simulate_gait(&model, &run.gait, &TerrainSpec::flat(), 1).unwrap();
        let x0 = run.gait.initial_state.as_ref().unwrap().to_vector();
        let ret = trace.events.first().map_or(f64::INFINITY, |e| (e.impact.x_plus.to_vector() - &x0).amax());
        ok &= r.status == SolveStatus::Converged && r.max_equality <= 1e-6 && r.max_inequality <= 1e-6 && ret <= 1e-3;
        parts.push(format!(
            "({}, {:.3e}) {} residual {:.1e}/{:.1e} return {:.1e}",
            r.weights.0,
            r.weights.1,
            r.status.as_str(),
            r.max_equality,
            r.max_inequality,
            ret
        ));
    }
    let pass = report(5, ok, format!("{}; {:.0} s", parts.join("; "), s.elapsed.as_secs_f64()));
    assert!(pass);
}

struct Trend {
    sigma: Vec<f64>,
    effort: Vec<f64>,
    steps: Vec<Vec<usize>>,
    monotone: bool,
    no_worse: bool,
    strictly_better: bool,
}

fn trend(name: &str, s: &Sweep) -> Trend {
    let model = preset(name).unwrap();
    let sigma: Vec<f64> = s.runs.iter().map(|r| r.report.sigma_max).collect();
    let effort: Vec<f64> = s.runs.iter().map(|r| r.report.torque_cost).collect();
    let steps: Vec<Vec<usize>> = s
        .runs
        .iter()
        .map(|r| {
            robustness::guard_sweep(&model, &r.gait, &robustness::default_conditions(), 10)
                .unwrap()
                .conditions
                .iter()
                .map(|c| c.steps_completed)
                .collect()
        })
        .collect();
    let monotone = sigma.windows(2).all(|w| w[1] <= w[0]) && effort.windows(2).all(|w| w[1] >= w[0]);
    let base = &steps[0];
    let no_worse = steps[1..].iter().all(|st| st.iter().zip(base).all(|(a, b)| a >= b));
    let strictly_better = steps[1..].iter().all(|st| st.iter().zip(base).any(|(a, b)| a > b));
    Trend { sigma, effort, steps, monotone, no_worse, strictly_better }
}

fn describe(t: &Trend) -> String {
    format!(
        "sigma_max {:.1?}, effort {:.1?}, steps [flat, +1deg, -1deg, +2cm, -2cm] {:?}",
        t.sigma, t.effort, t.steps
    )
}

#[test]
fn criterion_6_weight_trend() {
    let started = Instant::now();
    let c = trend("compass", compass_sweep());
    let f = trend("five_link", five_link_sweep());
    let secs = started.elapsed().as_secs_f64();
    println!("  compass: {}", describe(&c));
    println!("  five_link (stretch): {} monotone {} no worse {} strictly better {}", describe(&f), f.monotone, f.no_worse, f.strictly_better);
    let pass = report(
        6,
        c.monotone && c.no_worse && c.strictly_better && secs <= 900.0,
        format!(
            "compass: monotone {}, no worse on any condition {}, strictly better somewhere {}; five_link stretch {}; {secs:.0} s",
            c.monotone,
            c.no_worse,
            c.strictly_better,
            if f.monotone && f.no_worse && f.strictly_better { "met" } else { "not met" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_return_map_spectrum() {
    let started = Instant::now();
    let fixture = return_map(&AffineHybrid::contracting(0.5, 0.2), &DVector::from_vec(vec![1.0, 0.0, 0.0]), 2.0, 1e-3).unwrap();
    let m = &fixture.spectrum.magnitudes;
    let fixture_err = (m[0] - 0.5).abs().max((m[1] - 0.2).abs());
    let fixture_time = started.elapsed();
    let model = preset("compass").unwrap();
    let gait = &compass_sweep().runs[1].gait;
    let timed = Instant::now();
    let rho = robustness::poincare_spectrum(&model, gait).unwrap().spectrum.spectral_radius;
    let secs = (fixture_time + timed.elapsed()).as_secs_f64();
    let pass = report(
        7,
        fixture_err <= 1e-6 && rho < 1.0 && secs < 60.0,
        format!("fixture eigenvalue error {fixture_err:.1e} (≤ 1e-6), balanced compass spectral radius {rho:.4} (< 1), {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_gradient_hygiene() {
    let model = preset("compass").unwrap();
    let run = &compass_sweep().runs[1];
    let started = Instant::now();
    let nlp = GaitNlp::new(&model, NlpOptions::for_model(&model).with_weights(run.report.weights.0, run.report.weights.1)).unwrap();
    let its = &run.solution.iterates;
    // the first outer iterates are far from periodic and their gradient is
    // small enough that finite-difference noise in the saltation term dominates
    let picks = [&its[its.len() / 3], &its[2 * its.len() / 3], &run.solution.x];
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut worst: f64 = 0.0;
    for x in picks {
        let g = nlp.cost_gradient(x).unwrap();
        for _ in 0..10 {
            let d = DVector::from_fn(x.len(), |_, _| rng.random_range(-1.0..1.0)).normalize();
            let h = 1e-5;
            let fd = (nlp.cost(&(x + &d * h)).unwrap() - nlp.cost(&(x - &d * h)).unwrap()) / (2.0 * h);
            let an = g.dot(&d);
            // a direction almost orthogonal to the gradient would make any error look large
            worst = worst.max((fd - an).abs() / an.abs().max(1e-3 * g.norm()));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = report(8, worst <= 1e-4 && secs < 60.0, format!("30 directions at iterates {}, {} and {} of {}, worst relative error {worst:.1e} (≤ 1e-4), {secs:.1} s", its.len() / 3, 2 * its.len() / 3, its.len(), its.len()));
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let model = preset("compass").unwrap();
    let opts = NlpOptions::for_model(&model);
    let a = saltwalk::gait_opt::synthesize(&model, &opts, None).unwrap();
    let b = saltwalk::gait_opt::synthesize(&model, &opts, None).unwrap();
    let gait_same = a.gait.to_toml() == b.gait.to_toml() && a.report.to_toml() == b.report.to_toml();
    let sweep = || robustness::guard_sweep(&model, &a.gait, &robustness::default_conditions(), 10).unwrap();
    let (r1, r2) = (sweep(), sweep());
    let report_same = r1.to_toml() == r2.to_toml() && r1.to_text() == r2.to_text();
    let pass = report(9, gait_same && report_same, format!("gait and solve report identical {gait_same}, robustness report identical {report_same}"));
    assert!(pass);
}
