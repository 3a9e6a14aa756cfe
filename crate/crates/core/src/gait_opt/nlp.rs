//! A small dense NLP solver: augmented Lagrangian outer loop, structured
//! quasi-Newton inner minimization with projected bounds, and a final
//! minimum-norm Newton polish onto the constraints.
//!
//! Inequalities `g(x) ≤ 0` become equalities `g(x) + s = 0` with slacks
//! `s ≥ 0`. The inner model Hessian is `ρJᵀJ + B`, where `B` is a damped BFGS
//! estimate of the Lagrangian curvature; the Gauss–Newton part handles the
//! penalty exactly, so feasibility converges like Newton's method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the solver needs from a problem. Bounds may be infinite.
pub trait Problem {
    fn num_vars(&self) -> usize;
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);
    /// Typical magnitude of each variable; the solver works on `x / scale`.
    fn scales(&self) -> DVector<f64> {
        DVector::from_element(self.num_vars(), 1.0)
    }
    /// Multiplies the cost inside the solver (reported costs are unscaled).
    fn cost_scale(&self) -> f64 {
        1.0
    }
    fn cost(&self, x: &DVector<f64>) -> Result<f64>;
    fn cost_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn equalities(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn equality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// `g(x) ≤ 0`.
    fn inequalities(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn inequality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Constraint tolerance (max norm).
    pub feasibility_tol: f64,
    /// Stationarity tolerance on the scaled projected Lagrangian gradient.
    pub optimality_tol: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Stop once the cost changes by less than this (relative) across an
    /// outer iteration while feasible.
    pub cost_change_tol: f64,
    /// Run the Newton feasibility polish after the outer loop.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 40,
            max_inner: 150,
            feasibility_tol: 1e-6,
            optimality_tol: 1e-5,
            initial_penalty: 10.0,
            max_penalty: 1e9,
            cost_change_tol: 1e-9,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    SolverError,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::SolverError => "solver_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    /// Inner iterations over all outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub cost: f64,
    pub max_equality: f64,
    pub max_inequality: f64,
    /// Scaled projected Lagrangian gradient at the end of the outer loop.
    pub stationarity: f64,
    /// Iterate at the end of every outer iteration.
    pub iterates: Vec<DVector<f64>>,
    /// Augmented-Lagrangian merit after every accepted inner step, one list per
    /// outer iteration. Non-increasing within each list.
    pub merit_history: Vec<Vec<f64>>,
    pub message: String,
}

/// Problem in scaled variables `w = (x / scale, s)`.
struct Scaled<'p, P: Problem + ?Sized> {
    p: &'p P,
    scale: DVector<f64>,
    nx: usize,
    ne: usize,
    ni: usize,
    cost_scale: f64,
}

#[derive(Clone)]
struct Eval {
    f: f64,
    grad: DVector<f64>,
    r: DVector<f64>,
    jac: DMatrix<f64>,
}

impl<P: Problem + ?Sized> Scaled<'_, P> {
    fn x(&self, w: &DVector<f64>) -> DVector<f64> {
        w.rows(0, self.nx).component_mul(&self.scale)
    }

    fn residual(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let x = self.x(w);
        let f = self.p.cost(&x)? * self.cost_scale;
        Ok((f, self.constraints(&x, w)?))
    }

    fn constraints(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let c = self.p.equalities(x)?;
        let g = self.p.inequalities(x)?;
        let mut r = DVector::zeros(self.ne + self.ni);
        r.rows_mut(0, self.ne).copy_from(&c);
        r.rows_mut(self.ne, self.ni).copy_from(&(g + w.rows(self.nx, self.ni)));
        Ok(r)
    }

    fn eval(&self, w: &DVector<f64>) -> Result<Eval> {
        let x = self.x(w);
        let f = self.p.cost(&x)? * self.cost_scale;
        let mut grad = DVector::zeros(w.len());
        grad.rows_mut(0, self.nx).copy_from(&(self.p.cost_gradient(&x)?.component_mul(&self.scale) * self.cost_scale));
        let r = self.constraints(&x, w)?;
        let nw = w.len();
        let mut jac = DMatrix::zeros(self.ne + self.ni, nw);
        let je = self.p.equality_jacobian(&x)?;
        let ji = self.p.inequality_jacobian(&x)?;
        for (col, s) in self.scale.iter().enumerate() {
            for row in 0..self.ne {
                jac[(row, col)] = je[(row, col)] * s;
            }
            for row in 0..self.ni {
                jac[(self.ne + row, col)] = ji[(row, col)] * s;
            }
        }
        for k in 0..self.ni {
            jac[(self.ne + k, self.nx + k)] = 1.0;
        }
        Ok(Eval { f, grad, r, jac })
    }
}

fn merit(f: f64, r: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> f64 {
    f + lambda.dot(r) + 0.5 * rho * r.norm_squared()
}

/// Zeroes gradient components that push into an active bound.
fn projected(g: &DVector<f64>, w: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(g.len(), |i, _| {
        let at_lo = w[i] <= lo[i] + 1e-12 * (1.0 + lo[i].abs());
        let at_hi = w[i] >= hi[i] - 1e-12 * (1.0 + hi[i].abs());
        if (at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0) {
            0.0
        } else {
            g[i]
        }
    })
}

fn clip(w: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(w.len(), |i, _| w[i].clamp(lo[i], hi[i]))
}

/// Damped BFGS update keeping `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-16) {
        return;
    }
    let sy = s.dot(y);
    let y = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    if !(sy > 1e-16) {
        return;
    }
    *b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
}

/// Solves `(H_FF) d_F = −g_F` on the free set, raising a ridge until Cholesky succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let k = free.len();
    let mut d = DVector::zeros(g.len());
    if k == 0 {
        return d;
    }
    let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(k, |a, _| -g[free[a]]);
    let diag_max = (0..k).map(|i| hff[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let mut m = hff.clone();
        for i in 0..k {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let df = ch.solve(&gf);
            if df.iter().all(|v| v.is_finite()) {
                for (a, &i) in free.iter().enumerate() {
                    d[i] = df[a];
                }
                return d;
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * diag_max } else { ridge * 10.0 };
    }
    // steepest descent as the last resort
    for &i in free {
        d[i] = -g[i];
    }
    d
}

pub fn solve<P: Problem + ?Sized>(problem: &P, x0: &DVector<f64>, opts: &SolverOptions) -> Result<SolverResult> {
    let nx = problem.num_vars();
    crate::error::check_dim("initial guess", nx, x0.len())?;
    let scale = problem.scales();
    let (xlo, xhi) = problem.bounds();
    if (0..nx).any(|i| !(xlo[i] <= xhi[i])) {
        return Err(Error::Config("variable bounds with min > max".into()));
    }
    let x0 = DVector::from_fn(nx, |i, _| x0[i].clamp(xlo[i], xhi[i]));
    let ne = problem.equalities(&x0)?.len();
    let g0 = problem.inequalities(&x0)?;
    let ni = g0.len();
    let sp = Scaled { p: problem, scale: scale.clone(), nx, ne, ni, cost_scale: problem.cost_scale() };

    let nw = nx + ni;
    let lo = DVector::from_fn(nw, |i, _| if i < nx { xlo[i] / scale[i] } else { 0.0 });
    let hi = DVector::from_fn(nw, |i, _| if i < nx { xhi[i] / scale[i] } else { f64::INFINITY });
    let mut w = DVector::from_fn(nw, |i, _| if i < nx { x0[i] / scale[i] } else { (-g0[i - nx]).max(0.0) });

    let mut lambda = DVector::zeros(ne + ni);
    let mut rho = opts.initial_penalty;
    let mut b = DMatrix::<f64>::identity(nw, nw);
    let mut ev = sp.eval(&w)?;
    let mut prev_viol = ev.r.amax();
    let mut prev_cost = ev.f;
    let mut inner_tol = 1e-2_f64.max(opts.optimality_tol);
    let mut total_inner = 0;
    let mut iterates = Vec::new();
    let mut merit_history = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut message = String::new();
    let mut stationarity = f64::INFINITY;
    let mut outer = 0;

    while outer < opts.max_outer {
        outer += 1;
        let mut history = vec![merit(ev.f, &ev.r, &lambda, rho)];
        for _ in 0..opts.max_inner {
            let mu = &lambda + &ev.r * rho;
            let grad_l = &ev.grad + ev.jac.transpose() * &mu;
            let pg = projected(&grad_l, &w, &lo, &hi);
            if pg.amax() <= inner_tol {
                break;
            }
            total_inner += 1;
            let free: Vec<usize> = (0..nw).filter(|&i| pg[i] != 0.0 || (w[i] > lo[i] && w[i] < hi[i])).collect();
            let h = ev.jac.transpose() * &ev.jac * rho + &b;
            let d = newton_direction(&h, &grad_l, &free);
            let m0 = *history.last().unwrap();
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial = clip(&(&w + &d * step), &lo, &hi);
                let decrease = grad_l.dot(&(&trial - &w));
                if let Ok((f, r)) = sp.residual(&trial) {
                    let m = merit(f, &r, &lambda, rho);
                    if m.is_finite() && m <= m0 + 1e-4 * decrease.min(0.0) && m <= m0 {
                        accepted = Some((trial, m));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, m)) = accepted else {
                break;
            };
            let next = sp.eval(&trial)?;
            let y = (&next.grad + next.jac.transpose() * &mu) - (&ev.grad + ev.jac.transpose() * &mu);
            bfgs_update(&mut b, &(&trial - &w), &y);
            w = trial;
            ev = next;
            history.push(m);
        }
        merit_history.push(history);
        lambda += &ev.r * rho;
        let viol = ev.r.amax();
        let grad_lag = &ev.grad + ev.jac.transpose() * &lambda;
        stationarity = projected(&grad_lag, &w, &lo, &hi).amax();
        iterates.push(sp.x(&w));
        let cost_change = (ev.f - prev_cost).abs() / ev.f.abs().max(1.0);
        prev_cost = ev.f;
        if viol <= opts.feasibility_tol && (stationarity <= opts.optimality_tol || (outer > 2 && cost_change <= opts.cost_change_tol)) {
            status = SolveStatus::Converged;
            break;
        }
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(opts.max_penalty);
        }
        prev_viol = viol;
        inner_tol = (inner_tol * 0.1).max(opts.optimality_tol);
    }

    if opts.polish {
        match polish(&sp, &mut w, &lo, &hi) {
            Ok(()) => {}
            Err(e) => message = format!("feasibility polish failed: {e}"),
        }
    }
    let x = sp.x(&w);
    let max_equality = problem.equalities(&x)?.amax();
    let max_inequality = problem.inequalities(&x)?.iter().fold(0.0_f64, |a, v| a.max(*v));
    let cost = problem.cost(&x)?;
    let violation = max_equality.max(max_inequality);
    if violation > opts.feasibility_tol {
        status = if rho >= opts.max_penalty { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
        if message.is_empty() {
            message = format!("constraint violation {violation:.3e} after {outer} outer iterations");
        }
    } else if status != SolveStatus::Converged && message.is_empty() {
        message = format!("feasible but not stationary ({stationarity:.3e}) after {outer} outer iterations");
    }
    Ok(SolverResult {
        x,
        status,
        iterations: total_inner,
        outer_iterations: outer,
        cost,
        max_equality,
        max_inequality,
        stationarity,
        iterates,
        merit_history,
        message,
    })
}

/// Newton steps `d = −J_Fᵀ(J_F J_Fᵀ)⁻¹ r` on the variables away from their bounds.
fn polish<P: Problem + ?Sized>(sp: &Scaled<'_, P>, w: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    let mut ev = sp.eval(w)?;
    for _ in 0..15 {
        if ev.r.amax() <= 1e-12 {
            break;
        }
        let free: Vec<usize> = (0..w.len())
            .filter(|&i| w[i] > lo[i] + 1e-9 * (1.0 + lo[i].abs()) && w[i] < hi[i] - 1e-9 * (1.0 + hi[i].abs()))
            .collect();
        let jf = DMatrix::from_fn(ev.r.len(), free.len(), |r, c| ev.jac[(r, free[c])]);
        let jjt = &jf * jf.transpose();
        let y = jjt
            .clone()
            .cholesky()
            .map(|c| c.solve(&ev.r))
            .or_else(|| jjt.pseudo_inverse(1e-12).ok().map(|p| p * &ev.r))
            .ok_or_else(|| Error::Singular { what: "constraint Jacobian in feasibility polish".into() })?;
        let df = jf.transpose() * y;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = w.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] -= step * df[a];
            }
            let trial = clip(&trial, lo, hi);
            if let Ok(next) = sp.eval(&trial) {
                if next.r.amax() < ev.r.amax() {
                    *w = trial;
                    ev = next;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0 − 1)² + (x1 − 2)² s.t. x0 + x1 = 1, x0 ≥ 0.5 (active), x1 ≤ 10.
    struct Quadratic;

    impl Problem for Quadratic {
        fn num_vars(&self) -> usize {
            2
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_vec(vec![0.5, f64::NEG_INFINITY]), DVector::from_vec(vec![f64::INFINITY, 10.0]))
        }
        fn cost(&self, x: &DVector<f64>) -> Result<f64> {
            Ok((x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2))
        }
        fn cost_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] - 2.0)]))
        }
        fn equalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![x[0] + x[1] - 1.0]))
        }
        fn equality_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
        }
        fn inequalities(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(0))
        }
        fn inequality_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::zeros(0, 2))
        }
    }

    /// Hock–Schittkowski 71: min x0 x3 (x0+x1+x2) + x2, x0x1x2x3 ≥ 25,
    /// Σx² = 40, 1 ≤ x ≤ 5. Optimum 17.0140173.
    struct Hs71;

    impl Problem for Hs71 {
        fn num_vars(&self) -> usize {
            4
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_element(4, 1.0), DVector::from_element(4, 5.0))
        }
        fn cost(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2])
        }
        fn cost_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![
                x[3] * (2.0 * x[0] + x[1] + x[2]),
                x[0] * x[3],
                x[0] * x[3] + 1.0,
                x[0] * (x[0] + x[1] + x[2]),
            ]))
        }
        fn equalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![x.norm_squared() - 40.0]))
        }
        fn equality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 4, (x * 2.0).as_slice()))
        }
        fn inequalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![25.0 - x.iter().product::<f64>()]))
        }
        fn inequality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            let p = |skip: usize| -(0..4).filter(|&i| i != skip).map(|i| x[i]).product::<f64>();
            Ok(DMatrix::from_row_slice(1, 4, &[p(0), p(1), p(2), p(3)]))
        }
    }

    #[test]
    fn bound_constrained_quadratic() {
        let r = solve(&Quadratic, &DVector::from_vec(vec![3.0, 3.0]), &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{}", r.message);
        assert!((r.x[0] - 0.5).abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-6, "{}", r.x);
    }

    #[test]
    fn hock_schittkowski_71() {
        let r = solve(&Hs71, &DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]), &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{}", r.message);
        assert!((r.cost - 17.0140173).abs() < 1e-5, "cost {}", r.cost);
        assert!(r.max_equality <= 1e-6 && r.max_inequality <= 1e-6);
    }

    #[test]
    fn merit_never_increases_within_an_outer_iteration() {
        let r = solve(&Hs71, &DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]), &SolverOptions::default()).unwrap();
        for h in &r.merit_history {
            assert!(h.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn single_outer_iteration_reports_max_iter() {
        let opts = SolverOptions { max_outer: 1, max_inner: 1, polish: false, ..SolverOptions::default() };
        let r = solve(&Hs71, &DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]), &opts).unwrap();
        assert_eq!(r.status, SolveStatus::MaxIter);
    }

    #[test]
    fn damped_bfgs_stays_positive_definite() {
        let mut b = DMatrix::identity(3, 3);
        bfgs_update(&mut b, &DVector::from_vec(vec![1.0, 0.0, 0.0]), &DVector::from_vec(vec![-1.0, 0.5, 0.0]));
        assert!(b.cholesky().is_some());
    }
}
