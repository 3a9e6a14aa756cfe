use nalgebra::{DMatrix, DVector};

use super::NlpOptions;
use super::nlp::Problem;
use crate::error::{Error, Result};
use crate::hybrid_sim::{ImpactMap, Walker};
use crate::rigid_body::{RobotModel, State};
use crate::saltation::extended_saltation;
use crate::virtual_constraints::{bezier_polynomial, Gait};

/// Where each block of unknowns lives in the decision vector:
/// node states, node torques, midpoint torques, step duration, Bézier rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub outputs: usize,
    pub coeffs: usize,
    pub intervals: usize,
}

impl Layout {
    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn state(&self, i: usize) -> usize {
        2 * self.n * i
    }

    pub fn torque(&self, i: usize) -> usize {
        2 * self.n * self.nodes() + self.m * i
    }

    pub fn midpoint_torque(&self, k: usize) -> usize {
        self.torque(self.nodes()) + self.m * k
    }

    pub fn duration(&self) -> usize {
        self.midpoint_torque(self.intervals)
    }

    pub fn alpha(&self) -> usize {
        self.duration() + 1
    }

    pub fn len(&self) -> usize {
        self.alpha() + self.outputs * self.coeffs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_at(&self, x: &DVector<f64>, i: usize) -> State {
        let s = self.state(i);
        State::new(x.rows(s, self.n).into_owned(), x.rows(s + self.n, self.n).into_owned())
    }

    pub fn torque_at(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.torque(i), self.m).into_owned()
    }

    pub fn midpoint_torque_at(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        x.rows(self.midpoint_torque(k), self.m).into_owned()
    }

    pub fn alpha_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.outputs, self.coeffs, x.rows(self.alpha(), self.outputs * self.coeffs).as_slice())
    }

    pub fn set_state(&self, x: &mut DVector<f64>, i: usize, s: &State) {
        let o = self.state(i);
        x.rows_mut(o, self.n).copy_from(&s.q);
        x.rows_mut(o + self.n, self.n).copy_from(&s.qd);
    }

    fn state_vars(&self, i: usize) -> impl Iterator<Item = usize> {
        self.state(i)..self.state(i) + 2 * self.n
    }

    fn config_vars(&self, i: usize) -> impl Iterator<Item = usize> {
        self.state(i)..self.state(i) + self.n
    }

    fn alpha_vars(&self) -> impl Iterator<Item = usize> {
        self.alpha()..self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Defect(usize),
    Output(usize),
    Periodicity,
    Guard,
    ImpactVelocity,
    Clearance(usize),
    StepLength,
    Impulse,
    Speed,
    PhaseRate(usize),
}

#[derive(Debug, Clone)]
struct Block {
    kind: Kind,
    rows: usize,
    vars: Vec<usize>,
}

fn block(kind: Kind, rows: usize, vars: impl IntoIterator<Item = usize>) -> Block {
    let mut vars: Vec<usize> = vars.into_iter().collect();
    vars.sort_unstable();
    vars.dedup();
    Block { kind, rows, vars }
}

/// Periodic-gait synthesis as a nonlinear program over a Hermite–Simpson
/// transcription of one step.
#[derive(Debug, Clone)]
pub struct GaitNlp<'m> {
    pub model: &'m RobotModel,
    pub options: NlpOptions,
    pub layout: Layout,
    impact: ImpactMap,
    phase_coeffs: DVector<f64>,
    output_map: DMatrix<f64>,
    equality_blocks: Vec<Block>,
    inequality_blocks: Vec<Block>,
}

impl<'m> GaitNlp<'m> {
    pub fn new(model: &'m RobotModel, options: NlpOptions) -> Result<Self> {
        options.validate()?;
        let n = model.n();
        let m = model.m();
        if m == 0 {
            return Err(Error::Model(format!("model `{}` has no actuators to synthesize a gait for", model.name)));
        }
        model.swing_foot_name()?;
        let phase_coeffs = model.hip_phase_coeffs()?;
        let layout = Layout { n, m, outputs: m, coeffs: options.degree + 1, intervals: options.intervals };
        let big_n = layout.intervals;
        let l = layout;

        let mut eq = Vec::new();
        for k in 0..big_n {
            let vars = l
                .state_vars(k)
                .chain(l.state_vars(k + 1))
                .chain(l.torque(k)..l.torque(k) + 2 * m)
                .chain(l.midpoint_torque(k)..l.midpoint_torque(k) + m)
                .chain([l.duration()]);
            eq.push(block(Kind::Defect(k), 2 * n, vars));
        }
        for i in 0..=big_n {
            let vars = l.state_vars(i).chain(l.config_vars(0)).chain(l.config_vars(big_n)).chain(l.alpha_vars());
            eq.push(block(Kind::Output(i), 2 * m, vars));
        }
        eq.push(block(Kind::Periodicity, 2 * n, l.state_vars(0).chain(l.state_vars(big_n))));
        eq.push(block(Kind::Guard, 1, l.config_vars(big_n)));

        let mut ineq = vec![
            block(Kind::ImpactVelocity, 1, l.state_vars(big_n)),
            block(Kind::StepLength, 2, l.config_vars(big_n)),
            block(Kind::Impulse, 1, l.state_vars(big_n)),
            block(Kind::Speed, 2, l.config_vars(big_n).chain([l.duration()])),
        ];
        for i in options.clearance_nodes() {
            ineq.push(block(Kind::Clearance(i), 1, l.config_vars(i)));
        }
        for i in 0..=big_n {
            ineq.push(block(Kind::PhaseRate(i), 1, l.state_vars(i).chain(l.config_vars(0)).chain(l.config_vars(big_n))));
        }

        Ok(Self {
            model,
            options,
            layout,
            impact: ImpactMap::new(model)?,
            phase_coeffs,
            output_map: model.actuation().transpose(),
            equality_blocks: eq,
            inequality_blocks: ineq,
        })
    }

    pub fn num_equalities(&self) -> usize {
        self.equality_blocks.iter().map(|b| b.rows).sum()
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequality_blocks.iter().map(|b| b.rows).sum()
    }

    fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.layout.n;
        let s = State::from_vector(x);
        let qdd = self.model.forward_dynamics(&s, u)?;
        Ok(DVector::from_fn(2 * n, |i, _| if i < n { s.qd[i] } else { qdd[i - n] }))
    }

    fn interval(&self, x: &DVector<f64>) -> f64 {
        x[self.layout.duration()] / self.layout.intervals as f64
    }

    /// Output error and rate at node `i` for the gait encoded in `x`.
    fn output_residual(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        let l = &self.layout;
        let s = l.state_at(x, i);
        let p_start = self.phase_coeffs.dot(&l.state_at(x, 0).q);
        let span = self.phase_coeffs.dot(&l.state_at(x, l.intervals).q) - p_start;
        let tau = (self.phase_coeffs.dot(&s.q) - p_start) / span;
        let dtau = self.phase_coeffs.dot(&s.qd) / span;
        let alpha = l.alpha_at(x);
        let ya = &self.output_map * &s.q;
        let yad = &self.output_map * &s.qd;
        let mut r = DVector::zeros(2 * l.outputs);
        for j in 0..l.outputs {
            let row: Vec<f64> = alpha.row(j).iter().copied().collect();
            let p = bezier_polynomial(&row, tau);
            r[j] = ya[j] - p.value;
            r[l.outputs + j] = yad[j] - p.d1 * dtau;
        }
        r
    }

    fn eval_block(&self, kind: Kind, x: &DVector<f64>) -> Result<DVector<f64>> {
        let l = &self.layout;
        let last = l.intervals;
        let opts = &self.options;
        Ok(match kind {
            Kind::Defect(k) => {
                let h = self.interval(x);
                let xk = l.state_at(x, k).to_vector();
                let xk1 = l.state_at(x, k + 1).to_vector();
                let fk = self.field(&xk, &l.torque_at(x, k))?;
                let fk1 = self.field(&xk1, &l.torque_at(x, k + 1))?;
                let xm = (&xk + &xk1) * 0.5 + (&fk - &fk1) * (h / 8.0);
                let fm = self.field(&xm, &l.midpoint_torque_at(x, k))?;
                &xk1 - &xk - (fk + fm * 4.0 + fk1) * (h / 6.0)
            }
            Kind::Output(i) => self.output_residual(x, i),
            Kind::Periodicity => {
                let post = self.impact.apply(&l.state_at(x, last))?.x_plus;
                l.state_at(x, 0).to_vector() - post.to_vector()
            }
            Kind::Guard => DVector::from_element(1, self.foot(x, last)?.height),
            Kind::ImpactVelocity => {
                DVector::from_element(1, self.model.swing_foot(&l.state_at(x, last))?.vertical_velocity + opts.impact_velocity)
            }
            Kind::Clearance(i) => DVector::from_element(1, opts.clearance - self.foot(x, i)?.height),
            Kind::StepLength => {
                let s = self.foot(x, last)?.forward;
                DVector::from_vec(vec![opts.step_length.0 - s, s - opts.step_length.1])
            }
            Kind::Impulse => {
                let impulse = self.impact.apply(&l.state_at(x, last))?.impulse;
                DVector::from_element(1, -impulse[impulse.len() - 1])
            }
            Kind::Speed => {
                let v = self.foot(x, last)?.forward / x[l.duration()];
                DVector::from_vec(vec![opts.speed.0 - v, v - opts.speed.1])
            }
            Kind::PhaseRate(i) => {
                let p_start = self.phase_coeffs.dot(&l.state_at(x, 0).q);
                let span = self.phase_coeffs.dot(&l.state_at(x, last).q) - p_start;
                let dtau = self.phase_coeffs.dot(&l.state_at(x, i).qd) / span;
                DVector::from_element(1, opts.min_phase_rate - dtau)
            }
        })
    }

    fn foot(&self, x: &DVector<f64>, i: usize) -> Result<crate::rigid_body::SwingFoot> {
        self.model.swing_foot(&self.layout.state_at(x, i))
    }

    fn stack(&self, blocks: &[Block], x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(blocks.iter().map(|b| b.rows).sum());
        let mut row = 0;
        for b in blocks {
            out.rows_mut(row, b.rows).copy_from(&self.eval_block(b.kind, x)?);
            row += b.rows;
        }
        Ok(out)
    }

    fn stack_jacobian(&self, blocks: &[Block], x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut jac = DMatrix::zeros(rows, x.len());
        let mut row = 0;
        let mut xp = x.clone();
        for b in blocks {
            for &j in &b.vars {
                let h = 1e-6 * x[j].abs().max(1.0);
                xp[j] = x[j] + h;
                let fp = self.eval_block(b.kind, &xp)?;
                xp[j] = x[j] - h;
                let fm = self.eval_block(b.kind, &xp)?;
                xp[j] = x[j];
                jac.view_mut((row, j), (b.rows, 1)).copy_from(&((fp - fm) / (2.0 * h)));
            }
            row += b.rows;
        }
        Ok(jac)
    }

    /// Simpson-weighted torque effort `Σ (‖u_k‖² + 4‖u_k+½‖² + ‖u_k+1‖²) / 6`.
    pub fn torque_cost(&self, x: &DVector<f64>) -> f64 {
        let l = &self.layout;
        (0..l.intervals)
            .map(|k| {
                (l.torque_at(x, k).norm_squared() + 4.0 * l.midpoint_torque_at(x, k).norm_squared() + l.torque_at(x, k + 1).norm_squared())
                    / 6.0
            })
            .sum()
    }

    /// The closed-loop gait described by `x`, without solver metadata.
    pub fn gait(&self, x: &DVector<f64>) -> Gait {
        let l = &self.layout;
        let first = l.state_at(x, 0);
        let last = l.state_at(x, l.intervals);
        let mut g = Gait::new(
            &self.model.name,
            l.alpha_at(x),
            x[l.duration()],
            self.phase_coeffs.dot(&first.q),
            self.phase_coeffs.dot(&last.q),
        );
        g.tau_margin = self.options.tau_margin;
        g.kp = DVector::from_element(l.outputs, self.options.kp);
        g.kd = DVector::from_element(l.outputs, self.options.kd);
        g.weights = self.options.weights;
        g.initial_state = Some(first);
        g.pre_impact_state = Some(last);
        g
    }

    /// Largest singular value of the closed-loop extended saltation matrix at
    /// the designed impact.
    ///
    /// The desired outputs are extended past the phase band here. Iterates that
    /// violate periodicity can land the post-impact phase on the band edge,
    /// where the held outputs make the value jump; on periodic gaits the
    /// post-impact phase is 0 and the result equals the deployed controller's.
    pub fn sigma_max(&self, x: &DVector<f64>) -> Result<f64> {
        let mut gait = self.gait(x);
        gait.tau_margin = f64::INFINITY;
        let walker = Walker::with_impact(self.model, &gait, &self.impact)?;
        Ok(extended_saltation(&walker, &self.layout.state_at(x, self.layout.intervals).to_vector())?.sigma_max)
    }

    /// `(torque term, saltation term)` before weighting.
    pub fn cost_terms(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        Ok((self.torque_cost(x), self.sigma_max(x)?.powi(2)))
    }

    fn saltation_vars(&self) -> Vec<usize> {
        let l = &self.layout;
        let mut v: Vec<usize> = l.state_vars(l.intervals).chain(l.config_vars(0)).chain(l.alpha_vars()).collect();
        v.sort_unstable();
        v
    }
}

impl Problem for GaitNlp<'_> {
    fn num_vars(&self) -> usize {
        self.layout.len()
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let l = &self.layout;
        let mut lo = DVector::from_element(l.len(), f64::NEG_INFINITY);
        let mut hi = DVector::from_element(l.len(), f64::INFINITY);
        for i in 0..l.nodes() {
            for (j, (a, b)) in self.model.joint_limits.iter().enumerate() {
                lo[l.state(i) + j] = *a;
                hi[l.state(i) + j] = *b;
            }
            for j in 0..l.n {
                lo[l.state(i) + l.n + j] = -self.options.velocity_limit;
                hi[l.state(i) + l.n + j] = self.options.velocity_limit;
            }
        }
        let limits = self.model.torque_limits() * self.options.torque_headroom;
        for start in (0..l.nodes()).map(|i| l.torque(i)).chain((0..l.intervals).map(|k| l.midpoint_torque(k))) {
            for j in 0..l.m {
                lo[start + j] = -limits[j];
                hi[start + j] = limits[j];
            }
        }
        lo[l.duration()] = self.options.duration.0;
        hi[l.duration()] = self.options.duration.1;
        (lo, hi)
    }

    fn scales(&self) -> DVector<f64> {
        let l = &self.layout;
        let limits = self.model.torque_limits();
        let mut s = DVector::from_element(l.len(), 1.0);
        for i in 0..l.nodes() {
            s.rows_mut(l.state(i) + l.n, l.n).fill(2.0);
        }
        for start in (0..l.nodes()).map(|i| l.torque(i)).chain((0..l.intervals).map(|k| l.midpoint_torque(k))) {
            for j in 0..l.m {
                s[start + j] = 0.2 * limits[j];
            }
        }
        s
    }

    fn cost_scale(&self) -> f64 {
        let l = &self.layout;
        let typical = 0.1 * self.model.torque_limits().mean();
        1.0 / (l.intervals as f64 * l.m as f64 * typical * typical)
    }

    fn cost(&self, x: &DVector<f64>) -> Result<f64> {
        let (w1, w2) = (self.options.effort_weight(), self.options.weights.1);
        let mut c = w1 * self.torque_cost(x);
        if w2 != 0.0 {
            c += w2 * self.sigma_max(x)?.powi(2);
        }
        Ok(c)
    }

    fn cost_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let l = &self.layout;
        let (w1, w2) = (self.options.effort_weight(), self.options.weights.1);
        let mut g = DVector::zeros(l.len());
        for i in 0..l.nodes() {
            let weight = if i == 0 || i == l.intervals { 1.0 } else { 2.0 };
            g.rows_mut(l.torque(i), l.m).copy_from(&(l.torque_at(x, i) * (w1 * weight / 3.0)));
        }
        for k in 0..l.intervals {
            g.rows_mut(l.midpoint_torque(k), l.m).copy_from(&(l.midpoint_torque_at(x, k) * (w1 * 4.0 / 3.0)));
        }
        if w2 != 0.0 {
            let mut xp = x.clone();
            for j in self.saltation_vars() {
                let h = 1e-5 * x[j].abs().max(1.0);
                xp[j] = x[j] + h;
                let fp = self.sigma_max(&xp)?.powi(2);
                xp[j] = x[j] - h;
                let fm = self.sigma_max(&xp)?.powi(2);
                xp[j] = x[j];
                g[j] += w2 * (fp - fm) / (2.0 * h);
            }
        }
        Ok(g)
    }

    fn equalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.stack(&self.equality_blocks, x)
    }

    fn equality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.stack_jacobian(&self.equality_blocks, x)
    }

    fn inequalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.stack(&self.inequality_blocks, x)
    }

    fn inequality_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.stack_jacobian(&self.inequality_blocks, x)
    }
}
