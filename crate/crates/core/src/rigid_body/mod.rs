//! Planar open-chain rigid-body models.
//!
//! Every revolute coordinate is an *absolute* link angle measured from the
//! upward vertical, positive when the link tips forward (towards +x). A point
//! at distance `s` along link `j` therefore contributes `s·(sin θ_j, cos θ_j)`
//! to its position. Any material point of the chain is an affine combination
//!
//! ```text
//! p(q) = base + Σ_j a_j · (sin θ_j, cos θ_j)
//! ```
//!
//! with constant coefficients `a_j`, which turns the Lagrangian into closed
//! form: `D_jk = M_jk cos(θ_j − θ_k) + δ_jk I_j`, where `M = Σ_b m_b a_b a_bᵀ`.
//!
//! Base coordinates (prismatic x and/or z) are appended after the link
//! angles. Walking models are usually *pinned* (no base coordinates: the
//! stance foot is the origin) and are lifted to a floating base only inside
//! the impact map.

mod file;

pub use file::{check_schema, preset, preset_names, ModelFile, SCHEMA_VERSION};

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// Prismatic base coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseAxis {
    X,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    /// Distance along the parent link at which this link's joint sits.
    pub attach: f64,
    /// `+1.0` if the link extends along `(sin θ, cos θ)` from its joint, `-1.0` if against it.
    pub direction: f64,
    pub mass: f64,
    /// Rotational inertia about the link's centre of mass.
    pub inertia: f64,
    /// Distance of the centre of mass from the joint, along the link.
    pub com: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub name: String,
    /// `None` attaches the mass to the base origin.
    pub link: Option<usize>,
    pub offset: f64,
    pub mass: f64,
}

/// Which position coordinates a contact constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactAxes {
    /// Horizontal and vertical (point foot).
    Xz,
    /// Vertical only.
    Z,
}

impl ContactAxes {
    pub fn count(self) -> usize {
        match self {
            ContactAxes::Xz => 2,
            ContactAxes::Z => 1,
        }
    }
}

/// A named point rigidly attached to a link (or to the base).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub link: Option<usize>,
    pub offset: f64,
    pub axes: ContactAxes,
}

/// A torque source acting between two links. Its joint angle is
/// `θ_child − θ_parent` (or `θ_child` for a ground-referenced actuator).
#[derive(Debug, Clone, PartialEq)]
pub struct Actuator {
    pub name: String,
    pub parent: Option<usize>,
    pub child: usize,
    pub torque_limit: f64,
}

/// Configuration and velocity pair `x = (q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn zeros(n: usize) -> Self {
        Self { q: DVector::zeros(n), qd: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Stacked `(q, q̇)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.qd[i - n] })
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self { q: x.rows(0, n).into_owned(), qd: x.rows(n, n).into_owned() }
    }
}

/// `D(q) q̈ + H(q, q̇) = B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub d: DMatrix<f64>,
    pub h: DVector<f64>,
    pub b: DMatrix<f64>,
}

/// Vertical swing-foot kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingFoot {
    pub height: f64,
    pub vertical_velocity: f64,
    pub forward: f64,
    pub forward_velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Body {
    link: Option<usize>,
    coeffs: DVector<f64>,
    mass: f64,
    inertia: f64,
}

/// Immutable description of a planar biped (or any planar open chain).
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub gravity: f64,
    /// Newtonian restitution at impact (0 for the plastic impacts of walking).
    pub restitution: f64,
    pub leg_length: f64,
    /// The swing foot must be at least this far ahead of the stance foot before
    /// a ground contact counts as a footstrike (mid-stance scuffing is ignored).
    pub min_step: f64,
    pub links: Vec<Link>,
    pub base: Vec<BaseAxis>,
    pub point_masses: Vec<PointMass>,
    pub frames: Vec<Frame>,
    pub actuators: Vec<Actuator>,
    pub relabel: DMatrix<f64>,
    pub joint_limits: Vec<(f64, f64)>,
    pub swing_foot: Option<String>,
    pub hip: Option<String>,
    bodies: Vec<Body>,
    coupling: DMatrix<f64>,
    moments: DVector<f64>,
    link_inertia: DVector<f64>,
    total_mass: f64,
}

fn unit(theta: f64) -> Vector2<f64> {
    Vector2::new(theta.sin(), theta.cos())
}

fn unit_derivative(theta: f64) -> Vector2<f64> {
    Vector2::new(theta.cos(), -theta.sin())
}

impl RobotModel {
    /// Builds and validates a model, caching the constant inertial couplings.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        gravity: f64,
        restitution: f64,
        links: Vec<Link>,
        base: Vec<BaseAxis>,
        point_masses: Vec<PointMass>,
        frames: Vec<Frame>,
        actuators: Vec<Actuator>,
        relabel: DMatrix<f64>,
    ) -> Result<Self> {
        let n = links.len() + base.len();
        let mut model = Self {
            name: name.into(),
            gravity,
            restitution,
            leg_length: 1.0,
            min_step: 0.0,
            links,
            base,
            point_masses,
            frames,
            actuators,
            relabel,
            joint_limits: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            swing_foot: None,
            hip: None,
            bodies: Vec::new(),
            coupling: DMatrix::zeros(0, 0),
            moments: DVector::zeros(0),
            link_inertia: DVector::zeros(0),
            total_mass: 0.0,
        };
        model.validate()?;
        model.cache();
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Model("model has no coordinates".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            if !(link.mass > 0.0) || !(link.inertia >= 0.0) || !(link.length > 0.0) {
                return Err(Error::Model(format!(
                    "link `{}` needs mass > 0, inertia >= 0 and length > 0",
                    link.name
                )));
            }
            if let Some(p) = link.parent {
                if p >= i {
                    return Err(Error::Model(format!(
                        "link `{}` must be listed after its parent",
                        link.name
                    )));
                }
            }
            if link.direction.abs() != 1.0 {
                return Err(Error::Model(format!("link `{}` direction must be +1 or -1", link.name)));
            }
        }
        for pm in &self.point_masses {
            if !(pm.mass > 0.0) {
                return Err(Error::Model(format!("point mass `{}` needs mass > 0", pm.name)));
            }
            if pm.link.is_some_and(|l| l >= self.links.len()) {
                return Err(Error::Model(format!("point mass `{}` on unknown link", pm.name)));
            }
        }
        for f in &self.frames {
            if f.link.is_some_and(|l| l >= self.links.len()) {
                return Err(Error::Model(format!("frame `{}` on unknown link", f.name)));
            }
        }
        if self.actuators.len() > n {
            return Err(Error::Model("more actuators than coordinates".into()));
        }
        for a in &self.actuators {
            if a.child >= self.links.len() || a.parent.is_some_and(|p| p >= self.links.len()) {
                return Err(Error::Model(format!("actuator `{}` references unknown link", a.name)));
            }
            if !(a.torque_limit > 0.0) {
                return Err(Error::Model(format!("actuator `{}` needs a positive torque limit", a.name)));
            }
        }
        if self.relabel.shape() != (n, n) {
            return Err(Error::Model(format!("relabel matrix must be {n}x{n}")));
        }
        for r in 0..n {
            let row = self.relabel.row(r);
            let nonzero: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
            if nonzero.len() != 1 || nonzero[0].abs() != 1.0 {
                return Err(Error::Model("relabel must be a signed permutation".into()));
            }
        }
        if (&self.relabel * &self.relabel - DMatrix::identity(n, n)).amax() > 0.0 {
            return Err(Error::Model("relabel must be an involution (R·R = I)".into()));
        }
        if self.joint_limits.len() != n {
            return Err(Error::Model("joint_limits must list every coordinate".into()));
        }
        for name in [&self.swing_foot, &self.hip].into_iter().flatten() {
            self.frame(name)?;
        }
        Ok(())
    }

    fn joint_coeffs(&self, link: usize) -> DVector<f64> {
        let nl = self.links.len();
        match self.links[link].parent {
            None => DVector::zeros(nl),
            Some(p) => {
                let mut a = self.joint_coeffs(p);
                a[p] += self.links[p].direction * self.links[link].attach;
                a
            }
        }
    }

    fn point_coeffs(&self, link: Option<usize>, offset: f64) -> DVector<f64> {
        match link {
            None => DVector::zeros(self.links.len()),
            Some(l) => {
                let mut a = self.joint_coeffs(l);
                a[l] += self.links[l].direction * offset;
                a
            }
        }
    }

    fn cache(&mut self) {
        let nl = self.links.len();
        let mut bodies = Vec::new();
        for (i, link) in self.links.iter().enumerate() {
            bodies.push(Body {
                link: Some(i),
                coeffs: self.point_coeffs(Some(i), link.com),
                mass: link.mass,
                inertia: link.inertia,
            });
        }
        for pm in &self.point_masses {
            bodies.push(Body {
                link: pm.link,
                coeffs: self.point_coeffs(pm.link, pm.offset),
                mass: pm.mass,
                inertia: 0.0,
            });
        }
        let mut coupling = DMatrix::zeros(nl, nl);
        let mut moments = DVector::zeros(nl);
        let mut total = 0.0;
        for b in &bodies {
            coupling += &b.coeffs * b.coeffs.transpose() * b.mass;
            moments += &b.coeffs * b.mass;
            total += b.mass;
        }
        self.link_inertia = DVector::from_iterator(nl, self.links.iter().map(|l| l.inertia));
        self.bodies = bodies;
        self.coupling = coupling;
        self.moments = moments;
        self.total_mass = total;
    }

    /// Number of generalized coordinates.
    pub fn n(&self) -> usize {
        self.links.len() + self.base.len()
    }

    /// Number of actuators.
    pub fn m(&self) -> usize {
        self.actuators.len()
    }

    pub fn is_pinned(&self) -> bool {
        self.base.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn frame(&self, name: &str) -> Result<&Frame> {
        self.frames
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::UnknownContact(name.to_string()))
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.actuators.iter().map(|a| a.torque_limit))
    }

    fn base_index(&self, axis: BaseAxis) -> Option<usize> {
        self.base.iter().position(|a| *a == axis).map(|i| self.links.len() + i)
    }

    fn base_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        let x = self.base_index(BaseAxis::X).map_or(0.0, |i| q[i]);
        let z = self.base_index(BaseAxis::Z).map_or(0.0, |i| q[i]);
        Vector2::new(x, z)
    }

    fn position_from(&self, coeffs: &DVector<f64>, q: &DVector<f64>) -> Vector2<f64> {
        let mut p = self.base_position(q);
        for (j, a) in coeffs.iter().enumerate() {
            if *a != 0.0 {
                p += unit(q[j]) * *a;
            }
        }
        p
    }

    fn jacobian_from(&self, coeffs: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, self.n());
        for (j, a) in coeffs.iter().enumerate() {
            let d = unit_derivative(q[j]) * *a;
            jac[(0, j)] = d.x;
            jac[(1, j)] = d.y;
        }
        if let Some(i) = self.base_index(BaseAxis::X) {
            jac[(0, i)] = 1.0;
        }
        if let Some(i) = self.base_index(BaseAxis::Z) {
            jac[(1, i)] = 1.0;
        }
        jac
    }

    fn check_state(&self, x: &State) -> Result<()> {
        check_dim("state q", self.n(), x.q.len())?;
        check_dim("state qd", self.n(), x.qd.len())?;
        check_finite("state q", x.q.as_slice())?;
        check_finite("state qd", x.qd.as_slice())
    }

    /// Position `(x, z)` of a named frame.
    pub fn frame_position(&self, name: &str, q: &DVector<f64>) -> Result<Vector2<f64>> {
        let f = self.frame(name)?;
        Ok(self.position_from(&self.point_coeffs(f.link, f.offset), q))
    }

    /// Full planar Jacobian (2×n) of a named frame.
    pub fn frame_jacobian(&self, name: &str, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = self.frame(name)?;
        Ok(self.jacobian_from(&self.point_coeffs(f.link, f.offset), q))
    }

    /// Jacobian of the holonomic constraint imposed by a contact frame
    /// (`n_c × n`, with `n_c` = 2 for a point foot).
    pub fn constraint_jacobian(&self, q: &DVector<f64>, contact: &str) -> Result<DMatrix<f64>> {
        check_dim("configuration", self.n(), q.len())?;
        let f = self.frame(contact)?;
        let full = self.jacobian_from(&self.point_coeffs(f.link, f.offset), q);
        Ok(match f.axes {
            ContactAxes::Xz => full,
            ContactAxes::Z => full.rows(1, 1).into_owned(),
        })
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let nl = self.links.len();
        let n = self.n();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..nl {
            for k in 0..nl {
                d[(j, k)] = self.coupling[(j, k)] * (q[j] - q[k]).cos();
            }
            d[(j, j)] += self.link_inertia[j];
        }
        let bx = self.base_index(BaseAxis::X);
        let bz = self.base_index(BaseAxis::Z);
        for j in 0..nl {
            if let Some(i) = bx {
                d[(j, i)] = self.moments[j] * q[j].cos();
                d[(i, j)] = d[(j, i)];
            }
            if let Some(i) = bz {
                d[(j, i)] = -self.moments[j] * q[j].sin();
                d[(i, j)] = d[(j, i)];
            }
        }
        for i in [bx, bz].into_iter().flatten() {
            d[(i, i)] = self.total_mass;
        }
        (&d + d.transpose()) * 0.5
    }

    /// Coriolis plus gravity vector `H(q, q̇)`.
    pub fn bias(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let nl = self.links.len();
        let g = self.gravity;
        let mut h = DVector::zeros(self.n());
        for j in 0..nl {
            let mut c = 0.0;
            for k in 0..nl {
                c += self.coupling[(j, k)] * (q[j] - q[k]).sin() * qd[k] * qd[k];
            }
            h[j] = c - g * self.moments[j] * q[j].sin();
        }
        if let Some(i) = self.base_index(BaseAxis::X) {
            h[i] = -(0..nl).map(|j| self.moments[j] * q[j].sin() * qd[j] * qd[j]).sum::<f64>();
        }
        if let Some(i) = self.base_index(BaseAxis::Z) {
            h[i] = -(0..nl).map(|j| self.moments[j] * q[j].cos() * qd[j] * qd[j]).sum::<f64>()
                + g * self.total_mass;
        }
        h
    }

    /// Actuation matrix `B` (n×m).
    pub fn actuation(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n(), self.m());
        for (k, a) in self.actuators.iter().enumerate() {
            b[(a.child, k)] += 1.0;
            if let Some(p) = a.parent {
                b[(p, k)] -= 1.0;
            }
        }
        b
    }

    pub fn dynamics_terms(&self, x: &State) -> Result<DynamicsTerms> {
        self.check_state(x)?;
        Ok(DynamicsTerms { d: self.mass_matrix(&x.q), h: self.bias(&x.q, &x.qd), b: self.actuation() })
    }

    /// `q̈ = D⁻¹(B u − H)`.
    pub fn forward_dynamics(&self, x: &State, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("torque", self.m(), u.len())?;
        let terms = self.dynamics_terms(x)?;
        let rhs = &terms.b * u - &terms.h;
        terms
            .d
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Singular { what: "mass matrix".into() })
    }

    pub fn kinetic_energy(&self, x: &State) -> f64 {
        0.5 * x.qd.dot(&(self.mass_matrix(&x.q) * &x.qd))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        self.bodies.iter().map(|b| b.mass * self.gravity * self.position_from(&b.coeffs, q).y).sum()
    }

    pub fn energy(&self, x: &State) -> f64 {
        self.kinetic_energy(x) + self.potential_energy(&x.q)
    }

    /// Angular momentum of the whole system about a fixed point, counter-clockwise
    /// positive in the (x, z) plane.
    pub fn angular_momentum_about(&self, x: &State, point: Vector2<f64>) -> f64 {
        let mut total = 0.0;
        for b in &self.bodies {
            let r = self.position_from(&b.coeffs, &x.q) - point;
            let v = self.jacobian_from(&b.coeffs, &x.q) * &x.qd;
            total += b.mass * (r.x * v[1] - r.y * v[0]);
            if let Some(l) = b.link {
                // absolute angles increase clockwise
                total -= b.inertia * x.qd[l];
            }
        }
        total
    }

    fn swing_frame(&self) -> Result<&str> {
        self.swing_foot
            .as_deref()
            .ok_or_else(|| Error::UnknownContact("swing_foot (model declares none)".into()))
    }

    pub fn swing_foot_name(&self) -> Result<&str> {
        self.swing_frame()
    }

    /// Swing-foot height and vertical velocity (plus the forward coordinates).
    pub fn swing_foot(&self, x: &State) -> Result<SwingFoot> {
        self.check_state(x)?;
        let name = self.swing_frame()?;
        let p = self.frame_position(name, &x.q)?;
        let v = self.frame_jacobian(name, &x.q)? * &x.qd;
        Ok(SwingFoot { height: p.y, vertical_velocity: v[1], forward: p.x, forward_velocity: v[0] })
    }

    /// Coefficients of the linearized forward hip position, `p_hip ≈ c·q`.
    pub fn hip_phase_coeffs(&self) -> Result<DVector<f64>> {
        let hip = self.hip.as_deref().ok_or_else(|| Error::Model("model declares no hip frame".into()))?;
        let f = self.frame(hip)?;
        let a = self.point_coeffs(f.link, f.offset);
        let mut c = DVector::zeros(self.n());
        c.rows_mut(0, self.links.len()).copy_from(&a);
        if let Some(i) = self.base_index(BaseAxis::X) {
            c[i] = 1.0;
        }
        Ok(c)
    }

    /// Hip position `(x, z)` relative to the stance foot.
    pub fn hip_position(&self, q: &DVector<f64>) -> Result<Vector2<f64>> {
        let hip = self.hip.as_deref().ok_or_else(|| Error::Model("model declares no hip frame".into()))?;
        self.frame_position(hip, q)
    }

    /// The same chain with a free planar base (x, z) appended. Pinned models only.
    pub fn floating(&self) -> Result<RobotModel> {
        if !self.is_pinned() {
            return Err(Error::Model(format!("model `{}` already has base coordinates", self.name)));
        }
        let n = self.n();
        let mut relabel = DMatrix::identity(n + 2, n + 2);
        relabel.view_mut((0, 0), (n, n)).copy_from(&self.relabel);
        let mut m = self.clone();
        m.name = format!("{}_floating", self.name);
        m.base = vec![BaseAxis::X, BaseAxis::Z];
        m.relabel = relabel;
        m.joint_limits.extend([(f64::NEG_INFINITY, f64::INFINITY); 2]);
        m.validate()?;
        m.cache();
        Ok(m)
    }

    /// Relative joint angles of the actuators, `y^a(q) = Bᵀ q`.
    pub fn actuated_angles(&self, q: &DVector<f64>) -> DVector<f64> {
        self.actuation().transpose() * q
    }
}
