//! Hybrid simulation: guard surfaces, the impact map and event-detecting
//! fixed-step RK4.
//!
//! Everything generic is written against [`HybridSystem`], a flow plus a
//! guard plus a reset on a flat state vector. [`Walker`] is the robot
//! instance; small analytic systems used in tests implement the same trait.

mod affine;
mod impact;
mod trace;
mod walker;

pub use affine::AffineHybrid;
pub use impact::{reset_map, ImpactMap, ImpactResult};
#[cfg(test)]
use impact::check_rank as impact_rank_check;
pub use trace::{Event, Sample, SimTrace, Termination, TRACE_SCHEMA_VERSION};
pub use walker::{guard_value, simulate_gait, simulate_gait_with, GuardSurface, SimOptions, Walker};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default RK4 step (s).
pub const DEFAULT_DT: f64 = 1e-4;
/// Events are localized until `|h| ≤ GUARD_TOL`.
pub const GUARD_TOL: f64 = 1e-10;
/// The guard must be crossed with `ḣ < −GUARD_RATE_TOL`.
pub const GUARD_RATE_TOL: f64 = 1e-12;
pub const MAX_BISECTIONS: usize = 50;

/// A hybrid system with one domain, one guard and one reset.
pub trait HybridSystem {
    /// State dimension.
    fn dim(&self) -> usize;

    fn flow(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Guard function `h`; an event fires where `h` falls through zero.
    fn guard(&self, x: &DVector<f64>) -> Result<f64>;

    fn guard_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut xp = x.clone();
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() {
            let h = 1e-7 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = self.guard(&xp)?;
            xp[i] = x[i] - h;
            let fm = self.guard(&xp)?;
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    /// `ḣ = ∇h · f`.
    fn guard_rate(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.guard_gradient(x)?.dot(&self.flow(x)?))
    }

    /// Whether a zero of the guard counts as an event here. Lets walkers
    /// ignore the swing foot brushing the ground beside the stance foot.
    fn guard_enabled(&self, _x: &DVector<f64>) -> Result<bool> {
        Ok(true)
    }

    /// Reset map `Δ`, applied without checking that `x` is on the guard.
    fn reset(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// A system whose guard is raised by `shift`: events fire at `h(x) = shift`.
pub struct ShiftedGuard<'s, S: ?Sized> {
    pub inner: &'s S,
    pub shift: f64,
}

impl<S: HybridSystem + ?Sized> HybridSystem for ShiftedGuard<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn flow(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.flow(x)
    }
    fn guard(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.inner.guard(x)? - self.shift)
    }
    fn guard_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.guard_gradient(x)
    }
    fn guard_enabled(&self, x: &DVector<f64>) -> Result<bool> {
        self.inner.guard_enabled(x)
    }
    fn reset(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.reset(x)
    }
}

/// Flat-ground, slope and step perturbations of the guard surface.
///
/// Offsets are relative to the current stance foot and repeat every step, so
/// a positive `step_height` is a staircase and a slope is a continuous incline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    /// Incline in degrees, positive uphill.
    #[serde(default)]
    pub slope_deg: f64,
    /// Height of the next foothold (m), positive up.
    #[serde(default)]
    pub step_height: f64,
    /// Per-step foothold heights; steps past the end use `step_height`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heights: Option<Vec<f64>>,
}

impl TerrainSpec {
    pub const MAX_SLOPE_DEG: f64 = 15.0;
    pub const MAX_STEP_HEIGHT: f64 = 0.2;

    pub fn flat() -> Self {
        Self::default()
    }

    pub fn slope(deg: f64) -> Self {
        Self { slope_deg: deg, ..Self::default() }
    }

    pub fn step(height: f64) -> Self {
        Self { step_height: height, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope_deg.abs() < Self::MAX_SLOPE_DEG) {
            return Err(Error::Config(format!("slope {}° outside ±{}°", self.slope_deg, Self::MAX_SLOPE_DEG)));
        }
        let heights = self.heights.iter().flatten().chain(std::iter::once(&self.step_height));
        for h in heights {
            if !(h.abs() < Self::MAX_STEP_HEIGHT) {
                return Err(Error::Config(format!("step height {h} m outside ±{} m", Self::MAX_STEP_HEIGHT)));
            }
        }
        Ok(())
    }

    /// Foothold offset for step `k` (0-based).
    pub fn offset(&self, k: usize) -> f64 {
        self.heights.as_ref().and_then(|h| h.get(k).copied()).unwrap_or(self.step_height)
    }

    pub fn guard_surface(&self, k: usize) -> GuardSurface {
        GuardSurface { offset: self.offset(k), slope: self.slope_deg.to_radians().tan() }
    }

    /// Short label such as `flat`, `slope+1deg` or `step-0.020m`.
    pub fn label(&self) -> String {
        match (self.slope_deg, self.step_height, &self.heights) {
            (_, _, Some(_)) => "sequence".to_string(),
            (s, 0.0, None) if s == 0.0 => "flat".to_string(),
            (s, 0.0, None) => format!("slope{s:+}deg"),
            (0.0, h, None) => format!("step{h:+.3}m"),
            (s, h, None) => format!("slope{s:+}deg_step{h:+.3}m"),
        }
    }
}

/// Options for [`integrate_until_event`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventOptions {
    pub dt: f64,
    /// Duration after which the segment gives up waiting for the guard.
    pub max_time: f64,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, max_time: 20.0 }
    }
}

/// How a flow segment ended.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentEnd {
    /// Guard reached at absolute time `t` in state `x`.
    Event { t: f64, x: DVector<f64>, guard: f64, guard_rate: f64 },
    /// `max_time` elapsed without an event.
    Timeout { t: f64, x: DVector<f64> },
    /// The step observer or the integrator stopped the run.
    Stopped { t: f64, x: DVector<f64>, reason: Termination, note: String },
}

pub fn rk4_step<S: HybridSystem + ?Sized>(sys: &S, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let k1 = sys.flow(x)?;
    let k2 = sys.flow(&(x + &k1 * (0.5 * dt)))?;
    let k3 = sys.flow(&(x + &k2 * (0.5 * dt)))?;
    let k4 = sys.flow(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates the flow for `duration` with no guard.
pub fn integrate_flow<S: HybridSystem + ?Sized>(sys: &S, x0: &DVector<f64>, duration: f64, dt: f64) -> Result<DVector<f64>> {
    if duration == 0.0 {
        return Ok(x0.clone());
    }
    let steps = (duration.abs() / dt).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let mut x = x0.clone();
    for _ in 0..steps {
        x = rk4_step(sys, &x, h)?;
    }
    Ok(x)
}

/// Fixed-step RK4 from `(t0, x0)` until the guard falls through zero.
///
/// A crossing counts when the guard is enabled at the end of the step, was
/// positive at its start and is non-positive at its end. The crossing is then
/// bisected on the step fraction until `|h| ≤ 1e-10`. If the guard becomes
/// enabled while already below zero the run stops as [`Termination::Fell`].
/// `on_step` sees every accepted state and may stop the run.
pub fn integrate_until_event<S, F>(sys: &S, x0: &DVector<f64>, t0: f64, opts: &EventOptions, mut on_step: F) -> Result<SegmentEnd>
where
    S: HybridSystem + ?Sized,
    F: FnMut(f64, &DVector<f64>) -> Result<Option<(Termination, String)>>,
{
    let mut x = x0.clone();
    let mut t = t0;
    let mut h = sys.guard(&x)?;
    if sys.guard_enabled(&x)? && h <= 0.0 {
        let rate = sys.guard_rate(&x)?;
        if rate < -GUARD_RATE_TOL {
            return Ok(SegmentEnd::Event { t, x, guard: h, guard_rate: rate });
        }
    }
    let t_end = t0 + opts.max_time;
    while t < t_end {
        let next = rk4_step(sys, &x, opts.dt)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(SegmentEnd::Stopped { t, x, reason: Termination::TorqueBlowup, note: "non-finite state".into() });
        }
        let h_next = sys.guard(&next)?;
        if sys.guard_enabled(&next)? && h_next <= 0.0 {
            if h <= 0.0 {
                return Ok(SegmentEnd::Stopped {
                    t: t + opts.dt,
                    x: next,
                    reason: Termination::Fell,
                    note: "swing foot below the guard surface when it became active".into(),
                });
            }
            let (s, xe, he) = bisect(sys, &x, h, opts.dt)?;
            let rate = sys.guard_rate(&xe)?;
            if !(rate < -GUARD_RATE_TOL) {
                return Ok(SegmentEnd::Stopped {
                    t: t + s * opts.dt,
                    x: xe,
                    reason: Termination::GuardMissed,
                    note: format!("grazing contact, guard rate {rate:e}"),
                });
            }
            return Ok(SegmentEnd::Event { t: t + s * opts.dt, x: xe, guard: he, guard_rate: rate });
        }
        t += opts.dt;
        x = next;
        h = h_next;
        if let Some((reason, note)) = on_step(t, &x)? {
            return Ok(SegmentEnd::Stopped { t, x, reason, note });
        }
    }
    Ok(SegmentEnd::Timeout { t, x })
}

/// Bisects the step fraction `s ∈ (0, 1]` for the guard zero inside one RK4 step.
fn bisect<S: HybridSystem + ?Sized>(sys: &S, xa: &DVector<f64>, ha: f64, dt: f64) -> Result<(f64, DVector<f64>, f64)> {
    let mut lo = (0.0, xa.clone(), ha);
    let xb = rk4_step(sys, xa, dt)?;
    let hb = sys.guard(&xb)?;
    let mut hi = (1.0, xb, hb);
    for _ in 0..MAX_BISECTIONS {
        if hi.2.abs() <= GUARD_TOL {
            return Ok(hi);
        }
        let s = 0.5 * (lo.0 + hi.0);
        let xm = rk4_step(sys, xa, s * dt)?;
        let hm = sys.guard(&xm)?;
        if hm > 0.0 {
            lo = (s, xm, hm);
        } else {
            hi = (s, xm, hm);
        }
    }
    Ok(if lo.2.abs() < hi.2.abs() { lo } else { hi })
}
