use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_sim::{integrate_flow, integrate_until_event, EventOptions, HybridSystem, SegmentEnd, ShiftedGuard, DEFAULT_DT};
use crate::saltation::extended_saltation;

/// Seed used when none is given. Directions come from a ChaCha8 stream.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Errors `‖δx⁺_sim − (Se·δ)_x‖` for every `(ε, direction)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub epsilons: Vec<f64>,
    /// `errors[i][j]` for `epsilons[i]` and direction `j`; `None` if dropped.
    pub errors: Vec<Vec<Option<f64>>>,
    /// Mean over the kept directions, per `ε`.
    pub mean_errors: Vec<f64>,
    /// Least-squares slope of `log(mean error)` against `log ε`.
    pub slope: f64,
    /// `(ε index, direction index, reason)` for every dropped sample.
    pub dropped: Vec<(usize, usize, String)>,
}

/// Time-reversed flow with the guard sign flipped, so that integrating it
/// forward finds where the original trajectory crossed `h = shift` in the past.
struct Reversed<'s, S: ?Sized> {
    inner: &'s S,
    shift: f64,
}

impl<S: HybridSystem + ?Sized> HybridSystem for Reversed<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn flow(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.inner.flow(x)?)
    }
    fn guard(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.shift - self.inner.guard(x)?)
    }
    fn guard_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.inner.guard_gradient(x)?)
    }
    fn guard_rate(&self, x: &DVector<f64>) -> Result<f64> {
        self.inner.guard_rate(x)
    }
    fn guard_enabled(&self, x: &DVector<f64>) -> Result<bool> {
        self.inner.guard_enabled(x)
    }
    fn reset(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.reset(x)
    }
}

/// Post-impact state at time 0 of the trajectory through `x` (at time 0)
/// whose guard is raised by `shift`: flow to the shifted guard, forward or
/// backward, apply the reset and flow back to time 0.
fn perturbed_post_state<S: HybridSystem + ?Sized>(sys: &S, x: &DVector<f64>, shift: f64, dt: f64) -> Result<DVector<f64>> {
    let opts = EventOptions { dt, max_time: 1.0 };
    let (t_hit, x_hit) = if sys.guard(x)? - shift > 0.0 {
        match integrate_until_event(&ShiftedGuard { inner: sys, shift }, x, 0.0, &opts, |_, _| Ok(None))? {
            SegmentEnd::Event { t, x, .. } => (t, x),
            other => return Err(Error::Config(format!("perturbed orbit missed the guard: {other:?}"))),
        }
    } else {
        match integrate_until_event(&Reversed { inner: sys, shift }, x, 0.0, &opts, |_, _| Ok(None))? {
            SegmentEnd::Event { t, x, .. } => (-t, x),
            other => return Err(Error::Config(format!("perturbed orbit missed the guard backwards: {other:?}"))),
        }
    };
    let rate = sys.guard_rate(&x_hit)?;
    if rate.abs() < crate::saltation::TRANSVERSALITY_TOL {
        return Err(Error::Grazing(rate));
    }
    integrate_flow(sys, &sys.reset(&x_hit)?, -t_hit, dt)
}

/// Compares simulated post-impact variations against the first-order
/// prediction `Se·(δx⁻, δ_h)` for `directions` seeded random unit directions
/// at each `ε`. The log–log slope of the error is 2 when the saltation
/// matrix is the correct linearization.
pub fn first_order_validation<S: HybridSystem + ?Sized>(
    sys: &S,
    x_minus: &DVector<f64>,
    epsilons: &[f64],
    directions: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    let positive: Vec<f64> = epsilons.iter().copied().filter(|e| *e > 0.0).collect();
    if let (Some(lo), Some(hi)) = (positive.iter().copied().reduce(f64::min), positive.iter().copied().reduce(f64::max)) {
        if hi / lo < 10.0 {
            return Err(Error::Config("epsilons must span at least one decade".into()));
        }
    } else {
        return Err(Error::Config("need at least two positive epsilons".into()));
    }
    let d = sys.dim();
    let bundle = extended_saltation(sys, x_minus)?;
    let nominal = sys.reset(x_minus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<DVector<f64>> = (0..directions)
        .map(|_| DVector::from_fn(d + 1, |_, _| StandardNormal.sample(&mut rng)).normalize())
        .collect();

    let mut errors = Vec::with_capacity(epsilons.len());
    let mut dropped = Vec::new();
    for (i, &eps) in epsilons.iter().enumerate() {
        let mut row = Vec::with_capacity(directions);
        for (j, dir) in dirs.iter().enumerate() {
            if eps == 0.0 {
                row.push(Some(0.0));
                continue;
            }
            let delta = dir * eps;
            let x = x_minus + delta.rows(0, d);
            match perturbed_post_state(sys, &x, delta[d], DEFAULT_DT) {
                Ok(post) => {
                    let predicted = (&bundle.se * &delta).rows(0, d).into_owned();
                    row.push(Some((post - &nominal - predicted).norm()));
                }
                Err(e) => {
                    dropped.push((i, j, e.to_string()));
                    row.push(None);
                }
            }
        }
        errors.push(row);
    }
    let mean_errors: Vec<f64> = errors
        .iter()
        .map(|row| {
            let kept: Vec<f64> = row.iter().flatten().copied().collect();
            if kept.is_empty() { f64::NAN } else { kept.iter().sum::<f64>() / kept.len() as f64 }
        })
        .collect();
    let pts: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(&mean_errors)
        .filter(|(e, m)| **e > 0.0 && **m > 0.0 && m.is_finite())
        .map(|(e, m)| (e.ln(), m.ln()))
        .collect();
    let slope = fit_slope(&pts);
    Ok(ConvergenceTable { epsilons: epsilons.to_vec(), errors, mean_errors, slope, dropped })
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `count` values spaced evenly in `log ε` between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp()).collect()
}
