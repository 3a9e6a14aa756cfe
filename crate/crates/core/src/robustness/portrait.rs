use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hybrid_sim::SimTrace;
use crate::rigid_body::RobotModel;

pub const PORTRAIT_SCHEMA_VERSION: &str = "1.0";

/// Points per step on the common grid used for the band.
const GRID: usize = 50;

/// Forward hip position and velocity relative to the stance foot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortraitPoint {
    pub step: usize,
    pub t: f64,
    pub hip_x: f64,
    pub hip_v: f64,
}

/// Mean and standard deviation across complete steps at one fraction of the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub fraction: f64,
    pub mean_x: f64,
    pub std_x: f64,
    pub mean_v: f64,
    pub std_v: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhasePortrait {
    pub model: String,
    pub points: Vec<PortraitPoint>,
    pub band: Vec<BandPoint>,
    /// RMS distance of each complete step's curve from the band mean.
    pub step_deviation: Vec<f64>,
}

impl PhasePortrait {
    /// Widest standard deviation anywhere in the band.
    pub fn max_band_width(&self) -> f64 {
        self.band.iter().map(|b| b.std_x.max(b.std_v)).fold(0.0, f64::max)
    }

    /// Writes the points to `path` and the band to `<stem>.band.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = format!("# saltwalk phase portrait schema {PORTRAIT_SCHEMA_VERSION} model {}\n", self.model);
        let mut f = std::fs::File::create(path)?;
        f.write_all(header.as_bytes())?;
        let mut w = csv::Writer::from_writer(f);
        for p in &self.points {
            w.serialize(p).map_err(csv_error)?;
        }
        w.flush()?;
        let mut f = std::fs::File::create(band_path(path))?;
        f.write_all(header.as_bytes())?;
        let mut w = csv::Writer::from_writer(f);
        for b in &self.band {
            w.serialize(b).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> crate::Error {
    crate::Error::Parse(e.to_string())
}

pub fn band_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("portrait");
    path.with_file_name(format!("{stem}.band.csv"))
}

/// Zero-dynamics phase portrait of a trace: hip position against hip
/// velocity, split by step, with a mean curve and 1σ band over the complete
/// steps (each resampled on a common grid of step fractions).
pub fn phase_portrait(model: &RobotModel, trace: &SimTrace) -> Result<PhasePortrait> {
    let hip = model.hip.as_deref().ok_or_else(|| crate::Error::Model("model declares no hip frame".into()))?;
    let mut points = Vec::with_capacity(trace.samples.len());
    let mut step = 0;
    for s in &trace.samples {
        while step < trace.events.len() && s.t > trace.events[step].t {
            step += 1;
        }
        let p = model.frame_position(hip, &s.x.q)?;
        let v = model.frame_jacobian(hip, &s.x.q)? * &s.x.qd;
        points.push(PortraitPoint { step, t: s.t, hip_x: p.x, hip_v: v[0] });
    }

    let complete: Vec<Vec<PortraitPoint>> = (0..trace.events.len())
        .map(|k| points.iter().copied().filter(|p| p.step == k).collect::<Vec<_>>())
        .filter(|c| c.len() >= 2)
        .collect();
    let curves: Vec<Vec<(f64, f64)>> = complete.iter().map(|c| resample(c)).collect();
    let mut band = Vec::new();
    if !curves.is_empty() {
        let count = curves.len() as f64;
        for g in 0..GRID {
            let xs = curves.iter().map(|c| c[g].0);
            let vs = curves.iter().map(|c| c[g].1);
            let (mean_x, std_x) = mean_std(xs, count);
            let (mean_v, std_v) = mean_std(vs, count);
            band.push(BandPoint { fraction: g as f64 / (GRID - 1) as f64, mean_x, std_x, mean_v, std_v });
        }
    }
    let step_deviation = curves
        .iter()
        .map(|c| {
            let ss: f64 = c.iter().zip(&band).map(|(p, b)| (p.0 - b.mean_x).powi(2) + (p.1 - b.mean_v).powi(2)).sum();
            (ss / GRID as f64).sqrt()
        })
        .collect();
    Ok(PhasePortrait { model: model.name.clone(), points, band, step_deviation })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, count: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    (mean, var.sqrt())
}

/// Linear interpolation of one step's curve at `GRID` evenly spaced times.
fn resample(curve: &[PortraitPoint]) -> Vec<(f64, f64)> {
    let t0 = curve[0].t;
    let t1 = curve[curve.len() - 1].t;
    let mut j = 0;
    (0..GRID)
        .map(|g| {
            let t = t0 + (t1 - t0) * g as f64 / (GRID - 1) as f64;
            while j + 2 < curve.len() && curve[j + 1].t < t {
                j += 1;
            }
            let (a, b) = (&curve[j], &curve[j + 1]);
            let s = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
            (a.hip_x + s * (b.hip_x - a.hip_x), a.hip_v + s * (b.hip_v - a.hip_v))
        })
        .collect()
}
