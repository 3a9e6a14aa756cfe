use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ImpactResult;
use crate::error::Result;
use crate::rigid_body::State;

pub const TRACE_SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: State,
    pub u: DVector<f64>,
    pub guard: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    /// 0-based index of the step that ended here.
    pub step: usize,
    pub guard: f64,
    pub guard_rate: f64,
    pub impact: ImpactResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Fell,
    GuardMissed,
    TorqueBlowup,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Fell => "fell",
            Termination::GuardMissed => "guard_missed",
            Termination::TorqueBlowup => "torque_blowup",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub model: String,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: Termination,
    /// Why the run stopped early, if it did.
    pub note: Option<String>,
}

impl SimTrace {
    pub fn new(model: &str) -> Self {
        Self { model: model.to_string(), samples: Vec::new(), events: Vec::new(), termination: Termination::Completed, note: None }
    }

    /// Number of completed steps (impacts).
    pub fn steps(&self) -> usize {
        self.events.len()
    }

    pub fn saturated_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.saturated).count()
    }

    fn dims(&self) -> (usize, usize) {
        self.samples.first().map_or((0, 0), |s| (s.x.dim(), s.u.len()))
    }

    /// Sample table: a schema comment line, then `t,q0..,qd0..,u0..,guard`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# saltwalk trace schema {TRACE_SCHEMA_VERSION} model {}", self.model)?;
        let (n, m) = self.dims();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        header.extend((0..n).map(|i| format!("qd{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.push("guard".into());
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.x.q.iter().chain(s.x.qd.iter()).chain(s.u.iter()).map(f64::to_string));
            row.push(s.guard.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Event table: `step,t,guard,guard_rate`, pre- and post-impact states, impulse.
    pub fn write_events_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# saltwalk events schema {TRACE_SCHEMA_VERSION} model {} termination {}", self.model, self.termination)?;
        let mut w = csv::Writer::from_writer(out);
        let (n, nc) = self
            .events
            .first()
            .map_or((0, 0), |e| (e.impact.pre_state.dim(), e.impact.impulse.len()));
        let mut header: Vec<String> = ["step", "t", "guard", "guard_rate"].iter().map(|s| s.to_string()).collect();
        for prefix in ["pre_q", "pre_qd", "post_q", "post_qd"] {
            header.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        header.extend((0..nc).map(|i| format!("impulse{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.events {
            let mut row = vec![e.step.to_string(), e.t.to_string(), e.guard.to_string(), e.guard_rate.to_string()];
            let i = &e.impact;
            row.extend(
                i.pre_state.q.iter()
                    .chain(i.pre_state.qd.iter())
                    .chain(i.x_plus.q.iter())
                    .chain(i.x_plus.qd.iter())
                    .chain(i.impulse.iter())
                    .map(f64::to_string),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `path` and the event sidecar `<stem>.events.csv`; returns the sidecar path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        let sidecar = events_path(path);
        self.write_events_csv(std::io::BufWriter::new(std::fs::File::create(&sidecar)?))?;
        Ok(sidecar)
    }
}

pub(crate) fn events_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    path.with_file_name(format!("{stem}.events.csv"))
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}
