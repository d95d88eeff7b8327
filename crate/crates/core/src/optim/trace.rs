use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::math::{distance, Vector};

/// How much of a run to record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub enum TraceLevel {
    Off,
    /// One record at the end of each phase (single-pass methods have one phase).
    #[default]
    Phase,
    /// One record per oracle step.
    Step,
}

/// A trace line. `spent` is in the ledger's unit: `ρ` for zCDP runs, `ε`
/// for approximate-DP runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: u64,
    pub phase: u32,
    /// NaN when the config has no reference point.
    pub distance_to_reference: f64,
    #[serde(rename = "rho_spent")]
    pub spent: f64,
    pub clip: f64,
    pub sigma2: f64,
}

/// Records and warnings collected during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<String>,
}

impl RunTrace {
    /// CSV with header `step,phase,distance_to_reference,rho_spent,clip,sigma2`.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            writer.serialize(r)?;
        }
        if self.records.is_empty() {
            writer.write_record(["step", "phase", "distance_to_reference", "rho_spent", "clip", "sigma2"])?;
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }
}

/// Accumulates trace records for one run.
pub(crate) struct Recorder<'a> {
    level: TraceLevel,
    reference: Option<&'a Vector>,
    step: u64,
    pub(crate) trace: RunTrace,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(level: TraceLevel, reference: Option<&'a Vector>) -> Self {
        Recorder {
            level,
            reference,
            step: 0,
            trace: RunTrace::default(),
        }
    }

    fn record(&mut self, phase: u32, w: &[f64], spent: f64, clip: f64, sigma2: f64) {
        let distance_to_reference = self.reference.map_or(f64::NAN, |r| distance(w, r));
        self.trace.records.push(TraceRecord {
            step: self.step,
            phase,
            distance_to_reference,
            spent,
            clip,
            sigma2,
        });
    }

    pub(crate) fn step(&mut self, phase: u32, w: &[f64], spent: f64, clip: f64, sigma2: f64) {
        self.step += 1;
        if self.level == TraceLevel::Step {
            self.record(phase, w, spent, clip, sigma2);
        }
    }

    pub(crate) fn phase_end(&mut self, phase: u32, w: &[f64], spent: f64, clip: f64, sigma2: f64) {
        if self.level == TraceLevel::Phase {
            self.record(phase, w, spent, clip, sigma2);
        }
    }

    pub(crate) fn warn(&mut self, message: String) {
        self.trace.warnings.push(message);
    }
}
