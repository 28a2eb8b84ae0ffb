//! Dataset ingestion, synthetic scenarios, configuration and the estimation
//! pipeline that ties the filter, adaptive layer and evaluation together.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod sim;

use crate::adaptive::{GrayscaleFrame, QualityMetrics};
use crate::dynamics::{ImuSample, Vec3};
use crate::error::{Error, Result};
use crate::evaluation::TrajectorySample;

pub use config::RunConfig;
pub use pipeline::{compare_modes, run_pipeline, sweep, RunOutput};
pub use sim::{simulate, ScenarioSpec};

/// Position and velocity from the visual front-end with its quality
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualMeasurement {
    pub t: i64,
    pub p_vis: Vec3,
    pub v_vis: Vec3,
    pub metrics: QualityMetrics,
}

/// True IMU biases at a ground-truth timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuBias {
    pub b_a: Vec3,
    pub b_g: Vec3,
}

/// Everything needed to run and score one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceBundle {
    pub name: String,
    pub imu: Vec<ImuSample>,
    pub ground_truth: Vec<TrajectorySample>,
    /// Either empty or one entry per ground-truth sample.
    pub gt_biases: Vec<ImuBias>,
    pub vo: Vec<VisualMeasurement>,
    pub frames: Vec<GrayscaleFrame>,
}

fn strictly_increasing(ts: impl Iterator<Item = i64>) -> bool {
    let mut prev = None;
    for t in ts {
        if prev.is_some_and(|p| t <= p) {
            return false;
        }
        prev = Some(t);
    }
    true
}

impl SequenceBundle {
    pub fn validate(&self) -> Result<()> {
        if self.imu.is_empty() {
            return Err(Error::InsufficientData(format!("sequence '{}' has no IMU data", self.name)));
        }
        let checks = [
            ("imu", strictly_increasing(self.imu.iter().map(|s| s.t))),
            ("ground truth", strictly_increasing(self.ground_truth.iter().map(|s| s.t))),
            ("vo", strictly_increasing(self.vo.iter().map(|s| s.t))),
            ("frames", strictly_increasing(self.frames.iter().map(|f| f.t))),
        ];
        if let Some((stream, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::Data(format!(
                "sequence '{}': {stream} timestamps are not strictly increasing",
                self.name
            )));
        }
        if !self.gt_biases.is_empty() && self.gt_biases.len() != self.ground_truth.len() {
            return Err(Error::Data(format!(
                "sequence '{}': {} bias rows for {} ground-truth rows",
                self.name,
                self.gt_biases.len(),
                self.ground_truth.len()
            )));
        }
        Ok(())
    }

    /// Seconds between the first and last IMU sample.
    pub fn duration(&self) -> f64 {
        match (self.imu.first(), self.imu.last()) {
            (Some(a), Some(b)) => (b.t - a.t) as f64 * 1e-9,
            _ => 0.0,
        }
    }
}
