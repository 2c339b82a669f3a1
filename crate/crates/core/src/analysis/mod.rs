//! System identification and evaluation toolkit.

pub mod annotations;
pub mod calibrate;
pub mod csv;
pub mod fd;
pub mod fit;
pub mod metrics;
pub mod step;
pub mod sweep;

use thiserror::Error;

use crate::control::ControlError;
use crate::shore::ShoreError;
use crate::unit::SimError;

pub use annotations::{AnnotationExport, Mark, Timestamp};
pub use calibrate::{calibrate_plant, calibrate_shore, PlantCalibration, ShoreCalibration, ShoreConfig};
pub use fd::{force_displacement_curve, FdConfig, FdCurve, FdPoint};
pub use metrics::{iou, kendall_tau, localization_error, sus_score, LocalizationError};
pub use step::{step_response, StepConfig, StepMetrics, StepResult};
pub use sweep::{frequency_sweep, BodePoint, BodeResult, LoopKind, SweepConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("insufficient data: need {needed}, got {got}")]
    Insufficient { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("response diverged: {0}")]
    Divergence(String),
    #[error("target {target_hz} Hz is outside the reachable range {lo_hz:.2}..{hi_hz:.2} Hz")]
    Unreachable { target_hz: f64, lo_hz: f64, hi_hz: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Shore(#[from] ShoreError),
}
