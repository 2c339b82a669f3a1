//! Operator annotations exported from the console and scored by `metrics loc`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{localization_error, LocalizationError};
use super::AnalysisError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    /// Workspace millimeters.
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub label: String,
}

/// Export time as either Unix milliseconds or an ISO 8601 string; the
/// browser produces whichever it likes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Timestamp {
    UnixMs(u64),
    Text(String),
}

impl Timestamp {
    pub fn now() -> Self {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Timestamp::UnixMs(ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationExport {
    pub marks: Vec<Mark>,
    pub scene_id: String,
    pub timestamp: Timestamp,
}

impl AnnotationExport {
    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path).map_err(|e| AnalysisError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AnalysisError::Input(format!("{}: {e}", path.display())))
    }

    pub fn points_mm(&self) -> Vec<(f64, f64)> {
        self.marks.iter().map(|m| (m.x, m.y)).collect()
    }

    /// Localization error of the marks against known centers (mm).
    pub fn score(&self, truths_mm: &[(f64, f64)]) -> Result<LocalizationError, AnalysisError> {
        localization_error(&self.points_mm(), truths_mm)
    }
}
