//! The `--config` file: plant constants plus optional controller settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlError, ControllerConfig, PenaltyOrder};
use crate::plant::{PlantError, PlantParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub plant: PlantParams,
    /// Omitted: gains tuned for `plant`.
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: SimConfig = serde_json::from_str(text)?;
        c.plant.validate()?;
        if let Some(ctrl) = &c.controller {
            ctrl.validate()?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn controller(&self) -> ControllerConfig {
        self.controller.unwrap_or_else(|| ControllerConfig::for_plant(&self.plant))
    }

    pub fn with_penalty_order(mut self, order: Option<PenaltyOrder>) -> Self {
        if let Some(order) = order {
            let mut c = self.controller();
            c.penalty_order = order;
            self.controller = Some(c);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        let c = SimConfig::from_json("{}").unwrap();
        assert_eq!(c.plant, PlantParams::default());
        assert_eq!(c.controller(), ControllerConfig::for_plant(&c.plant));
    }

    #[test]
    fn round_trips_and_rejects_unknown() {
        let c = SimConfig::default().with_penalty_order(Some(PenaltyOrder::Cubic));
        let back = SimConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.controller().penalty_order, PenaltyOrder::Cubic);
        assert!(SimConfig::from_json(r#"{"plnat":{}}"#).is_err());
    }
}
