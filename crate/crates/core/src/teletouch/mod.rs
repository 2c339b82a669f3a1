//! Tele-palpation: wire protocol, relay, local and remote sites, and the
//! simulated phantom under the remote probe.

pub mod phantom;
pub mod relay;
pub mod scan;
pub mod sites;
pub mod wire;

use thiserror::Error;

use crate::control::ControlError;
use crate::unit::SimError;

pub use phantom::{probe_sample, Boundary, Inclusion, Material, Phantom, ProbeSample, SurfaceProfile};
pub use relay::{start_relay, RelayConfig, RelayHandle};
pub use sites::{LatencyStats, LocalSite, RemoteConfig, RemoteSite, ScanRecord, LATENCY_BUDGET_S};
pub use wire::{Frame, PoseFrame, Role, TactileFrame, WireError};

#[derive(Debug, Error)]
pub enum TeleError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid phantom: {0}")]
    Phantom(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<ControlError> for TeleError {
    fn from(e: ControlError) -> Self {
        TeleError::Sim(e.into())
    }
}
