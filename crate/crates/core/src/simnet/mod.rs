//! Discrete-event simulation of devices establishing trust over a lossy
//! network.

mod population;
mod protocol;
mod scenario;

use thiserror::Error;

use crate::psi::PsiError;

pub use population::{generate_population, Device, DeviceProfile, SimConfig, SpanDistribution};
pub use protocol::{
    run_pairwise, trace_is_well_ordered, Envelope, FailureReason, Fault, HelloPayload, MessageKind, NetConfig,
    PairwiseRun, ProtocolEvent, ProtocolState, SaltConfirmPayload, Side, TokensPayload, TraceKind,
};
pub use scenario::{run_scenario, run_scenario_on, GAP_BUCKETS, PairOutcome, PairingPlan, ScenarioOptions, ScenarioReport, ScenarioSummary};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("side {side:?} gave up retransmitting {message:?}")]
    ProtocolTimeout { side: Side, message: MessageKind },
    #[error("session salt confirmation did not match")]
    SaltMismatch,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol stalled before both sides finished")]
    Stalled,
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error(transparent)]
    Psi(#[from] PsiError),
}
