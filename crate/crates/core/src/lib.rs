//! Social trust from phone communication logs.
//!
//! The pipeline ingests survey-result documents ([`ingest`]), derives
//! per-partner indicators ([`features`]), calibrates and applies the
//! quantile-threshold trust metric ([`trustmetric`]), and uses the resulting
//! per-contact predictions to let two devices estimate trust in each other
//! from their mutual contacts ([`psi`], [`simnet`]).

pub mod closeness;
pub mod datamodel;
pub mod features;
pub mod ingest;
pub mod psi;
pub mod simnet;
pub mod statistics;
pub mod trustmetric;

pub use datamodel::{
    validate_log, CallDirection, CallRecord, FeatureVector, MessageDirection, MessageRecord, ParticipantLog,
    PartnerRecord, Rating, RatingKind, TrustLevel, Violation, ViolationCode,
};
pub use features::{extract_all, extract_features, Variable};
pub use ingest::{FilterPolicy, InteractionClass};
pub use psi::{ContactToken, TrustEstimate};
pub use trustmetric::{Band, Combinator, Predictor, QuantileTable, ThresholdRule, TrustPrediction};
