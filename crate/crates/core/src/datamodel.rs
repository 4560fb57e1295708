//! Domain types shared by every stage of the pipeline, plus log validation.
//!
//! All types are plain values: once built they are never mutated in place by
//! the library, so they can be shared freely between threads.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Direction of a logged call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallDirection {
    #[serde(rename = "in")]
    Incoming,
    #[serde(rename = "out")]
    Outgoing,
    #[serde(rename = "missed")]
    Missed,
}

/// Direction of a logged text message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageDirection {
    #[serde(rename = "in")]
    Incoming,
    #[serde(rename = "out")]
    Outgoing,
}

impl CallDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            CallDirection::Incoming => "in",
            CallDirection::Outgoing => "out",
            CallDirection::Missed => "missed",
        }
    }
}

impl MessageDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageDirection::Incoming => "in",
            MessageDirection::Outgoing => "out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    /// Seconds before the survey run, shifted by a per-participant offset.
    pub relative_date: u64,
    pub direction: CallDirection,
    /// Duration in whole seconds. Always 0 for missed calls.
    pub duration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub relative_date: u64,
    pub direction: MessageDirection,
    /// Length in characters, at least 1.
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// A Likert response in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TrustLevel(u8);

impl TrustLevel {
    pub const MIN: TrustLevel = TrustLevel(1);
    pub const MAX: TrustLevel = TrustLevel(5);

    pub fn new(level: u8) -> Option<Self> {
        (1..=5).contains(&level).then_some(TrustLevel(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// All levels, highest first (the row order of rating tables).
    pub fn descending() -> impl Iterator<Item = TrustLevel> {
        (1..=5).rev().map(TrustLevel)
    }
}

impl TryFrom<u8> for TrustLevel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        TrustLevel::new(value).ok_or_else(|| format!("trust level {value} outside 1..=5"))
    }
}

impl From<TrustLevel> for u8 {
    fn from(level: TrustLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which of the three survey statements a rating answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingKind {
    /// Felt closeness to the partner.
    Closeness,
    /// Willingness to share private data with the partner.
    #[default]
    TrustInfo,
    /// Belief in the partner's goodwill.
    TrustBest,
}

impl RatingKind {
    pub const ALL: [RatingKind; 3] = [RatingKind::Closeness, RatingKind::TrustInfo, RatingKind::TrustBest];

    pub fn name(self) -> &'static str {
        match self {
            RatingKind::Closeness => "closeness",
            RatingKind::TrustInfo => "trust_info",
            RatingKind::TrustBest => "trust_best",
        }
    }
}

/// Raw survey answers for one partner. Values are kept as given so that
/// out-of-range answers can be reported by [`validate_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rating {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closeness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_info: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_best: Option<u8>,
}

impl Rating {
    pub fn uniform(level: TrustLevel) -> Self {
        Rating {
            closeness: Some(level.get()),
            trust_info: Some(level.get()),
            trust_best: Some(level.get()),
        }
    }

    pub fn raw(&self, kind: RatingKind) -> Option<u8> {
        match kind {
            RatingKind::Closeness => self.closeness,
            RatingKind::TrustInfo => self.trust_info,
            RatingKind::TrustBest => self.trust_best,
        }
    }

    /// The answer for `kind`, if present and in range.
    pub fn level(&self, kind: RatingKind) -> Option<TrustLevel> {
        self.raw(kind).and_then(TrustLevel::new)
    }

    pub fn is_empty(&self) -> bool {
        self.closeness.is_none() && self.trust_info.is_none() && self.trust_best.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerRecord {
    /// Salted hash of the original number; never the number itself.
    pub partner_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_position: Option<u8>,
    #[serde(default)]
    pub rating: Rating,
    pub is_human: bool,
    pub is_favorite: bool,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
    #[serde(default)]
    pub messages: Vec<MessageRecord>,
}

impl PartnerRecord {
    /// Combined number of calls and messages.
    pub fn interaction_count(&self) -> usize {
        self.calls.len() + self.messages.len()
    }

    fn dates(&self) -> impl Iterator<Item = u64> + '_ {
        self.calls
            .iter()
            .map(|c| c.relative_date)
            .chain(self.messages.iter().map(|m| m.relative_date))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantLog {
    pub participant_id: String,
    pub address_book_size: u64,
    pub total_calls: u64,
    pub total_messages: u64,
    #[serde(default)]
    pub active_partners: u64,
    pub partners: Vec<PartnerRecord>,
}

impl ParticipantLog {
    /// Days between the oldest and newest logged event, or `None` for a log
    /// without events. The per-participant date offset cancels out.
    pub fn log_span_days(&self) -> Option<f64> {
        let mut dates = self.partners.iter().flat_map(PartnerRecord::dates);
        let first = dates.next()?;
        let (lo, hi) = dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d)));
        Some((hi - lo) as f64 / SECONDS_PER_DAY)
    }

    pub fn partner(&self, partner_id: &str) -> Option<&PartnerRecord> {
        self.partners.iter().find(|p| p.partner_id == partner_id)
    }

    pub fn logged_calls(&self) -> usize {
        self.partners.iter().map(|p| p.calls.len()).sum()
    }

    pub fn logged_messages(&self) -> usize {
        self.partners.iter().map(|p| p.messages.len()).sum()
    }

    pub fn has_any_rating(&self) -> bool {
        self.partners.iter().any(|p| !p.rating.is_empty())
    }
}

/// Machine-readable reason a log breaks an invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    MissedCallWithDuration,
    NonPositiveMessageLength,
    RatingOutOfRange,
    SurveyPositionOutOfRange,
    PartnerWithoutEvents,
    NonHumanRated,
    DuplicatePartnerId,
    GeneralSectionUndercount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Location in document notation, e.g. `partners[2].messages[0].length`.
    pub path: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}", self.code, self.path)
    }
}

/// Returns every invariant breach in `log`, in document order. An empty list
/// means the log is valid.
pub fn validate_log(log: &ParticipantLog) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, path: String| out.push(Violation { code, path });
    let mut seen = BTreeSet::new();

    for (i, partner) in log.partners.iter().enumerate() {
        let base = format!("partners[{i}]");
        if !seen.insert(partner.partner_id.as_str()) {
            push(ViolationCode::DuplicatePartnerId, format!("{base}.id"));
        }
        if let Some(pos) = partner.survey_position {
            if !(1..=20).contains(&pos) {
                push(ViolationCode::SurveyPositionOutOfRange, format!("{base}.surveyPosition"));
            }
        }
        for kind in RatingKind::ALL {
            if let Some(v) = partner.rating.raw(kind) {
                if TrustLevel::new(v).is_none() {
                    push(ViolationCode::RatingOutOfRange, format!("{base}.rating.{}", doc_rating_key(kind)));
                }
            }
        }
        if !partner.is_human && !partner.rating.is_empty() {
            push(ViolationCode::NonHumanRated, format!("{base}.rating"));
        }
        if partner.interaction_count() == 0 {
            push(ViolationCode::PartnerWithoutEvents, base.clone());
        }
        for (j, call) in partner.calls.iter().enumerate() {
            if call.direction == CallDirection::Missed && call.duration != 0 {
                push(ViolationCode::MissedCallWithDuration, format!("{base}.calls[{j}].duration"));
            }
        }
        for (j, msg) in partner.messages.iter().enumerate() {
            if msg.length == 0 {
                push(ViolationCode::NonPositiveMessageLength, format!("{base}.messages[{j}].length"));
            }
        }
    }

    if log.logged_calls() as u64 > log.total_calls {
        push(ViolationCode::GeneralSectionUndercount, "general.totalCalls".into());
    }
    if log.logged_messages() as u64 > log.total_messages {
        push(ViolationCode::GeneralSectionUndercount, "general.totalMessages".into());
    }
    out
}

pub(crate) fn doc_rating_key(kind: RatingKind) -> &'static str {
    match kind {
        RatingKind::Closeness => "closeness",
        RatingKind::TrustInfo => "trustInfo",
        RatingKind::TrustBest => "trustBest",
    }
}

/// Per-partner communication indicators, both absolute and relative.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub num_calls: u64,
    pub num_msgs: u64,
    /// Summed call duration in seconds.
    pub dur_calls: u64,
    /// Summed message length in characters.
    pub len_msgs: u64,
    /// Share of the participant's logged calls, in percent.
    pub rel_calls: f64,
    /// Share of the participant's logged messages, in percent.
    pub rel_msgs: f64,
    pub avg_call_dur: f64,
    pub avg_msg_len: f64,
    pub interactions_per_day: f64,
    pub is_favorite: bool,
}
