//! Survey-result documents: parsing, serialization, deduplication, the
//! dataset filter, and the survey's partner-selection strategy.
//!
//! Canonical document layout (YAML):
//!
//! ```yaml
//! participant: p-17            # optional
//! worker: W123                 # optional, used for deduplication
//! general: {addressBookSize: 120, totalCalls: 40, totalMessages: 90, activePartners: 12}
//! partners:
//!   - id: 3f9a...
//!     surveyPosition: 1
//!     isHuman: true
//!     isFavorite: false
//!     rating: {closeness: 4, trustInfo: 5, trustBest: 4}
//!     calls:    [{date: 86400, type: out, duration: 60, tag: mobile}]
//!     messages: [{date: 90000, type: in, length: 42}]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::datamodel::{
    doc_rating_key, validate_log, CallDirection, CallRecord, MessageDirection, MessageRecord, ParticipantLog,
    PartnerRecord, Rating, RatingKind,
};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl IngestError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        IngestError::Schema { path: path.to_string(), message: message.into() }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            IngestError::Schema { path, .. } => Some(path),
            IngestError::Parse(_) => None,
        }
    }
}

/// A parsed document together with its envelope metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResult {
    pub log: ParticipantLog,
    pub worker_id: Option<String>,
    /// Unknown keys that were skipped.
    pub warnings: Vec<String>,
}

/// Parses and validates one survey-result document. Unknown keys are logged
/// and ignored.
pub fn parse_result(document: &str) -> Result<ParticipantLog, IngestError> {
    let parsed = parse_result_detailed(document)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.log)
}

pub fn parse_result_detailed(document: &str) -> Result<ParsedResult, IngestError> {
    let root: Value = serde_yaml::from_str(document).map_err(|e| IngestError::Parse(e.to_string()))?;
    let mut warnings = Vec::new();
    let root = Node { value: &root, path: String::new() };
    root.check_keys(&["participant", "worker", "general", "partners"], &mut warnings)?;

    let participant_id = root.opt("participant").map(|n| n.scalar_string()).transpose()?.unwrap_or_default();
    let worker_id = root.opt("worker").map(|n| n.scalar_string()).transpose()?;

    let general = root.req("general")?;
    general.check_keys(&["addressBookSize", "totalCalls", "totalMessages", "activePartners"], &mut warnings)?;
    let address_book_size = general.req("addressBookSize")?.uint()?;
    let total_calls = general.req("totalCalls")?.uint()?;
    let total_messages = general.req("totalMessages")?.uint()?;
    let active_partners = general.opt("activePartners").map(|n| n.uint()).transpose()?.unwrap_or(0);

    let partners = match root.opt("partners") {
        Some(node) => node.seq()?.into_iter().map(|p| parse_partner(&p, &mut warnings)).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };

    let log = ParticipantLog { participant_id, address_book_size, total_calls, total_messages, active_partners, partners };
    if let Some(v) = validate_log(&log).into_iter().next() {
        return Err(IngestError::schema(&v.path, format!("{:?}", v.code)));
    }
    Ok(ParsedResult { log, worker_id, warnings })
}

fn parse_partner(node: &Node<'_>, warnings: &mut Vec<String>) -> Result<PartnerRecord, IngestError> {
    node.check_keys(
        &["id", "surveyPosition", "isHuman", "isFavorite", "rating", "calls", "messages"],
        warnings,
    )?;
    let partner_id = node.req("id")?.scalar_string()?;
    let survey_position = match node.opt("surveyPosition") {
        Some(n) => {
            let v = n.uint()?;
            if !(1..=20).contains(&v) {
                return Err(IngestError::schema(&n.path, format!("survey position {v} outside 1..=20")));
            }
            Some(v as u8)
        }
        None => None,
    };
    let is_human = node.req("isHuman")?.boolean()?;
    let is_favorite = node.req("isFavorite")?.boolean()?;

    let mut rating = Rating::default();
    if let Some(r) = node.opt("rating") {
        r.check_keys(&["closeness", "trustInfo", "trustBest"], warnings)?;
        for kind in RatingKind::ALL {
            if let Some(n) = r.opt(doc_rating_key(kind)) {
                let v = n.uint()?;
                if !(1..=5).contains(&v) {
                    return Err(IngestError::schema(&n.path, format!("rating {v} outside 1..=5")));
                }
                let slot = match kind {
                    RatingKind::Closeness => &mut rating.closeness,
                    RatingKind::TrustInfo => &mut rating.trust_info,
                    RatingKind::TrustBest => &mut rating.trust_best,
                };
                *slot = Some(v as u8);
            }
        }
    }

    let mut calls = Vec::new();
    if let Some(list) = node.opt("calls") {
        for c in list.seq()? {
            c.check_keys(&["date", "type", "duration", "tag"], warnings)?;
            let type_node = c.req("type")?;
            let direction = match type_node.string()?.as_str() {
                "in" => CallDirection::Incoming,
                "out" => CallDirection::Outgoing,
                "missed" => CallDirection::Missed,
                other => return Err(IngestError::schema(&type_node.path, format!("unknown call type {other:?}"))),
            };
            calls.push(CallRecord {
                relative_date: c.req("date")?.uint()?,
                direction,
                duration: c.req("duration")?.uint()?,
                tag: c.opt("tag").map(|t| t.scalar_string()).transpose()?,
            });
        }
    }

    let mut messages = Vec::new();
    if let Some(list) = node.opt("messages") {
        for m in list.seq()? {
            m.check_keys(&["date", "type", "length", "tag"], warnings)?;
            let type_node = m.req("type")?;
            let direction = match type_node.string()?.as_str() {
                "in" => MessageDirection::Incoming,
                "out" => MessageDirection::Outgoing,
                other => {
                    return Err(IngestError::schema(&type_node.path, format!("unknown message type {other:?}")))
                }
            };
            messages.push(MessageRecord {
                relative_date: m.req("date")?.uint()?,
                direction,
                length: m.req("length")?.uint()?,
                tag: m.opt("tag").map(|t| t.scalar_string()).transpose()?,
            });
        }
    }

    Ok(PartnerRecord { partner_id, survey_position, rating, is_human, is_favorite, calls, messages })
}

/// A YAML value together with its location in the document.
struct Node<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Node<'a> {
    fn child(&self, key: &str, value: &'a Value) -> Node<'a> {
        let path = if self.path.is_empty() { key.to_string() } else { format!("{}.{key}", self.path) };
        Node { value, path }
    }

    fn map(&self) -> Result<&'a Mapping, IngestError> {
        self.value.as_mapping().ok_or_else(|| IngestError::schema(self.path_or_root(), "expected a mapping"))
    }

    fn path_or_root(&self) -> &str {
        if self.path.is_empty() {
            "<root>"
        } else {
            &self.path
        }
    }

    /// Optional key; an explicit `null` counts as absent.
    fn opt(&self, key: &str) -> Option<Node<'a>> {
        let v = self.value.as_mapping()?.get(key)?;
        (!v.is_null()).then(|| self.child(key, v))
    }

    fn req(&self, key: &str) -> Result<Node<'a>, IngestError> {
        self.map()?;
        self.opt(key).ok_or_else(|| {
            let path = if self.path.is_empty() { key.to_string() } else { format!("{}.{key}", self.path) };
            IngestError::schema(&path, "missing required key")
        })
    }

    fn check_keys(&self, allowed: &[&str], warnings: &mut Vec<String>) -> Result<(), IngestError> {
        for key in self.map()?.keys() {
            let name = key.as_str().unwrap_or("<non-string key>");
            if !allowed.contains(&name) {
                warnings.push(format!("ignoring unknown key {name:?} in {}", self.path_or_root()));
            }
        }
        Ok(())
    }

    fn seq(&self) -> Result<Vec<Node<'a>>, IngestError> {
        let items = self.value.as_sequence().ok_or_else(|| IngestError::schema(&self.path, "expected a list"))?;
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, v)| Node { value: v, path: format!("{}[{i}]", self.path) })
            .collect())
    }

    fn uint(&self) -> Result<u64, IngestError> {
        match self.value {
            Value::Number(n) => {
                if let Some(v) = n.as_u64() {
                    Ok(v)
                } else if n.as_i64().is_some() {
                    Err(IngestError::schema(&self.path, format!("value {n} must be non-negative")))
                } else {
                    Err(IngestError::schema(&self.path, format!("value {n} must be a whole number")))
                }
            }
            _ => Err(IngestError::schema(&self.path, "expected an integer")),
        }
    }

    fn boolean(&self) -> Result<bool, IngestError> {
        self.value.as_bool().ok_or_else(|| IngestError::schema(&self.path, "expected a boolean"))
    }

    fn string(&self) -> Result<String, IngestError> {
        self.value
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| IngestError::schema(&self.path, "expected a string"))
    }

    /// Strings, or numbers/bools rendered as text (YAML may read hex ids as numbers).
    fn scalar_string(&self) -> Result<String, IngestError> {
        match self.value {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            _ => Err(IngestError::schema(&self.path, "expected a scalar")),
        }
    }
}

/// Renders `log` in the canonical document layout. The output parses back
/// into an identical log.
pub fn to_document(log: &ParticipantLog, worker_id: Option<&str>) -> String {
    fn m(pairs: Vec<(&str, Value)>) -> Value {
        Value::Mapping(pairs.into_iter().map(|(k, v)| (Value::from(k), v)).collect())
    }
    fn tag(t: &Option<String>) -> Option<(&'static str, Value)> {
        t.as_ref().map(|t| ("tag", Value::from(t.as_str())))
    }

    let partners = log
        .partners
        .iter()
        .map(|p| {
            let mut fields = vec![("id", Value::from(p.partner_id.as_str()))];
            if let Some(pos) = p.survey_position {
                fields.push(("surveyPosition", Value::from(pos)));
            }
            fields.push(("isHuman", Value::from(p.is_human)));
            fields.push(("isFavorite", Value::from(p.is_favorite)));
            let rating: Vec<_> = RatingKind::ALL
                .iter()
                .filter_map(|&k| p.rating.raw(k).map(|v| (doc_rating_key(k), Value::from(v))))
                .collect();
            if !rating.is_empty() {
                fields.push(("rating", m(rating)));
            }
            let calls = p
                .calls
                .iter()
                .map(|c| {
                    let mut f = vec![
                        ("date", Value::from(c.relative_date)),
                        ("type", Value::from(c.direction.as_str())),
                        ("duration", Value::from(c.duration)),
                    ];
                    f.extend(tag(&c.tag));
                    m(f)
                })
                .collect();
            let messages = p
                .messages
                .iter()
                .map(|msg| {
                    let mut f = vec![
                        ("date", Value::from(msg.relative_date)),
                        ("type", Value::from(msg.direction.as_str())),
                        ("length", Value::from(msg.length)),
                    ];
                    f.extend(tag(&msg.tag));
                    m(f)
                })
                .collect();
            fields.push(("calls", Value::Sequence(calls)));
            fields.push(("messages", Value::Sequence(messages)));
            m(fields)
        })
        .collect();

    let mut top = vec![("participant", Value::from(log.participant_id.as_str()))];
    if let Some(w) = worker_id {
        top.push(("worker", Value::from(w)));
    }
    top.push((
        "general",
        m(vec![
            ("addressBookSize", Value::from(log.address_book_size)),
            ("totalCalls", Value::from(log.total_calls)),
            ("totalMessages", Value::from(log.total_messages)),
            ("activePartners", Value::from(log.active_partners)),
        ]),
    ));
    top.push(("partners", Value::Sequence(partners)));
    serde_yaml::to_string(&m(top)).expect("YAML mappings with string keys always serialize")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupeOutcome {
    pub kept: Vec<ParticipantLog>,
    /// `(worker_id, input index)` of every dropped repeat submission.
    pub duplicates: Vec<(String, usize)>,
}

/// Keeps the first submission per worker. Input order is taken as arrival order.
pub fn dedupe_participants(logs: Vec<(String, ParticipantLog)>) -> DedupeOutcome {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut duplicates = Vec::new();
    for (idx, (worker, log)) in logs.into_iter().enumerate() {
        if seen.contains(&worker) {
            duplicates.push((worker, idx));
        } else {
            seen.insert(worker);
            kept.push(log);
        }
    }
    DedupeOutcome { kept, duplicates }
}

/// Thresholds for dropping unreliable logs (reset phones, barely used devices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_span_days: f64,
    pub min_partners_for_short_logs: usize,
    pub min_partners_absolute: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy { min_span_days: 7.0, min_partners_for_short_logs: 10, min_partners_absolute: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExclusionReason {
    /// Fewer partners than the absolute minimum.
    TooFewPartnersAbsolute,
    /// Short log span and few partners at the same time.
    ShortLogFewPartners,
    /// The participant skipped every rating.
    NoRatings,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FilterPolicy {
    /// First rule that excludes `log`, if any.
    pub fn exclusion(&self, log: &ParticipantLog) -> Option<ExclusionReason> {
        let partners = log.partners.len();
        let span = log.log_span_days().unwrap_or(0.0);
        if partners < self.min_partners_absolute {
            Some(ExclusionReason::TooFewPartnersAbsolute)
        } else if span < self.min_span_days && partners < self.min_partners_for_short_logs {
            Some(ExclusionReason::ShortLogFewPartners)
        } else if !log.has_any_rating() {
            Some(ExclusionReason::NoRatings)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<ParticipantLog>,
    pub excluded: Vec<(ParticipantLog, ExclusionReason)>,
}

pub fn filter_dataset(logs: Vec<ParticipantLog>, policy: &FilterPolicy) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for log in logs {
        match policy.exclusion(&log) {
            Some(reason) => out.excluded.push((log, reason)),
            None => out.kept.push(log),
        }
    }
    out
}

/// Bucket a surveyed partner was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InteractionClass {
    MostInteractions,
    LeastInteractions,
    Random,
}

impl InteractionClass {
    pub const CYCLE: [InteractionClass; 3] =
        [InteractionClass::MostInteractions, InteractionClass::LeastInteractions, InteractionClass::Random];

    pub fn name(self) -> &'static str {
        match self {
            InteractionClass::MostInteractions => "most",
            InteractionClass::LeastInteractions => "least",
            InteractionClass::Random => "random",
        }
    }

    /// Class implied by a 1-based survey position under the fixed cycle.
    /// Only exact when every class still had candidates at that slot.
    pub fn for_position(position: u8) -> Option<InteractionClass> {
        (position >= 1).then(|| Self::CYCLE[usize::from(position - 1) % 3])
    }
}

/// Picks up to `n` partners to survey, cycling Most → Least → Random.
///
/// Most/Least rank by combined call and message count with ties broken by
/// ascending partner id; Random draws uniformly from the unselected rest.
pub fn select_survey_partners(log: &ParticipantLog, n: usize, seed: u64) -> Vec<(String, InteractionClass)> {
    let counts: BTreeMap<&str, usize> =
        log.partners.iter().map(|p| (p.partner_id.as_str(), p.interaction_count())).collect();
    let mut most: Vec<&str> = counts.keys().copied().collect();
    most.sort_by(|a, b| counts[b].cmp(&counts[a]).then_with(|| a.cmp(b)));
    let mut least: Vec<&str> = counts.keys().copied().filter(|id| counts[id] >= 1).collect();
    least.sort_by(|a, b| counts[a].cmp(&counts[b]).then_with(|| a.cmp(b)));

    let target = n.min(counts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    let mut slot = 0usize;
    let mut idle_rounds = 0;

    while out.len() < target && idle_rounds < InteractionClass::CYCLE.len() {
        let class = InteractionClass::CYCLE[slot % 3];
        slot += 1;
        let pick = match class {
            InteractionClass::MostInteractions => most.iter().copied().find(|id| !chosen.contains(id)),
            InteractionClass::LeastInteractions => least.iter().copied().find(|id| !chosen.contains(id)),
            InteractionClass::Random => {
                // BTreeMap keys are already in ascending id order
                let remaining: Vec<&str> = counts.keys().copied().filter(|id| !chosen.contains(id)).collect();
                (!remaining.is_empty()).then(|| remaining[rng.random_range(0..remaining.len())])
            }
        };
        match pick {
            Some(id) => {
                chosen.insert(id);
                out.push((id.to_string(), class));
                idle_rounds = 0;
            }
            None => idle_rounds += 1,
        }
    }
    out
}
