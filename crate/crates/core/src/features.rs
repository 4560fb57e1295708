//! Per-partner communication indicators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{FeatureVector, ParticipantLog, PartnerRecord};

/// Feature columns used by the threshold metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    NumCalls,
    NumMsgs,
    DurCalls,
    LenMsgs,
    RelCalls,
    RelMsgs,
}

impl Variable {
    pub const ALL: [Variable; 6] = [
        Variable::NumCalls,
        Variable::NumMsgs,
        Variable::DurCalls,
        Variable::LenMsgs,
        Variable::RelCalls,
        Variable::RelMsgs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::NumCalls => "num_calls",
            Variable::NumMsgs => "num_msgs",
            Variable::DurCalls => "dur_calls",
            Variable::LenMsgs => "len_msgs",
            Variable::RelCalls => "rel_calls",
            Variable::RelMsgs => "rel_msgs",
        }
    }

    /// Row label used in the printed quantile table.
    pub fn label(self) -> &'static str {
        match self {
            Variable::NumCalls => "Number of calls",
            Variable::NumMsgs => "Number of messages",
            Variable::DurCalls => "Duration of calls",
            Variable::LenMsgs => "Message length",
            Variable::RelCalls => "Rel number of calls",
            Variable::RelMsgs => "Rel number of msgs",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn value(self, fv: &FeatureVector) -> f64 {
        match self {
            Variable::NumCalls => fv.num_calls as f64,
            Variable::NumMsgs => fv.num_msgs as f64,
            Variable::DurCalls => fv.dur_calls as f64,
            Variable::LenMsgs => fv.len_msgs as f64,
            Variable::RelCalls => fv.rel_calls,
            Variable::RelMsgs => fv.rel_msgs,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variable {s:?}"))
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn mean(sum: u64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Indicators for one partner of `log`. Relative values are shares of the
/// events logged across all partners, not of the general-section totals.
pub fn extract_features(log: &ParticipantLog, partner: &PartnerRecord) -> FeatureVector {
    extract_with_totals(partner, log.logged_calls(), log.logged_messages(), log.log_span_days())
}

fn extract_with_totals(
    partner: &PartnerRecord,
    all_calls: usize,
    all_msgs: usize,
    span_days: Option<f64>,
) -> FeatureVector {
    let num_calls = partner.calls.len();
    let num_msgs = partner.messages.len();
    let dur_calls: u64 = partner.calls.iter().map(|c| c.duration).sum();
    let len_msgs: u64 = partner.messages.iter().map(|m| m.length).sum();
    let days = span_days.unwrap_or(0.0).max(1.0);
    FeatureVector {
        num_calls: num_calls as u64,
        num_msgs: num_msgs as u64,
        dur_calls,
        len_msgs,
        rel_calls: percent(num_calls, all_calls),
        rel_msgs: percent(num_msgs, all_msgs),
        avg_call_dur: mean(dur_calls, num_calls),
        avg_msg_len: mean(len_msgs, num_msgs),
        interactions_per_day: (num_calls + num_msgs) as f64 / days,
        is_favorite: partner.is_favorite,
    }
}

/// One feature vector per partner, keyed by partner id.
pub fn extract_all(log: &ParticipantLog) -> BTreeMap<String, FeatureVector> {
    let (calls, msgs, span) = (log.logged_calls(), log.logged_messages(), log.log_span_days());
    log.partners
        .iter()
        .map(|p| (p.partner_id.clone(), extract_with_totals(p, calls, msgs, span)))
        .collect()
}
