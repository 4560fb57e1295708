//! Three-group closeness comparison between an activity-based classifier and
//! binned survey ratings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{FeatureVector, Rating, RatingKind, TrustLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosenessError {
    #[error("no rated partners")]
    NoRatedPartners,
    #[error("binning must not map a higher rating to a lower group")]
    NonMonotoneBinning,
    #[error("cutoffs must satisfy low <= high (got {0}, {1})")]
    InvalidCutoffs(u64, u64),
}

/// Ordered Distant < Near < Closest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClosenessGroup {
    SociallyDistant,
    SociallyNear,
    SociallyClosest,
}

/// Maps rating levels onto closeness groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    mapping: [ClosenessGroup; 5],
}

impl BinningScheme {
    /// {1,2} → Distant, {3} → Near, {4,5} → Closest.
    pub const A: BinningScheme = BinningScheme {
        mapping: [
            ClosenessGroup::SociallyDistant,
            ClosenessGroup::SociallyDistant,
            ClosenessGroup::SociallyNear,
            ClosenessGroup::SociallyClosest,
            ClosenessGroup::SociallyClosest,
        ],
    };

    /// {1,2,3} → Distant, {4} → Near, {5} → Closest.
    pub const B: BinningScheme = BinningScheme {
        mapping: [
            ClosenessGroup::SociallyDistant,
            ClosenessGroup::SociallyDistant,
            ClosenessGroup::SociallyDistant,
            ClosenessGroup::SociallyNear,
            ClosenessGroup::SociallyClosest,
        ],
    };

    pub fn new(mapping: [ClosenessGroup; 5]) -> Result<Self, ClosenessError> {
        if mapping.windows(2).any(|w| w[0] > w[1]) {
            return Err(ClosenessError::NonMonotoneBinning);
        }
        Ok(BinningScheme { mapping })
    }
}

impl FromStr for BinningScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(BinningScheme::A),
            "B" | "b" => Ok(BinningScheme::B),
            _ => Err(format!("unknown binning scheme {s:?} (expected A or B)")),
        }
    }
}

pub fn bin_rating(rating: TrustLevel, scheme: &BinningScheme) -> ClosenessGroup {
    scheme.mapping[rating.get() as usize - 1]
}

/// Anything that sorts a partner into a closeness group from its features.
pub trait ClosenessClassifier {
    fn classify(&self, fv: &FeatureVector) -> ClosenessGroup;
}

/// Groups partners by interaction volume against two cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityClassifier {
    pub include_messages: bool,
    low: u64,
    high: u64,
}

impl ActivityClassifier {
    pub fn new(include_messages: bool, low: u64, high: u64) -> Result<Self, ClosenessError> {
        if low > high {
            return Err(ClosenessError::InvalidCutoffs(low, high));
        }
        Ok(ActivityClassifier { include_messages, low, high })
    }

    pub fn cutoffs(&self) -> (u64, u64) {
        (self.low, self.high)
    }

    pub fn score(&self, fv: &FeatureVector) -> u64 {
        fv.num_calls + if self.include_messages { fv.num_msgs } else { 0 }
    }
}

impl ClosenessClassifier for ActivityClassifier {
    fn classify(&self, fv: &FeatureVector) -> ClosenessGroup {
        let s = self.score(fv);
        if s <= self.low {
            ClosenessGroup::SociallyDistant
        } else if s <= self.high {
            ClosenessGroup::SociallyNear
        } else {
            ClosenessGroup::SociallyClosest
        }
    }
}

pub fn classify(fv: &FeatureVector, include_messages: bool, cutoffs: (u64, u64)) -> ClosenessGroup {
    ActivityClassifier { include_messages, low: cutoffs.0, high: cutoffs.1 }.classify(fv)
}

/// What counts as an error for one partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ErrorMode {
    /// Classifier placed the partner in a lower group than the survey.
    #[default]
    Underestimation,
    /// Classifier and survey disagree in either direction.
    Disagreement,
}

/// How partner errors are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    /// Mean of the per-participant error fractions.
    #[default]
    PerParticipant,
    /// Error fraction over all partners at once.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOptions {
    pub scheme: BinningScheme,
    pub rating: RatingKind,
    pub mode: ErrorMode,
    pub aggregation: Aggregation,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            scheme: BinningScheme::A,
            rating: RatingKind::Closeness,
            mode: ErrorMode::Underestimation,
            aggregation: Aggregation::PerParticipant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub errors: u64,
    pub rated: u64,
}

impl ErrorCount {
    pub fn fraction(&self) -> Option<f64> {
        (self.rated > 0).then(|| self.errors as f64 / self.rated as f64)
    }
}

/// Errors among the rated partners of one participant.
pub fn participant_errors(
    partners: &[(FeatureVector, Rating)],
    classifier: &dyn ClosenessClassifier,
    opts: &ComparisonOptions,
) -> ErrorCount {
    let mut count = ErrorCount { errors: 0, rated: 0 };
    for (fv, rating) in partners {
        let Some(level) = rating.level(opts.rating) else { continue };
        count.rated += 1;
        let truth = bin_rating(level, &opts.scheme);
        let guess = classifier.classify(fv);
        let wrong = match opts.mode {
            ErrorMode::Underestimation => guess < truth,
            ErrorMode::Disagreement => guess != truth,
        };
        count.errors += u64::from(wrong);
    }
    count
}

/// Mean error over participants, each given as its list of partners.
pub fn mean_error(
    participants: &[Vec<(FeatureVector, Rating)>],
    classifier: &dyn ClosenessClassifier,
    opts: &ComparisonOptions,
) -> Result<f64, ClosenessError> {
    let counts: Vec<ErrorCount> =
        participants.iter().map(|p| participant_errors(p, classifier, opts)).filter(|c| c.rated > 0).collect();
    if counts.is_empty() {
        return Err(ClosenessError::NoRatedPartners);
    }
    Ok(match opts.aggregation {
        Aggregation::PerParticipant => {
            counts.iter().filter_map(ErrorCount::fraction).sum::<f64>() / counts.len() as f64
        }
        Aggregation::Pooled => {
            let errors: u64 = counts.iter().map(|c| c.errors).sum();
            let rated: u64 = counts.iter().map(|c| c.rated).sum();
            errors as f64 / rated as f64
        }
    })
}

impl fmt::Display for ClosenessGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClosenessGroup::SociallyDistant => "distant",
            ClosenessGroup::SociallyNear => "near",
            ClosenessGroup::SociallyClosest => "closest",
        })
    }
}
