//! Mutual-contact discovery over salted contact hashes, and the per-device
//! trust estimate built from the mutual contacts.
//!
//! The intersection here compares salted digests directly. It hides raw
//! numbers from casual inspection but is not a cryptographic PSI protocol: a
//! peer holding the session salt can test guesses. [`MutualContactDiscovery`]
//! is the seam where a real protocol would plug in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{FeatureVector, ParticipantLog, TrustLevel};
use crate::features::extract_all;
use crate::trustmetric::{Predictor, TrustPrediction};

pub const MIN_SALT_LEN: usize = 16;
const CANONICAL_DIGITS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsiError {
    #[error("session salt is empty")]
    EmptySalt,
    #[error("session salt has {0} bytes, need at least {MIN_SALT_LEN}")]
    ShortSalt(usize),
    #[error("invalid combination parameters: {0}")]
    InvalidCombination(String),
}

/// SHA-256 of `salt ‖ canonical identifier`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContactToken([u8; 32]);

impl ContactToken {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ContactToken(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContactToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContactToken({}…)", &self.to_hex()[..12])
    }
}

impl fmt::Display for ContactToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContactToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContactToken {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ContactToken::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Phone-number normalization: keep the trailing nine digits, so national
/// and international spellings of one number coincide. Identifiers without
/// any digit are trimmed and lower-cased instead.
pub fn canonicalize(identifier: &str) -> String {
    let digits: Vec<char> = identifier.chars().filter(char::is_ascii_digit).collect();
    if digits.is_empty() {
        identifier.trim().to_lowercase()
    } else {
        digits[digits.len().saturating_sub(CANONICAL_DIGITS)..].iter().collect()
    }
}

fn check_salt(salt: &[u8]) -> Result<(), PsiError> {
    match salt.len() {
        0 => Err(PsiError::EmptySalt),
        n if n < MIN_SALT_LEN => Err(PsiError::ShortSalt(n)),
        _ => Ok(()),
    }
}

fn token(salt: &[u8], canonical: &str) -> ContactToken {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(canonical.as_bytes());
    ContactToken(h.finalize().into())
}

pub fn tokenize_contacts<S: AsRef<str>>(ids: &[S], session_salt: &[u8]) -> Result<BTreeSet<ContactToken>, PsiError> {
    check_salt(session_salt)?;
    let canonical: BTreeSet<String> = ids.iter().map(|id| canonicalize(id.as_ref())).collect();
    Ok(canonical.iter().map(|c| token(session_salt, c)).collect())
}

/// An address-book entry and, when the contact shows up in the logs, its
/// partner id there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub identifier: String,
    pub partner_id: Option<String>,
}

/// Resolves this device's own tokens back to partner ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenIndex {
    map: BTreeMap<ContactToken, Option<String>>,
}

impl TokenIndex {
    pub fn build(contacts: &[Contact], session_salt: &[u8]) -> Result<Self, PsiError> {
        check_salt(session_salt)?;
        let mut map: BTreeMap<ContactToken, Option<String>> = BTreeMap::new();
        for c in contacts {
            let slot = map.entry(token(session_salt, &canonicalize(&c.identifier))).or_default();
            if slot.is_none() {
                slot.clone_from(&c.partner_id);
            }
        }
        Ok(TokenIndex { map })
    }

    pub fn tokens(&self) -> BTreeSet<ContactToken> {
        self.map.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, token: &ContactToken) -> bool {
        self.map.contains_key(token)
    }

    /// Partner id behind `token`, if it is an own contact that appears in the logs.
    pub fn partner_id(&self, token: &ContactToken) -> Option<&str> {
        self.map.get(token).and_then(|p| p.as_deref())
    }
}

/// Computes the set of contacts two devices share.
pub trait MutualContactDiscovery {
    fn intersect(&self, a: &BTreeSet<ContactToken>, b: &BTreeSet<ContactToken>) -> BTreeSet<ContactToken>;
}

/// Direct comparison of salted digests.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedSetIntersection;

impl MutualContactDiscovery for HashedSetIntersection {
    fn intersect(&self, a: &BTreeSet<ContactToken>, b: &BTreeSet<ContactToken>) -> BTreeSet<ContactToken> {
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        small.iter().filter(|t| large.contains(t)).copied().collect()
    }
}

pub fn intersect(a: &BTreeSet<ContactToken>, b: &BTreeSet<ContactToken>) -> BTreeSet<ContactToken> {
    HashedSetIntersection.intersect(a, b)
}

/// How contact count and contact quality are blended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustCombination {
    /// Weight of the qualitative score; the count gets `1 − weight`.
    pub weight: f64,
    /// Mutual-contact count at which the count score reaches `1 − 1/e`.
    pub saturation: f64,
}

impl Default for TrustCombination {
    fn default() -> Self {
        TrustCombination { weight: 0.7, saturation: 5.0 }
    }
}

impl TrustCombination {
    pub fn new(weight: f64, saturation: f64) -> Result<Self, PsiError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(PsiError::InvalidCombination(format!("weight {weight} outside [0, 1]")));
        }
        if !(saturation > 0.0 && saturation.is_finite()) {
            return Err(PsiError::InvalidCombination(format!("saturation {saturation} must be positive")));
        }
        Ok(TrustCombination { weight, saturation })
    }

    pub fn quantitative(&self, mutual_count: usize) -> f64 {
        1.0 - (-(mutual_count as f64) / self.saturation).exp()
    }

    /// Mean of `(grade − 1) / 4` over the evidence, 0 without evidence.
    pub fn qualitative<'a>(&self, grades: impl IntoIterator<Item = &'a TrustLevel>) -> f64 {
        let (sum, n) = grades.into_iter().fold((0.0, 0usize), |(s, n), g| (s + f64::from(g.get() - 1), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / (4.0 * n as f64)
        }
    }

    pub fn combine(&self, qualitative: f64, quantitative: f64) -> f64 {
        (self.weight * qualitative + (1.0 - self.weight) * quantitative).clamp(0.0, 1.0)
    }
}

/// Maps a combined score in [0,1] to a level: `1 + ⌊4·score⌋`, capped at 5.
pub fn level_for(combined: f64) -> TrustLevel {
    let l = 1 + (4.0 * combined.clamp(0.0, 1.0)).floor() as u8;
    TrustLevel::new(l.min(5)).expect("in range")
}

/// One device's verdict about a peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEstimate {
    pub mutual_count: usize,
    pub quantitative_score: f64,
    pub qualitative_score: f64,
    pub combined: f64,
    pub level: TrustLevel,
    pub evidence: Vec<(ContactToken, TrustPrediction)>,
    /// No mutual contacts at all.
    pub insufficient_evidence: bool,
}

/// Scores every mutual contact with this device's own logs and blends the
/// results. Mutual contacts never seen in the logs contribute an all-zero
/// feature vector, which the metric grades as untrusted.
pub fn establish_trust(
    own_log: &ParticipantLog,
    own_index: &TokenIndex,
    mutual: &BTreeSet<ContactToken>,
    predictor: &Predictor,
    combination: &TrustCombination,
) -> TrustEstimate {
    let features = extract_all(own_log);
    let silent = FeatureVector::default();
    let evidence: Vec<(ContactToken, TrustPrediction)> = mutual
        .iter()
        .filter(|t| own_index.contains(t))
        .map(|t| {
            let fv = own_index.partner_id(t).and_then(|id| features.get(id)).unwrap_or(&silent);
            (*t, predictor.predict(fv))
        })
        .collect();

    let mutual_count = evidence.len();
    let qualitative_score = combination.qualitative(evidence.iter().map(|(_, p)| &p.grade));
    let quantitative_score = combination.quantitative(mutual_count);
    let combined =
        if mutual_count == 0 { 0.0 } else { combination.combine(qualitative_score, quantitative_score) };
    TrustEstimate {
        mutual_count,
        quantitative_score,
        qualitative_score,
        combined,
        level: level_for(combined),
        evidence,
        insufficient_evidence: mutual_count == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures::*;
    use crate::datamodel::CallDirection;
    use crate::trustmetric::{Combinator, QuantileTable};
    use proptest::prelude::*;

    const SALT: &[u8] = b"0123456789abcdef-session";

    #[test]
    fn canonical_forms_collide() {
        let t = tokenize_contacts(&["+49 170 1234567", "01701234567"], SALT).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(canonicalize("+49 (170) 123-4567"), "701234567");
        assert_eq!(canonicalize("  Pizza Place "), "pizza place");
        assert_eq!(canonicalize("112"), "112");
    }

    #[test]
    fn empty_list_and_bad_salt() {
        assert!(tokenize_contacts::<&str>(&[], SALT).unwrap().is_empty());
        assert_eq!(tokenize_contacts(&["1"], b""), Err(PsiError::EmptySalt));
        assert_eq!(tokenize_contacts(&["1"], b"short"), Err(PsiError::ShortSalt(5)));
    }

    #[test]
    fn deterministic_and_hex_round_trip() {
        let a = tokenize_contacts(&["555 0101", "555 0102"], SALT).unwrap();
        assert_eq!(a, tokenize_contacts(&["555 0102", "555 0101"], SALT).unwrap());
        let t = *a.iter().next().unwrap();
        assert_eq!(ContactToken::from_hex(&t.to_hex()).unwrap(), t);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json.len(), 66);
        assert_eq!(serde_json::from_str::<ContactToken>(&json).unwrap(), t);
    }

    #[test]
    fn intersect_basics() {
        let a = tokenize_contacts(&["1001", "1002", "1003"], SALT).unwrap();
        let b = tokenize_contacts(&["2001", "2002"], SALT).unwrap();
        assert!(intersect(&a, &b).is_empty());
        assert_eq!(intersect(&a, &a), a);
        assert!(intersect(&a, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn combination_validation() {
        assert!(TrustCombination::new(1.5, 5.0).is_err());
        assert!(TrustCombination::new(0.5, 0.0).is_err());
        assert_eq!(level_for(0.0).get(), 1);
        assert_eq!(level_for(0.25).get(), 2);
        assert_eq!(level_for(0.999).get(), 4);
        assert_eq!(level_for(1.0).get(), 5);
    }

    fn heavy_partner(id: &str) -> crate::datamodel::PartnerRecord {
        partner(id, (0..60).map(|d| call(d, CallDirection::Outgoing, 100)).collect(), vec![])
    }

    #[test]
    fn no_mutual_contacts() {
        let log = log_with(vec![heavy_partner("a")]);
        let index = TokenIndex::build(&[Contact { identifier: "5551".into(), partner_id: Some("a".into()) }], SALT)
            .unwrap();
        let predictor = Predictor::new(&QuantileTable::survey_reference(), Combinator::OrAny);
        let est = establish_trust(&log, &index, &BTreeSet::new(), &predictor, &TrustCombination::default());
        assert_eq!(est.combined, 0.0);
        assert_eq!(est.level.get(), 1);
        assert!(est.insufficient_evidence);
    }

    #[test]
    fn twenty_top_grade_contacts() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let log = log_with(ids.iter().map(|id| heavy_partner(id)).collect());
        let contacts: Vec<Contact> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| Contact { identifier: format!("+1 555 000 {i:04}"), partner_id: Some(id.clone()) })
            .collect();
        let index = TokenIndex::build(&contacts, SALT).unwrap();
        let predictor = Predictor::new(&QuantileTable::survey_reference(), Combinator::OrAny);
        let est = establish_trust(&log, &index, &index.tokens(), &predictor, &TrustCombination::default());
        assert_eq!(est.mutual_count, 20);
        assert!(est.evidence.iter().all(|(_, p)| p.grade.get() == 5));
        assert_eq!(est.qualitative_score, 1.0);
        let q = 1.0 - (-4.0f64).exp();
        assert!((est.quantitative_score - q).abs() < 1e-15);
        assert!((est.combined - (0.7 + 0.3 * q)).abs() < 1e-15);
        assert_eq!(est.level.get(), 4);
    }

    #[test]
    fn unlogged_mutual_contact_counts_as_untrusted() {
        let log = log_with(vec![heavy_partner("a")]);
        let contacts = vec![
            Contact { identifier: "5550001".into(), partner_id: Some("a".into()) },
            Contact { identifier: "5550002".into(), partner_id: None },
        ];
        let index = TokenIndex::build(&contacts, SALT).unwrap();
        let predictor = Predictor::new(&QuantileTable::survey_reference(), Combinator::OrAny);
        let est = establish_trust(&log, &index, &index.tokens(), &predictor, &TrustCombination::default());
        assert_eq!(est.mutual_count, 2);
        assert!((est.qualitative_score - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn combined_monotone_in_count(q in 0.0f64..=1.0, n in 0usize..200, w in 0.0f64..=1.0, k in 0.5f64..20.0) {
            let c = TrustCombination::new(w, k).unwrap();
            let lo = c.combine(q, c.quantitative(n));
            let hi = c.combine(q, c.quantitative(n + 1));
            prop_assert!(hi >= lo);
            prop_assert!((0.0..=1.0).contains(&lo));
        }

        #[test]
        fn combined_monotone_in_grades(grades in prop::collection::vec(1u8..=5, 1..30), which in any::<prop::sample::Index>()) {
            let c = TrustCombination::default();
            let levels: Vec<TrustLevel> = grades.iter().map(|&g| TrustLevel::new(g).unwrap()).collect();
            let i = which.index(levels.len());
            let mut raised = levels.clone();
            raised[i] = TrustLevel::new((raised[i].get() + 1).min(5)).unwrap();
            let before = c.combine(c.qualitative(&levels), c.quantitative(levels.len()));
            let after = c.combine(c.qualitative(&raised), c.quantitative(raised.len()));
            prop_assert!(after >= before);
        }

        #[test]
        fn intersection_symmetric(a in prop::collection::btree_set(0u32..300, 0..60), b in prop::collection::btree_set(0u32..300, 0..60)) {
            let ta = tokenize_contacts(&a.iter().map(|x| x.to_string()).collect::<Vec<_>>(), SALT).unwrap();
            let tb = tokenize_contacts(&b.iter().map(|x| x.to_string()).collect::<Vec<_>>(), SALT).unwrap();
            prop_assert_eq!(intersect(&ta, &tb), intersect(&tb, &ta));
            prop_assert_eq!(intersect(&ta, &tb).len(), a.intersection(&b).count());
        }
    }
}
