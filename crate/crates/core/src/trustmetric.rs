//! Quantile-threshold trust metric.
//!
//! Thresholds come from the feature distribution of partners rated at the
//! lowest trust level: a partner whose features exceed what almost all
//! distrusted partners show is predicted to be trusted. Evaluating the rule at
//! the 75/90/95/99% quantiles yields a graded prediction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{FeatureVector, PartnerRecord, Rating, RatingKind, TrustLevel};
use crate::features::Variable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustMetricError {
    #[error("no partner rated at reference level {0}")]
    EmptyReferencePopulation(TrustLevel),
    #[error("probability {0} is not a quantile column")]
    UnknownProbability(f64),
    #[error("no partner satisfies the rule")]
    NoPartnerSatisfiesRule,
    #[error("no favorite partner carries a rating")]
    NoRatedFavorites,
    #[error("invalid quantile table: {0}")]
    InvalidTable(String),
    #[error("invalid grading: {0}")]
    InvalidGrading(String),
}

/// Quantile columns of the calibration table, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Q75,
    Q90,
    Q95,
    Q99,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Q75, Band::Q90, Band::Q95, Band::Q99];

    pub fn prob(self) -> f64 {
        match self {
            Band::Q75 => 0.75,
            Band::Q90 => 0.90,
            Band::Q95 => 0.95,
            Band::Q99 => 0.99,
        }
    }

    pub fn from_prob(p: f64) -> Option<Band> {
        Band::ALL.into_iter().find(|b| (b.prob() - p).abs() < 1e-9)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.prob())
    }
}

/// Grade assigned when a band is the highest one whose rule fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grading {
    /// Indexed like [`Band::ALL`].
    grades: [u8; 4],
}

impl Default for Grading {
    fn default() -> Self {
        Grading { grades: [2, 3, 4, 5] }
    }
}

impl Grading {
    pub fn new(grades: [u8; 4]) -> Result<Self, TrustMetricError> {
        if grades.iter().any(|g| !(2..=5).contains(g)) {
            return Err(TrustMetricError::InvalidGrading("grades must lie in 2..=5".into()));
        }
        if grades.windows(2).any(|w| w[0] > w[1]) {
            return Err(TrustMetricError::InvalidGrading("grades must not decrease with the band".into()));
        }
        Ok(Grading { grades })
    }

    pub fn grade(&self, band: Band) -> TrustLevel {
        TrustLevel::new(self.grades[band.index()]).expect("validated on construction")
    }
}

/// Linear-interpolation quantile of an ascending slice at position `p·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Per-variable quantiles of the reference population.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub reference_level: TrustLevel,
    /// Number of partners (or participants, when aggregated) behind the values.
    pub population: usize,
    values: [[f64; 4]; 6],
}

impl QuantileTable {
    /// `values[variable][band]`, rows in [`Variable::ALL`] order.
    pub fn from_values(
        reference_level: TrustLevel,
        population: usize,
        values: [[f64; 4]; 6],
    ) -> Result<Self, TrustMetricError> {
        for (var, row) in Variable::ALL.iter().zip(&values) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TrustMetricError::InvalidTable(format!("{var}: non-finite value")));
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(TrustMetricError::InvalidTable(format!("{var}: quantiles decrease")));
            }
        }
        Ok(QuantileTable { reference_level, population, values })
    }

    /// Level-1 quantiles measured in the original Android survey
    /// (188 participants, 3,331 rated partners).
    pub fn survey_reference() -> Self {
        QuantileTable {
            reference_level: TrustLevel::MIN,
            population: 0,
            values: [
                [2.0, 7.0, 13.0, 42.0],
                [2.5, 14.0, 35.0, 84.0],
                [89.0, 460.0, 711.0, 4759.0],
                [158.0, 1003.0, 2105.0, 5580.0],
                [0.6, 2.6, 5.5, 14.6],
                [0.6, 2.3, 5.9, 17.4],
            ],
        }
    }

    pub fn get(&self, variable: Variable, band: Band) -> f64 {
        self.values[variable.index()][band.index()]
    }

    pub fn row(&self, variable: Variable) -> [f64; 4] {
        self.values[variable.index()]
    }

    /// Plain-text rendering with one row per variable.
    pub fn render_text(&self) -> String {
        let mut out = format!("Quantiles of selected variables for rating level {}\n", self.reference_level);
        out.push_str(&format!("{:<22}{:>10}{:>10}{:>10}{:>10}\n", "Variable name", "75%", "90%", "95%", "99%"));
        for var in Variable::ALL {
            out.push_str(&format!("{:<22}", var.label()));
            for v in self.row(var) {
                out.push_str(&format!("{:>10}", format_quantile(v)));
            }
            out.push('\n');
        }
        out
    }
}

fn format_quantile(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    reference_level: TrustLevel,
    population: usize,
    probabilities: Vec<f64>,
    quantiles: BTreeMap<Variable, Vec<f64>>,
}

impl Serialize for QuantileTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TableDoc {
            reference_level: self.reference_level,
            population: self.population,
            probabilities: Band::ALL.iter().map(|b| b.prob()).collect(),
            quantiles: Variable::ALL.iter().map(|&v| (v, self.row(v).to_vec())).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QuantileTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = TableDoc::deserialize(deserializer)?;
        let expected: Vec<f64> = Band::ALL.iter().map(|b| b.prob()).collect();
        if doc.probabilities.len() != 4 || doc.probabilities.iter().zip(&expected).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(D::Error::custom("probabilities must be [0.75, 0.9, 0.95, 0.99]"));
        }
        let mut values = [[0.0; 4]; 6];
        for var in Variable::ALL {
            let row = doc.quantiles.get(&var).ok_or_else(|| D::Error::custom(format!("missing variable {var}")))?;
            if row.len() != 4 {
                return Err(D::Error::custom(format!("{var}: expected 4 values")));
            }
            values[var.index()].copy_from_slice(row);
        }
        QuantileTable::from_values(doc.reference_level, doc.population, values).map_err(D::Error::custom)
    }
}

/// Which partners make up the reference population and how they are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calibration {
    pub reference_level: TrustLevel,
    pub rating: RatingKind,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { reference_level: TrustLevel::MIN, rating: RatingKind::TrustInfo }
    }
}

fn reference_columns<'a>(
    dataset: impl IntoIterator<Item = &'a (FeatureVector, Rating)>,
    cal: &Calibration,
) -> Vec<Vec<f64>> {
    let mut columns = vec![Vec::new(); Variable::ALL.len()];
    for (fv, rating) in dataset {
        if rating.level(cal.rating) == Some(cal.reference_level) {
            for var in Variable::ALL {
                columns[var.index()].push(var.value(fv));
            }
        }
    }
    for col in &mut columns {
        col.sort_by(f64::total_cmp);
    }
    columns
}

fn quantile_rows(columns: &[Vec<f64>]) -> [[f64; 4]; 6] {
    let mut values = [[0.0; 4]; 6];
    for (row, col) in values.iter_mut().zip(columns) {
        for band in Band::ALL {
            row[band.index()] = quantile_sorted(col, band.prob());
        }
    }
    values
}

/// Quantiles over all partners pooled together.
pub fn compute_quantiles(
    dataset: &[(FeatureVector, Rating)],
    cal: &Calibration,
) -> Result<QuantileTable, TrustMetricError> {
    let columns = reference_columns(dataset, cal);
    let n = columns[0].len();
    if n == 0 {
        return Err(TrustMetricError::EmptyReferencePopulation(cal.reference_level));
    }
    QuantileTable::from_values(cal.reference_level, n, quantile_rows(&columns))
}

/// Quantiles computed per participant, then averaged over the participants
/// that have at least one reference-level partner.
pub fn compute_quantiles_per_participant(
    groups: &[Vec<(FeatureVector, Rating)>],
    cal: &Calibration,
) -> Result<QuantileTable, TrustMetricError> {
    let mut sum = [[0.0; 4]; 6];
    let mut participants = 0usize;
    for group in groups {
        let columns = reference_columns(group, cal);
        if columns[0].is_empty() {
            continue;
        }
        participants += 1;
        for (acc, row) in sum.iter_mut().zip(quantile_rows(&columns)) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    if participants == 0 {
        return Err(TrustMetricError::EmptyReferencePopulation(cal.reference_level));
    }
    for row in &mut sum {
        for v in row.iter_mut() {
            *v /= participants as f64;
        }
    }
    QuantileTable::from_values(cal.reference_level, participants, sum)
}

/// How per-variable conditions are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combinator {
    /// Any variable above its threshold.
    OrAny,
    /// Both variables above their thresholds.
    AndPair(Variable, Variable),
}

impl Combinator {
    pub fn variables(&self) -> Vec<Variable> {
        match *self {
            Combinator::OrAny => Variable::ALL.to_vec(),
            Combinator::AndPair(a, b) if a == b => vec![a],
            Combinator::AndPair(a, b) => vec![a, b],
        }
    }
}

impl FromStr for Combinator {
    type Err = String;

    /// `or`, or `and:<var>,<var>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "or" {
            return Ok(Combinator::OrAny);
        }
        let pair = s.strip_prefix("and:").ok_or_else(|| format!("expected `or` or `and:a,b`, got {s:?}"))?;
        let (a, b) = pair.split_once(',').ok_or_else(|| format!("expected two variables in {s:?}"))?;
        Ok(Combinator::AndPair(a.trim().parse()?, b.trim().parse()?))
    }
}

impl fmt::Display for Combinator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Combinator::OrAny => f.write_str("or"),
            Combinator::AndPair(a, b) => write!(f, "and:{a},{b}"),
        }
    }
}

/// A variable whose observed value exceeded its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub variable: Variable,
    pub threshold: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub combinator: Combinator,
    pub band: Band,
    pub thresholds: BTreeMap<Variable, f64>,
    /// Only favorites can satisfy the rule.
    pub favorites_filter: bool,
}

impl ThresholdRule {
    /// Triggers when the rule is satisfied, `None` otherwise. Satisfaction
    /// needs strictly greater values than the thresholds.
    pub fn evaluate(&self, fv: &FeatureVector) -> Option<Vec<Trigger>> {
        if self.favorites_filter && !fv.is_favorite {
            return None;
        }
        let fired: Vec<Trigger> = self
            .combinator
            .variables()
            .into_iter()
            .filter_map(|variable| {
                let threshold = self.thresholds[&variable];
                let observed = variable.value(fv);
                (observed > threshold).then_some(Trigger { variable, threshold, observed })
            })
            .collect();
        let satisfied = match self.combinator {
            Combinator::OrAny => !fired.is_empty(),
            Combinator::AndPair(..) => fired.len() == self.combinator.variables().len(),
        };
        satisfied.then_some(fired)
    }

    pub fn is_satisfied(&self, fv: &FeatureVector) -> bool {
        self.evaluate(fv).is_some()
    }
}

pub fn build_rule(table: &QuantileTable, prob: f64, combinator: Combinator) -> Result<ThresholdRule, TrustMetricError> {
    let band = Band::from_prob(prob).ok_or(TrustMetricError::UnknownProbability(prob))?;
    let thresholds = combinator.variables().into_iter().map(|v| (v, table.get(v, band))).collect();
    Ok(ThresholdRule { combinator, band, thresholds, favorites_filter: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustPrediction {
    pub predicted_trusted: bool,
    pub grade: TrustLevel,
    /// Evidence from the highest band that fired.
    pub triggered: Vec<Trigger>,
    pub confidence_band: Option<Band>,
}

impl TrustPrediction {
    pub fn untrusted() -> Self {
        TrustPrediction { predicted_trusted: false, grade: TrustLevel::MIN, triggered: Vec::new(), confidence_band: None }
    }
}

/// Rules for all four bands over one calibrated table.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    rules: Vec<ThresholdRule>,
    grading: Grading,
}

impl Predictor {
    pub fn new(table: &QuantileTable, combinator: Combinator) -> Self {
        let rules = Band::ALL
            .iter()
            .map(|b| build_rule(table, b.prob(), combinator).expect("every band is a table column"))
            .collect();
        Predictor { rules, grading: Grading::default() }
    }

    pub fn with_favorites_filter(mut self, on: bool) -> Self {
        for r in &mut self.rules {
            r.favorites_filter = on;
        }
        self
    }

    pub fn with_grading(mut self, grading: Grading) -> Self {
        self.grading = grading;
        self
    }

    pub fn rule(&self, band: Band) -> &ThresholdRule {
        &self.rules[band.index()]
    }

    pub fn predict(&self, fv: &FeatureVector) -> TrustPrediction {
        for rule in self.rules.iter().rev() {
            if let Some(triggered) = rule.evaluate(fv) {
                return TrustPrediction {
                    predicted_trusted: true,
                    grade: self.grading.grade(rule.band),
                    triggered,
                    confidence_band: Some(rule.band),
                };
            }
        }
        TrustPrediction::untrusted()
    }
}

/// Graded prediction with default grading and no favorites filter.
pub fn predict(fv: &FeatureVector, table: &QuantileTable, combinator: Combinator) -> TrustPrediction {
    Predictor::new(table, combinator).predict(fv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub level: TrustLevel,
    pub count: u64,
    pub percent: f64,
    pub cumulative: f64,
}

/// Share of each rating level, highest level first, with running totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub rows: Vec<RatingRow>,
    pub total: u64,
}

impl RatingDistribution {
    /// `counts[i]` is the number of partners rated `i + 1`.
    pub fn from_counts(counts: [u64; 5]) -> Option<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        let mut running = 0;
        let rows = TrustLevel::descending()
            .map(|level| {
                let count = counts[level.get() as usize - 1];
                running += count;
                RatingRow {
                    level,
                    count,
                    percent: 100.0 * count as f64 / total as f64,
                    cumulative: 100.0 * running as f64 / total as f64,
                }
            })
            .collect();
        Some(RatingDistribution { rows, total })
    }

    pub fn row(&self, level: TrustLevel) -> &RatingRow {
        &self.rows[5 - level.get() as usize]
    }

    /// Share of partners rated at `level` or higher.
    pub fn share_at_least(&self, level: TrustLevel) -> f64 {
        self.row(level).cumulative
    }
}

impl fmt::Display for RatingDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Rating Level | Percent | Cum. Percent")?;
        for r in &self.rows {
            writeln!(f, "{:>12} | {:>7.2} | {:>12.2}", r.level, r.percent, r.cumulative)?;
        }
        Ok(())
    }
}

/// Rating distribution among partners that satisfy `rule`. Partners without
/// an answer for `kind` are skipped.
pub fn evaluate_rule(
    dataset: &[(FeatureVector, Rating)],
    rule: &ThresholdRule,
    kind: RatingKind,
) -> Result<RatingDistribution, TrustMetricError> {
    let mut counts = [0u64; 5];
    for (fv, rating) in dataset {
        if let Some(level) = rating.level(kind) {
            if rule.is_satisfied(fv) {
                counts[level.get() as usize - 1] += 1;
            }
        }
    }
    RatingDistribution::from_counts(counts).ok_or(TrustMetricError::NoPartnerSatisfiesRule)
}

/// Rating distribution over favorite partners.
pub fn favorites_table(partners: &[PartnerRecord], kind: RatingKind) -> Result<RatingDistribution, TrustMetricError> {
    let mut counts = [0u64; 5];
    for p in partners.iter().filter(|p| p.is_favorite) {
        if let Some(level) = p.rating.level(kind) {
            counts[level.get() as usize - 1] += 1;
        }
    }
    RatingDistribution::from_counts(counts).ok_or(TrustMetricError::NoRatedFavorites)
}
