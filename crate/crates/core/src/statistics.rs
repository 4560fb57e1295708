//! Correlation between rating variables, its significance, and rating
//! histograms per interaction class.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ParticipantLog, Rating, RatingKind};
use crate::ingest::InteractionClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

/// Pearson product-moment correlation. Likert answers are used as plain numbers.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput("samples differ in length"));
    }
    if x.len() < 3 {
        return Err(StatsError::DegenerateInput("need at least 3 pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties share the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson over tie-averaged ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput("samples differ in length"));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Two-sided 99% critical values of Student's t, for 1..=100 degrees of freedom.
const T_CRIT_995: [f64; 100] = [
    63.6567, 9.9248, 5.8409, 4.6041, 4.0321, 3.7074, 3.4995, 3.3554, 3.2498, 3.1693, //
    3.1058, 3.0545, 3.0123, 2.9768, 2.9467, 2.9208, 2.8982, 2.8784, 2.8609, 2.8453, //
    2.8314, 2.8188, 2.8073, 2.7969, 2.7874, 2.7787, 2.7707, 2.7633, 2.7564, 2.7500, //
    2.7440, 2.7385, 2.7333, 2.7284, 2.7238, 2.7195, 2.7154, 2.7116, 2.7079, 2.7045, //
    2.7012, 2.6981, 2.6951, 2.6923, 2.6896, 2.6870, 2.6846, 2.6822, 2.6800, 2.6778, //
    2.6757, 2.6737, 2.6718, 2.6700, 2.6682, 2.6665, 2.6649, 2.6633, 2.6618, 2.6603, //
    2.6589, 2.6575, 2.6561, 2.6549, 2.6536, 2.6524, 2.6512, 2.6501, 2.6490, 2.6479, //
    2.6469, 2.6459, 2.6449, 2.6439, 2.6430, 2.6421, 2.6412, 2.6403, 2.6395, 2.6387, //
    2.6379, 2.6371, 2.6364, 2.6356, 2.6349, 2.6342, 2.6335, 2.6329, 2.6322, 2.6316, //
    2.6309, 2.6303, 2.6297, 2.6291, 2.6286, 2.6280, 2.6275, 2.6269, 2.6264, 2.6259, //
];

/// Upper 0.5% point of the standard normal.
const Z_995: f64 = 2.575_829_303_548_901;

/// Critical |t| for a two-sided test at the 99% level.
pub fn t_critical_99(df: u64) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    if df <= 100 {
        return T_CRIT_995[df as usize - 1];
    }
    // Cornish-Fisher expansion around the normal quantile
    let z = Z_995;
    let d = df as f64;
    let (z3, z5, z7) = (z.powi(3), z.powi(5), z.powi(7));
    z + (z3 + z) / (4.0 * d)
        + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * d * d)
        + (3.0 * z7 + 19.0 * z5 + 17.0 * z3 - 15.0 * z) / (384.0 * d * d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub t_statistic: f64,
    pub degrees_of_freedom: u64,
    pub critical_value: f64,
    pub significant_at_99: bool,
}

/// t-test of H0: ρ = 0 for a sample correlation `r` over `n` pairs.
pub fn correlation_significance(r: f64, n: u64) -> Result<Significance, StatsError> {
    if n < 3 {
        return Err(StatsError::DegenerateInput("need at least 3 pairs"));
    }
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(StatsError::DegenerateInput("|r| must be below 1"));
    }
    let df = n - 2;
    let t = r * (df as f64 / (1.0 - r * r)).sqrt();
    let critical = t_critical_99(df);
    Ok(Significance { t_statistic: t, degrees_of_freedom: df, critical_value: critical, significant_at_99: t.abs() > critical })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub a: RatingKind,
    pub b: RatingKind,
    pub r: f64,
    /// Partners answering both statements.
    pub pairs: u64,
    /// Participants contributing at least one such partner.
    pub participants: u64,
    /// Significance with the partner count as sample size.
    pub by_partners: Option<Significance>,
    /// Significance with the participant count as sample size.
    pub by_participants: Option<Significance>,
}

/// Pairwise correlations between the three rating statements.
pub fn rating_correlations(logs: &[ParticipantLog], use_spearman: bool) -> Result<Vec<CorrelationEntry>, StatsError> {
    const PAIRS: [(RatingKind, RatingKind); 3] = [
        (RatingKind::Closeness, RatingKind::TrustInfo),
        (RatingKind::Closeness, RatingKind::TrustBest),
        (RatingKind::TrustInfo, RatingKind::TrustBest),
    ];
    PAIRS
        .iter()
        .map(|&(a, b)| {
            let (mut xs, mut ys, mut participants) = (Vec::new(), Vec::new(), 0u64);
            for log in logs {
                let before = xs.len();
                for p in &log.partners {
                    if let (Some(x), Some(y)) = (p.rating.level(a), p.rating.level(b)) {
                        xs.push(f64::from(x.get()));
                        ys.push(f64::from(y.get()));
                    }
                }
                if xs.len() > before {
                    participants += 1;
                }
            }
            let r = if use_spearman { spearman(&xs, &ys)? } else { pearson(&xs, &ys)? };
            let pairs = xs.len() as u64;
            Ok(CorrelationEntry {
                a,
                b,
                r,
                pairs,
                participants,
                by_partners: correlation_significance(r, pairs).ok(),
                by_participants: correlation_significance(r, participants).ok(),
            })
        })
        .collect()
}

/// Rating histograms per interaction class; `counts[i]` is the number rated `i + 1`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassHistograms {
    pub counts: BTreeMap<InteractionClass, [u64; 5]>,
}

impl ClassHistograms {
    pub fn histogram(&self, class: InteractionClass) -> [u64; 5] {
        self.counts.get(&class).copied().unwrap_or_default()
    }

    pub fn population(&self, class: InteractionClass) -> u64 {
        self.histogram(class).iter().sum()
    }

    /// Most frequent level (the highest one on ties), if the class is non-empty.
    pub fn mode(&self, class: InteractionClass) -> Option<u8> {
        let h = self.histogram(class);
        if h.iter().all(|&c| c == 0) {
            return None;
        }
        (0..5).rev().max_by_key(|&i| h[i]).map(|i| i as u8 + 1)
    }
}

/// Counts ratings of `kind` per interaction class. Partners without a class
/// assignment or without an answer are not counted.
pub fn class_distribution(
    dataset: &[(String, Rating)],
    classes: &HashMap<String, InteractionClass>,
    kind: RatingKind,
) -> ClassHistograms {
    let mut out = ClassHistograms::default();
    for class in InteractionClass::CYCLE {
        out.counts.insert(class, [0; 5]);
    }
    for (id, rating) in dataset {
        if let (Some(class), Some(level)) = (classes.get(id), rating.level(kind)) {
            out.counts.get_mut(class).expect("all classes present")[level.get() as usize - 1] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct-formula oracle: r = (nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²)).
    fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
    }

    #[test]
    fn perfect_correlations() {
        let x = [1.0, 4.0, 2.0, 5.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rating_fixture_matches_direct_formula() {
        let x = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 5.0, 4.0, 1.0, 3.0];
        let y = [1.0, 1.0, 3.0, 3.0, 4.0, 5.0, 4.0, 5.0, 2.0, 2.0];
        assert!((pearson(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(correlation_significance(1.0, 10).is_err());
        assert!(correlation_significance(0.5, 2).is_err());
    }

    #[test]
    fn spearman_handles_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        // monotone but non-linear relation has rank correlation 1
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn significance_examples() {
        let s = correlation_significance(0.0, 50).unwrap();
        assert_eq!(s.t_statistic, 0.0);
        assert!(!s.significant_at_99);

        let s = correlation_significance(0.7976, 3331).unwrap();
        assert!(s.significant_at_99);
        assert!(s.t_statistic > 75.0);

        // t = 0.5·sqrt(2/0.75) ≈ 0.816, far below the df=2 table value 9.925
        let s = correlation_significance(0.5, 4).unwrap();
        assert!((s.critical_value - 9.925).abs() < 1e-3);
        assert!((s.t_statistic - 0.816_496_580_927_726).abs() < 1e-12);
        assert!(!s.significant_at_99);
    }

    #[test]
    fn large_df_approximation() {
        // standard t-table values: df=120 → 2.617, df=1000 → 2.581
        assert!((t_critical_99(120) - 2.6174).abs() < 1e-3);
        assert!((t_critical_99(1000) - 2.5808).abs() < 1e-3);
        // continuous at the table boundary
        assert!((t_critical_99(101) - t_critical_99(100)).abs() < 1e-3);
        assert!(t_critical_99(100_000) > Z_995);
    }

    #[test]
    fn histograms() {
        let data: Vec<(String, Rating)> = [("a", 5), ("b", 5), ("c", 1), ("d", 3), ("e", 2)]
            .iter()
            .map(|&(id, l)| (id.to_string(), Rating { trust_info: Some(l), ..Rating::default() }))
            .collect();
        let mut classes = HashMap::new();
        classes.insert("a".to_string(), InteractionClass::MostInteractions);
        classes.insert("b".to_string(), InteractionClass::MostInteractions);
        classes.insert("c".to_string(), InteractionClass::LeastInteractions);
        classes.insert("d".to_string(), InteractionClass::Random);
        let h = class_distribution(&data, &classes, RatingKind::TrustInfo);
        assert_eq!(h.histogram(InteractionClass::MostInteractions), [0, 0, 0, 0, 2]);
        assert_eq!(h.histogram(InteractionClass::LeastInteractions), [1, 0, 0, 0, 0]);
        assert_eq!(h.histogram(InteractionClass::Random), [0, 0, 1, 0, 0]);
        assert_eq!(h.mode(InteractionClass::MostInteractions), Some(5));

        classes.values_mut().for_each(|c| *c = InteractionClass::Random);
        let h = class_distribution(&data, &classes, RatingKind::TrustInfo);
        assert_eq!(h.population(InteractionClass::MostInteractions), 0);
        assert_eq!(h.population(InteractionClass::LeastInteractions), 0);
        assert_eq!(h.population(InteractionClass::Random), 4);
        assert_eq!(h.mode(InteractionClass::MostInteractions), None);
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..60).prop_flat_map(|n| {
            (prop::collection::vec(-100.0f64..100.0, n), prop::collection::vec(-100.0f64..100.0, n))
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((x, y) in arb_pair()) {
            if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert!((a - oracle_pearson(&x, &y)).abs() < 1e-9);
            }
        }

        #[test]
        fn affine_invariant((x, y) in arb_pair(), scale in 0.01f64..50.0, shift in -100.0f64..100.0) {
            if let Ok(r) = pearson(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                prop_assert!((pearson(&tx, &y).unwrap() - r).abs() < 1e-9);
            }
        }
    }
}
