//! End-to-end runs of the library on simulated devices.

use std::collections::BTreeSet;

use proptest::prelude::*;
use socialtrust::ingest::{dedupe_participants, filter_dataset, parse_result, to_document};
use socialtrust::psi::{canonicalize, TrustCombination};
use socialtrust::simnet::{generate_population, run_pairwise, NetConfig, SimConfig};
use socialtrust::trustmetric::{compute_quantiles, Calibration};
use socialtrust::{extract_all, Combinator, FeatureVector, FilterPolicy, Predictor, Rating};

fn rated(logs: &[socialtrust::ParticipantLog]) -> Vec<(FeatureVector, Rating)> {
    logs.iter()
        .flat_map(|log| {
            let features = extract_all(log);
            log.partners.iter().map(move |p| (features[&p.partner_id].clone(), p.rating)).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn documents_survive_ingest_unchanged() {
    let pop = generate_population(&SimConfig { n_devices: 8, seed: 11, ..SimConfig::default() }).unwrap();
    let parsed: Vec<_> = pop
        .iter()
        .enumerate()
        .map(|(i, d)| (format!("W{i}"), parse_result(&to_document(&d.log, None)).unwrap()))
        .collect();
    for ((_, log), dev) in parsed.iter().zip(&pop) {
        assert_eq!(log, &dev.log);
    }
    let deduped = dedupe_participants(parsed);
    assert!(deduped.duplicates.is_empty());
    let filtered = filter_dataset(deduped.kept, &FilterPolicy::default());
    assert!(filtered.excluded.is_empty());
    assert_eq!(filtered.kept.len(), 8);
}

#[test]
fn calibrated_predictions_separate_ratings() {
    let pop = generate_population(&SimConfig { n_devices: 200, seed: 3, ..SimConfig::default() }).unwrap();
    let logs: Vec<_> = pop.into_iter().map(|d| d.log).collect();
    let data = rated(&logs);
    let table = compute_quantiles(&data, &Calibration::default()).unwrap();
    let predictor = Predictor::new(&table, Combinator::OrAny);

    let (mut trusted, mut untrusted) = (Vec::new(), Vec::new());
    for (fv, rating) in &data {
        let Some(level) = rating.trust_info.map(f64::from) else { continue };
        if predictor.predict(fv).predicted_trusted { trusted.push(level) } else { untrusted.push(level) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!trusted.is_empty() && !untrusted.is_empty());
    assert!(mean(&trusted) > mean(&untrusted), "{} vs {}", mean(&trusted), mean(&untrusted));
}

#[test]
fn protocol_counts_exactly_the_shared_contacts() {
    let pop = generate_population(&SimConfig { n_devices: 12, seed: 9, ..SimConfig::default() }).unwrap();
    let predictor = Predictor::new(&socialtrust::QuantileTable::survey_reference(), Combinator::OrAny);
    let numbers = |i: usize| -> BTreeSet<String> {
        pop[i].profile.contacts.iter().map(|c| canonicalize(&c.identifier)).collect()
    };
    for (a, b) in [(0, 1), (0, 11), (4, 7)] {
        let run = run_pairwise(&pop[a], &pop[b], &predictor, &TrustCombination::default(), &NetConfig::default(), 1)
            .unwrap();
        let shared = numbers(a).intersection(&numbers(b)).count();
        assert_eq!(run.estimate_a.mutual_count, shared);
        assert_eq!(run.estimate_b.mutual_count, shared);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimates_stay_in_range_under_loss(seed in any::<u64>(), loss in 0.0..0.3f64) {
        let pop = generate_population(&SimConfig { n_devices: 3, seed, ..SimConfig::default() }).unwrap();
        let predictor = Predictor::new(&socialtrust::QuantileTable::survey_reference(), Combinator::OrAny);
        let net = NetConfig { loss, max_retries: 10, ..NetConfig::default() };
        if let Ok(run) = run_pairwise(&pop[0], &pop[1], &predictor, &TrustCombination::default(), &net, seed) {
            for est in [&run.estimate_a, &run.estimate_b] {
                prop_assert!((0.0..=1.0).contains(&est.combined));
                let expect = (1 + (4.0 * est.combined).floor() as u8).min(5);
                prop_assert_eq!(est.level.get(), expect);
                prop_assert_eq!(est.insufficient_evidence, est.mutual_count == 0);
            }
        }
    }
}
