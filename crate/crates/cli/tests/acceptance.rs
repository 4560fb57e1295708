//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialtrust::closeness::{mean_error, ActivityClassifier, BinningScheme, ComparisonOptions};
use socialtrust::datamodel::{CallDirection, CallRecord, SECONDS_PER_DAY};
use socialtrust::ingest::{filter_dataset, ExclusionReason, FilterPolicy};
use socialtrust::psi::{intersect, tokenize_contacts, Contact, ContactToken, TrustCombination};
use socialtrust::simnet::{generate_population, run_pairwise, Device, DeviceProfile, NetConfig, SimConfig};
use socialtrust::statistics::{correlation_significance, pearson};
use socialtrust::trustmetric::{build_rule, compute_quantiles, evaluate_rule, Calibration};
use socialtrust::{
    Band, Combinator, FeatureVector, ParticipantLog, PartnerRecord, Predictor, QuantileTable, Rating, RatingKind,
    TrustLevel, Variable,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Sort then interpolate at `p·(n−1)`, written independently of the library.
fn oracle_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn rated_level(level: u8) -> Rating {
    Rating { trust_info: Some(level), ..Rating::default() }
}

fn quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        // small integer pools give repeated values
        let pool: Option<u32> = rng.random_bool(0.3).then(|| rng.random_range(1..20));
        let values: Vec<f64> = (0..n)
            .map(|_| match pool {
                Some(k) => f64::from(rng.random_range(0..k)),
                None => rng.random_range(0.0..1e4),
            })
            .collect();
        let dataset: Vec<(FeatureVector, Rating)> = values
            .iter()
            .map(|&v| (FeatureVector { rel_msgs: v, ..FeatureVector::default() }, rated_level(1)))
            .collect();
        let table = compute_quantiles(&dataset, &Calibration::default()).map_err(|e| format!("case {case}: {e}"))?;
        for band in Band::ALL {
            let delta = (table.get(Variable::RelMsgs, band) - oracle_quantile(&values, band.prob())).abs();
            worst = worst.max(delta);
            check(delta <= 1e-9, || format!("case {case} (n={n}) band {band}: |delta| = {delta:e}"))?;
        }
    }
    Ok(format!("1000 multisets, max |delta| = {worst:e}"))
}

fn reference_thresholds() -> Outcome {
    let rule = build_rule(&QuantileTable::survey_reference(), 0.95, Combinator::OrAny).map_err(|e| e.to_string())?;
    let expected = [
        (Variable::NumCalls, 13.0),
        (Variable::NumMsgs, 35.0),
        (Variable::DurCalls, 711.0),
        (Variable::LenMsgs, 2105.0),
        (Variable::RelCalls, 5.5),
        (Variable::RelMsgs, 5.9),
    ];
    for (var, want) in expected {
        let got = rule.thresholds[&var];
        check(got == want, || format!("{var}: got {got}, want {want}"))?;
    }
    // strictly greater: a value equal to the threshold does not fire
    let at = FeatureVector { num_calls: 13, ..FeatureVector::default() };
    let above = FeatureVector { num_calls: 14, ..FeatureVector::default() };
    check(!rule.is_satisfied(&at) && rule.is_satisfied(&above), || "threshold comparison is not strict".into())?;
    Ok("num_calls>13 num_msgs>35 dur_calls>711 len_msgs>2105 rel_calls>5.5 rel_msgs>5.9".into())
}

fn distribution_replay() -> Outcome {
    // satisfying partners per level 1..=5, proportional to the published shares
    let counts: [u64; 5] = [1058, 886, 1890, 1933, 4233];
    let want = [(5, 42.33), (4, 19.33), (3, 18.90), (2, 8.86), (1, 10.58)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut dataset = Vec::new();
    for (i, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let fv = FeatureVector { num_calls: rng.random_range(14..400), ..FeatureVector::default() };
            dataset.push((fv, rated_level(i as u8 + 1)));
        }
    }
    // partners below every threshold must not leak into the table
    for _ in 0..5000 {
        let fv = FeatureVector { num_calls: rng.random_range(0..=13), rel_calls: 1.0, ..FeatureVector::default() };
        dataset.push((fv, rated_level(rng.random_range(1..=5))));
    }
    dataset.shuffle(&mut rng);
    let rule = build_rule(&QuantileTable::survey_reference(), 0.95, Combinator::OrAny).map_err(|e| e.to_string())?;
    let dist = evaluate_rule(&dataset, &rule, RatingKind::TrustInfo).map_err(|e| e.to_string())?;
    for (level, pct) in want {
        let got = dist.row(TrustLevel::new(level).unwrap()).percent;
        check((got - pct).abs() <= 0.01, || format!("level {level}: {got:.4}% vs {pct}%"))?;
    }
    let cumulative = dist.row(TrustLevel::new(3).unwrap()).cumulative;
    check((cumulative - 80.56).abs() <= 0.01, || format!("cumulative at 3: {cumulative:.4}"))?;
    Ok(format!("{} satisfying partners, cumulative at level 3 = {cumulative:.2}%", dist.total))
}

fn favorites_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let predictor = Predictor::new(&QuantileTable::survey_reference(), Combinator::AndPair(Variable::NumCalls, Variable::LenMsgs))
        .with_favorites_filter(true);
    let (mut trusted, mut seen) = (0usize, 0usize);
    for ds in 0..100 {
        for _ in 0..rng.random_range(20..200) {
            let fv = FeatureVector {
                num_calls: rng.random_range(0..80),
                len_msgs: rng.random_range(0..8000),
                num_msgs: rng.random_range(0..100),
                is_favorite: rng.random_bool(0.2),
                ..FeatureVector::default()
            };
            seen += 1;
            let p = predictor.predict(&fv);
            if p.predicted_trusted {
                trusted += 1;
                check(fv.is_favorite, || format!("dataset {ds}: non-favorite predicted trusted"))?;
            }
        }
    }
    check(trusted > 0, || "no partner was predicted trusted; property is vacuous".into())?;
    Ok(format!("{trusted} of {seen} partners trusted, all favorites"))
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn correlation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(3..300);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.random_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let r = pearson(&x, &y).map_err(|e| e.to_string())?;
        let self_r = pearson(&x, &x).map_err(|e| e.to_string())?;
        let neg_r = pearson(&x, &neg).map_err(|e| e.to_string())?;
        check((self_r - 1.0).abs() < 1e-12, || format!("case {case}: pearson(x,x) = {self_r}"))?;
        check((neg_r + 1.0).abs() < 1e-12, || format!("case {case}: pearson(x,-x) = {neg_r}"))?;
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0));
        let affine: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let r_affine = pearson(&x, &affine).map_err(|e| e.to_string())?;
        check((r_affine - r).abs() < 1e-12, || format!("case {case}: affine changed r by {}", r_affine - r))?;
        let delta = (r - oracle_pearson(&x, &y)).abs();
        worst = worst.max(delta);
        check(delta <= 1e-12, || format!("case {case}: |delta| = {delta:e}"))?;
    }
    let sig = correlation_significance(0.7976, 3331).map_err(|e| e.to_string())?;
    check(sig.significant_at_99, || format!("r=0.7976, n=3331 not significant: {sig:?}"))?;
    Ok(format!("max |delta| = {worst:e}; r=0.7976 n=3331 t={:.1} > {:.3}", sig.t_statistic, sig.critical_value))
}

fn log_shape(span_days: f64, partners: usize) -> ParticipantLog {
    let span = (span_days * SECONDS_PER_DAY).round() as u64;
    let partners: Vec<PartnerRecord> = (0..partners)
        .map(|i| PartnerRecord {
            partner_id: format!("p{i:02}"),
            survey_position: Some(1),
            rating: rated_level(3),
            is_human: true,
            is_favorite: false,
            calls: vec![
                CallRecord { relative_date: 0, direction: CallDirection::Outgoing, duration: 30, tag: None },
                CallRecord { relative_date: span, direction: CallDirection::Incoming, duration: 30, tag: None },
            ],
            messages: vec![],
        })
        .collect();
    let calls = 2 * partners.len() as u64;
    ParticipantLog {
        participant_id: format!("span{span_days}-n{}", partners.len()),
        address_book_size: 50,
        total_calls: calls,
        total_messages: 0,
        active_partners: partners.len() as u64,
        partners,
    }
}

fn expected_exclusion(log: &ParticipantLog, policy: &FilterPolicy) -> Option<ExclusionReason> {
    let n = log.partners.len();
    let short = log.log_span_days().unwrap_or(0.0) < policy.min_span_days;
    if n < policy.min_partners_absolute {
        Some(ExclusionReason::TooFewPartnersAbsolute)
    } else if short && n < policy.min_partners_for_short_logs {
        Some(ExclusionReason::ShortLogFewPartners)
    } else {
        None
    }
}

fn filter_matrix() -> Outcome {
    let default = FilterPolicy::default();
    // with the default thresholds "at most 4 partners" implies "fewer than 10",
    // so two cells are empty there; they are exercised under a policy whose
    // short-log threshold sits below the absolute one
    let inverted = FilterPolicy { min_span_days: 7.0, min_partners_for_short_logs: 3, min_partners_absolute: 5 };
    let spans = [(true, vec![0.5, 3.0, 6.99]), (false, vec![7.0, 30.0, 120.0])];
    let mut cells = Vec::new();
    for (short, span_values) in &spans {
        for below_short in [true, false] {
            for at_most_four in [true, false] {
                let mut realized = None;
                for policy in [&default, &inverted] {
                    let sizes: Vec<usize> = (0..=40)
                        .filter(|&n| (n < policy.min_partners_for_short_logs) == below_short)
                        .filter(|&n| (n < policy.min_partners_absolute) == at_most_four)
                        .collect();
                    if !sizes.is_empty() {
                        realized = Some((policy, sizes));
                        break;
                    }
                }
                let (policy, sizes) =
                    realized.ok_or_else(|| format!("cell short={short} <short={below_short} <=4={at_most_four} unrealizable"))?;
                let logs: Vec<ParticipantLog> =
                    span_values.iter().flat_map(|&s| sizes.iter().map(move |&n| log_shape(s, n))).collect();
                let outcome = filter_dataset(logs.clone(), policy);
                check(outcome.kept.len() + outcome.excluded.len() == logs.len(), || "filter lost logs".into())?;
                for log in &logs {
                    let got = policy.exclusion(log);
                    let want = expected_exclusion(log, policy);
                    check(got == want, || format!("{}: got {got:?}, want {want:?}", log.participant_id))?;
                }
                let which = if std::ptr::eq(policy, &default) { "default" } else { "inverted" };
                cells.push(format!("{which}:{}", logs.len()));
            }
        }
    }
    // boundary example: exactly 7 days and 10 partners is kept
    check(default.exclusion(&log_shape(7.0, 10)).is_none(), || "7.0 days / 10 partners excluded".into())?;
    Ok(format!("8 cells [{}]", cells.join(" ")))
}

fn psi_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool: Vec<String> = (0..400).map(|i| format!("+49 151 {:07}", 1_000_000 + i * 7919 % 9_000_000)).collect();
    for case in 0..1000 {
        let mut salt = [0u8; 24];
        rng.fill_bytes(&mut salt);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let k = rng.random_range(0..120);
            (0..k).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
        };
        let (a_ids, b_ids) = (draw(&mut rng), draw(&mut rng));
        let a = tokenize_contacts(&a_ids, &salt).map_err(|e| e.to_string())?;
        let b = tokenize_contacts(&b_ids, &salt).map_err(|e| e.to_string())?;
        let brute: BTreeSet<ContactToken> = a.iter().filter(|t| b.iter().any(|u| u == *t)).copied().collect();
        check(intersect(&a, &b) == brute, || format!("case {case}: intersection differs from brute force"))?;
    }
    let ids: Vec<String> = (0..1000).map(|i| format!("+1 212 {:07}", 5_550_000 + i)).collect();
    let s1 = tokenize_contacts(&ids, b"session-salt-one-0001").map_err(|e| e.to_string())?;
    let s2 = tokenize_contacts(&ids, b"session-salt-two-0002").map_err(|e| e.to_string())?;
    check(s1.len() == 1000 && s2.len() == 1000, || "identifiers collided within a salt".into())?;
    let cross = intersect(&s1, &s2).len();
    check(cross == 0, || format!("{cross} cross-salt collisions"))?;
    Ok("1000 pairs match brute force; 0 cross-salt collisions over 1000 identifiers".into())
}

fn determinism() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_socialtrust"))
            .args(["--quiet", "simulate", "--devices", "50", "--seed", "7", "--pairs", "mesh"])
            .output()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    check(a.status.success() && b.status.success(), || String::from_utf8_lossy(&a.stderr).into_owned())?;
    check(a.stdout == b.stdout, || "reports differ between runs".into())?;
    let pairs = a.stdout.iter().filter(|&&c| c == b'\n').count() - 1;
    check(pairs == 1225, || format!("{pairs} pairs, want 1225"))?;

    let cfg = SimConfig { n_devices: 1000, seed: 7, ..SimConfig::default() };
    let pop = generate_population(&cfg).map_err(|e| e.to_string())?;
    let mean = |f: &dyn Fn(&Device) -> f64| pop.iter().map(f).sum::<f64>() / pop.len() as f64;
    let targets = [
        ("contacts", mean(&|d| d.profile.contacts.len() as f64), cfg.contacts_mean),
        ("partners", mean(&|d| d.log.partners.len() as f64), cfg.active_partners_mean),
        ("calls", mean(&|d| d.log.logged_calls() as f64), cfg.calls_mean),
        ("messages", mean(&|d| d.log.logged_messages() as f64), cfg.msgs_mean),
        ("span_days", mean(&|d| d.log.log_span_days().unwrap_or(0.0)), cfg.span_days_mean),
    ];
    let mut parts = Vec::new();
    for (name, got, want) in targets {
        let rel = (got - want).abs() / want;
        check(rel <= 0.10, || format!("{name}: mean {got:.1} vs target {want} ({:.1}% off)", rel * 100.0))?;
        parts.push(format!("{name} {got:.1}/{want}"));
    }
    Ok(format!("1225-pair report byte-identical; means {}", parts.join(", ")))
}

fn fixture_device(id: &str, numbers: &[&str], calls_per_number: &[u64]) -> Device {
    let partners: Vec<PartnerRecord> = numbers
        .iter()
        .zip(calls_per_number)
        .filter(|(_, &n)| n > 0)
        .map(|(num, &n)| PartnerRecord {
            partner_id: format!("{id}-{num}"),
            survey_position: None,
            rating: Rating::default(),
            is_human: true,
            is_favorite: false,
            calls: (0..n)
                .map(|k| CallRecord { relative_date: k * 3600, direction: CallDirection::Outgoing, duration: 120, tag: None })
                .collect(),
            messages: vec![],
        })
        .collect();
    let total = partners.iter().map(|p| p.calls.len() as u64).sum();
    let contacts = numbers
        .iter()
        .map(|num| Contact {
            identifier: num.to_string(),
            partner_id: partners.iter().any(|p| p.partner_id == format!("{id}-{num}")).then(|| format!("{id}-{num}")),
        })
        .collect();
    Device {
        profile: DeviceProfile {
            device_id: id.into(),
            community: 0,
            contacts,
            latent_trust: Default::default(),
            degenerate: false,
        },
        log: ParticipantLog {
            participant_id: id.into(),
            address_book_size: numbers.len() as u64,
            total_calls: total,
            total_messages: 0,
            active_partners: 0,
            partners,
        },
    }
}

fn asymmetry() -> Outcome {
    let shared = ["+31 6 1000 0001", "+31 6 1000 0002", "+31 6 1000 0003", "+31 6 1000 0004"];
    let rich = fixture_device("rich", &shared, &[60, 45, 30, 20]);
    let sparse = fixture_device("sparse", &shared, &[1, 0, 0, 2]);
    let predictor = Predictor::new(&QuantileTable::survey_reference(), Combinator::OrAny);
    let comb = TrustCombination::default();
    let net = NetConfig::default();
    let pair = run_pairwise(&rich, &sparse, &predictor, &comb, &net, 11).map_err(|e| e.to_string())?;
    check(pair.estimate_a.mutual_count == 4 && pair.estimate_b.mutual_count == 4, || "mutual set is not 4".into())?;
    check(pair.estimate_a != pair.estimate_b, || "rich/sparse estimates are equal".into())?;
    let same = run_pairwise(&rich, &rich, &predictor, &comb, &net, 11).map_err(|e| e.to_string())?;
    check(same.estimate_a == same.estimate_b, || "self-pairing estimates differ".into())?;
    Ok(format!(
        "rich->sparse {:.4} vs sparse->rich {:.4}; self-pair {:.4} = {:.4}",
        pair.estimate_a.combined, pair.estimate_b.combined, same.estimate_a.combined, same.estimate_b.combined
    ))
}

fn activity(calls: u64) -> FeatureVector {
    FeatureVector { num_calls: calls, ..FeatureVector::default() }
}

fn closeness_rating(level: u8) -> Rating {
    Rating { closeness: Some(level), ..Rating::default() }
}

fn mean_error_calibration() -> Outcome {
    let opts = ComparisonOptions { scheme: BinningScheme::A, ..ComparisonOptions::default() };
    let classifier = ActivityClassifier::new(false, 2, 5).map_err(|e| e.to_string())?;
    // scheme A: {1,2} distant, {3} near, {4,5} closest; cutoffs put 0-2 calls
    // distant, 3-5 near, 6+ closest
    let agreeing = vec![
        vec![(activity(0), closeness_rating(1)), (activity(4), closeness_rating(3)), (activity(9), closeness_rating(5))],
        vec![(activity(2), closeness_rating(2)), (activity(6), closeness_rating(4))],
    ];
    let perfect = mean_error(&agreeing, &classifier, &opts).map_err(|e| e.to_string())?;
    check(perfect == 0.0, || format!("agreeing classifier error {perfect}"))?;
    let under = vec![vec![(activity(0), closeness_rating(5)), (activity(1), closeness_rating(4))], vec![(activity(0), closeness_rating(3))]];
    let worst = mean_error(&under, &classifier, &opts).map_err(|e| e.to_string())?;
    check(worst == 1.0, || format!("underestimating classifier error {worst}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for ds in 0..100 {
        let participants: Vec<Vec<(FeatureVector, Rating)>> = (0..rng.random_range(1..15))
            .map(|_| {
                (0..rng.random_range(1..25))
                    .map(|_| {
                        let fv = FeatureVector {
                            num_calls: rng.random_range(0..60),
                            num_msgs: rng.random_range(0..60),
                            ..FeatureVector::default()
                        };
                        (fv, closeness_rating(rng.random_range(1..=5)))
                    })
                    .collect()
            })
            .collect();
        let include_messages = rng.random_bool(0.5);
        let (mut low, mut high) = (rng.random_range(10..60), 0);
        high += low + rng.random_range(0..60);
        let mut previous = f64::INFINITY;
        loop {
            let c = ActivityClassifier::new(include_messages, low, high).map_err(|e| e.to_string())?;
            let e = mean_error(&participants, &c, &opts).map_err(|e| e.to_string())?;
            check(e <= previous + 1e-12, || format!("dataset {ds}: error rose to {e} at cutoffs ({low},{high})"))?;
            previous = e;
            if low == 0 && high == 0 {
                break;
            }
            low = low.saturating_sub(rng.random_range(0..=5));
            high = high.saturating_sub(rng.random_range(0..=7)).max(low);
        }
    }
    Ok("0.0 when agreeing, 1.0 when underestimating, monotone on 100 datasets".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("quantile oracle", quantile_oracle),
        ("reference thresholds at 0.95", reference_thresholds),
        ("rating distribution replay", distribution_replay),
        ("favorites property", favorites_property),
        ("correlation suite", correlation_suite),
        ("filter boundary matrix", filter_matrix),
        ("PSI equivalence", psi_equivalence),
        ("determinism", determinism),
        ("asymmetry", asymmetry),
        ("mean-error calibration", mean_error_calibration),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {:>2}. {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
