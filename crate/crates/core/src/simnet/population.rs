//! Synthetic device population.
//!
//! Devices belong to small communities whose members draw part of their
//! address books from a shared pool, so pairs within a community have many
//! mutual contacts and pairs across communities have few.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal, Poisson, StandardNormal};
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::datamodel::{
    CallDirection, CallRecord, MessageDirection, MessageRecord, ParticipantLog, PartnerRecord, Rating, TrustLevel,
    SECONDS_PER_DAY,
};
use crate::ingest::select_survey_partners;
use crate::psi::{canonicalize, Contact};

/// Family used for the log-span draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpanDistribution {
    /// One day plus a log-normal with the configured mean and sd.
    #[default]
    ShiftedLogNormal,
    /// Normal with the configured mean and sd, redrawn below one day.
    TruncatedNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_devices: usize,
    pub seed: u64,
    pub contacts_mean: f64,
    pub contacts_sd: f64,
    pub active_partners_mean: f64,
    pub calls_mean: f64,
    pub msgs_mean: f64,
    pub span_days_mean: f64,
    pub span_days_sd: f64,
    pub span_distribution: SpanDistribution,
    /// Correlation in [0,1] between a partner's tie strength and its latent trust.
    pub trust_coupling: f64,
    /// Devices per community.
    pub community_size: usize,
    /// Share of devices modeling freshly reset phones (excluded by the default filter).
    pub degenerate_fraction: f64,
    /// Partners each participant is asked to rate.
    pub survey_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_devices: 50,
            seed: 0,
            contacts_mean: 249.3,
            contacts_sd: 308.7,
            active_partners_mean: 32.0,
            calls_mean: 304.6,
            msgs_mean: 739.2,
            span_days_mean: 90.0,
            span_days_sd: 135.9,
            span_distribution: SpanDistribution::ShiftedLogNormal,
            trust_coupling: 0.8,
            community_size: 10,
            degenerate_fraction: 0.0,
            survey_size: 20,
        }
    }
}

const MIN_CONTACTS: f64 = 2.0;
const MIN_PARTNERS: usize = 5;
const SHORT_LOG_PARTNERS: usize = 10;
const SHORT_LOG_DAYS: f64 = 7.0;
const MIN_SPAN_DAYS: f64 = 1.0;
const COMMUNITY_POOL: usize = 600;
const COMMUNITY_SHARE: f64 = 0.5;
const TIE_SIGMA: f64 = 1.2;
/// Standard-normal cut points giving level shares 20/10/20/20/30 %.
const TRUST_CUTS: [f64; 4] = [-0.841_621_233_572_914, -0.524_400_512_708_041, 0.0, 0.524_400_512_708_041];
const FAVORITE_PROB: [f64; 5] = [0.01, 0.02, 0.04, 0.10, 0.25];

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n_devices < 2 {
            return bad("n_devices must be at least 2");
        }
        let stats = [
            self.contacts_mean,
            self.contacts_sd,
            self.active_partners_mean,
            self.calls_mean,
            self.msgs_mean,
            self.span_days_mean,
            self.span_days_sd,
        ];
        if stats.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("means and standard deviations must be finite and non-negative");
        }
        if self.contacts_mean <= MIN_CONTACTS {
            return bad("contacts_mean must exceed 2");
        }
        if self.span_days_mean <= MIN_SPAN_DAYS {
            return bad("span_days_mean must exceed 1 day");
        }
        if !(0.0..=1.0).contains(&self.trust_coupling) {
            return bad("trust_coupling must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.degenerate_fraction) {
            return bad("degenerate_fraction must lie in [0, 1]");
        }
        if self.community_size == 0 || !(1..=20).contains(&self.survey_size) {
            return bad("community_size must be positive and survey_size within 1..=20");
        }
        Ok(())
    }
}

/// What a device knows beyond its survey log: the raw address book and the
/// hidden ground truth used by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub community: usize,
    pub contacts: Vec<Contact>,
    /// Latent trust per partner id.
    pub latent_trust: BTreeMap<String, TrustLevel>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub profile: DeviceProfile,
    pub log: ParticipantLog,
}

/// Log-normal with the given mean and standard deviation.
fn lognormal(mean: f64, sd: f64) -> LogNormal<f64> {
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt()).expect("positive mean")
}

fn community_number(community: usize, slot: usize) -> String {
    format!("+1 {community:04} {slot:05}")
}

fn global_number(slot: usize) -> String {
    format!("+44 9{slot:08}")
}

fn partner_id(device_salt: &[u8; 16], number: &str) -> String {
    let digest = Sha256::new().chain_update(device_salt).chain_update(canonicalize(number)).finalize();
    hex::encode(&digest[..8])
}

fn latent_level(z: f64) -> TrustLevel {
    let l = 1 + TRUST_CUTS.iter().filter(|&&c| z > c).count() as u8;
    TrustLevel::new(l).expect("1..=5")
}

fn jitter_rating(rng: &mut ChaCha8Rng, level: TrustLevel) -> u8 {
    let noise: f64 = Normal::new(0.0, 0.6).expect("valid").sample(rng);
    (f64::from(level.get()) + noise).round().clamp(1.0, 5.0) as u8
}

/// Reproducible population for `config`.
pub fn generate_population(config: &SimConfig) -> Result<Vec<Device>, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let global_pool = (config.n_devices * 200).max(20_000);
    let contacts_dist = lognormal(config.contacts_mean - MIN_CONTACTS, config.contacts_sd.max(1e-9));
    (0..config.n_devices)
        .map(|i| {
            let device_seed = rng.next_u64();
            Ok(generate_device(config, i, global_pool, &contacts_dist, device_seed))
        })
        .collect()
}

fn draw_span_days(config: &SimConfig, rng: &mut ChaCha8Rng) -> f64 {
    match config.span_distribution {
        SpanDistribution::ShiftedLogNormal => {
            MIN_SPAN_DAYS + lognormal(config.span_days_mean - MIN_SPAN_DAYS, config.span_days_sd.max(1e-9)).sample(rng)
        }
        SpanDistribution::TruncatedNormal => {
            let normal = Normal::new(config.span_days_mean, config.span_days_sd).expect("finite sd");
            loop {
                let v = normal.sample(rng);
                if v >= MIN_SPAN_DAYS {
                    break v;
                }
            }
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

fn generate_device(
    config: &SimConfig,
    index: usize,
    global_pool: usize,
    contacts_dist: &LogNormal<f64>,
    seed: u64,
) -> Device {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let device_id = format!("dev{index:04}");
    let community = index / config.community_size;
    let mut device_salt = [0u8; 16];
    rng.fill_bytes(&mut device_salt);

    // address book
    let n_contacts = (MIN_CONTACTS + contacts_dist.sample(&mut rng)).round() as usize;
    let n_comm = ((n_contacts as f64 * COMMUNITY_SHARE).round() as usize).min(COMMUNITY_POOL);
    let mut numbers: Vec<String> =
        sample(&mut rng, COMMUNITY_POOL, n_comm).into_iter().map(|s| community_number(community, s)).collect();
    let n_global = (n_contacts - n_comm).min(global_pool);
    numbers.extend(sample(&mut rng, global_pool, n_global).into_iter().map(global_number));

    // log shape
    let degenerate = rng.random_bool(config.degenerate_fraction);
    let (span_days, n_partners) = if degenerate {
        (rng.random_range(0.1..0.9), rng.random_range(2..=4))
    } else {
        let span = draw_span_days(config, &mut rng);
        let mut partners = MIN_PARTNERS + poisson(&mut rng, config.active_partners_mean - MIN_PARTNERS as f64) as usize;
        if span < SHORT_LOG_DAYS {
            partners = partners.max(SHORT_LOG_PARTNERS);
        }
        (span, partners)
    };

    // partners come from the address book first, then from unknown numbers
    let in_book = n_partners.min(numbers.len());
    let mut partner_numbers: Vec<String> =
        sample(&mut rng, numbers.len(), in_book).into_iter().map(|k| numbers[k].clone()).collect();
    let book: BTreeSet<&String> = numbers.iter().collect();
    while partner_numbers.len() < n_partners {
        let candidate = global_number(rng.random_range(0..global_pool));
        if !book.contains(&candidate) && !partner_numbers.contains(&candidate) {
            partner_numbers.push(candidate);
        }
    }

    // tie strength and latent trust
    let coupling = config.trust_coupling;
    let mut weights = Vec::with_capacity(n_partners);
    let mut call_pref = Vec::with_capacity(n_partners);
    let mut msg_pref = Vec::with_capacity(n_partners);
    let mut latent = Vec::with_capacity(n_partners);
    for _ in 0..n_partners {
        let g: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let w = (TIE_SIGMA * g).exp();
        weights.push(w);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        call_pref.push(w * (0.5 * a).exp());
        msg_pref.push(w * (0.5 * b).exp());
        latent.push(latent_level(coupling * g + (1.0 - coupling * coupling).sqrt() * e));
    }

    // event volumes; a gamma-mixed intensity keeps the mean and adds spread
    let intensity = Gamma::new(2.0, 0.5).expect("valid");
    let total_calls_scale = intensity.sample(&mut rng);
    let total_calls = poisson(&mut rng, config.calls_mean * total_calls_scale);
    let total_msgs_scale = intensity.sample(&mut rng);
    let total_msgs = poisson(&mut rng, config.msgs_mean * total_msgs_scale);
    let call_share = if total_calls + total_msgs == 0 { 0.5 } else { total_calls as f64 / (total_calls + total_msgs) as f64 };

    let mut n_calls = vec![0u64; n_partners];
    let mut n_msgs = vec![0u64; n_partners];
    for j in 0..n_partners {
        if rng.random_bool(call_share) {
            n_calls[j] += 1;
        } else {
            n_msgs[j] += 1;
        }
    }
    let extra_calls = total_calls.saturating_sub(n_calls.iter().sum());
    let extra_msgs = total_msgs.saturating_sub(n_msgs.iter().sum());
    let call_pick = WeightedIndex::new(&call_pref).expect("positive weights");
    let msg_pick = WeightedIndex::new(&msg_pref).expect("positive weights");
    for _ in 0..extra_calls {
        n_calls[call_pick.sample(&mut rng)] += 1;
    }
    for _ in 0..extra_msgs {
        n_msgs[msg_pick.sample(&mut rng)] += 1;
    }

    let offset: u64 = rng.random_range(0..10_000_000);
    let span_secs = (span_days * SECONDS_PER_DAY).round() as u64;
    let duration = Exp::<f64>::new(1.0 / 110.0).expect("valid");
    let length = Exp::<f64>::new(1.0 / 45.0).expect("valid");
    const TAGS: [Option<&str>; 4] = [None, Some("mobile"), Some("home"), Some("work")];

    let mut partners = Vec::with_capacity(n_partners);
    let mut latent_trust = BTreeMap::new();
    for j in 0..n_partners {
        let tag = TAGS[WeightedIndex::new([60, 30, 6, 4]).expect("valid").sample(&mut rng)].map(str::to_string);
        let calls = (0..n_calls[j])
            .map(|_| {
                let r: f64 = rng.random();
                let direction = if r < 0.45 {
                    CallDirection::Incoming
                } else if r < 0.9 {
                    CallDirection::Outgoing
                } else {
                    CallDirection::Missed
                };
                let dur = match direction {
                    CallDirection::Missed => 0,
                    _ => duration.sample(&mut rng).round() as u64,
                };
                CallRecord { relative_date: offset + rng.random_range(0..=span_secs), direction, duration: dur, tag: tag.clone() }
            })
            .collect();
        let messages = (0..n_msgs[j])
            .map(|_| MessageRecord {
                relative_date: offset + rng.random_range(0..=span_secs),
                direction: if rng.random_bool(0.5) { MessageDirection::Incoming } else { MessageDirection::Outgoing },
                length: 1 + length.sample(&mut rng).round() as u64,
                tag: tag.clone(),
            })
            .collect();
        let is_human = rng.random_bool(0.95);
        let is_favorite = is_human && rng.random_bool(FAVORITE_PROB[latent[j].get() as usize - 1]);
        let id = partner_id(&device_salt, &partner_numbers[j]);
        latent_trust.insert(id.clone(), latent[j]);
        partners.push(PartnerRecord {
            partner_id: id,
            survey_position: None,
            rating: Rating::default(),
            is_human,
            is_favorite,
            calls,
            messages,
        });
    }
    pin_span(&mut partners, offset, span_secs);

    let logged_calls: u64 = n_calls.iter().sum();
    let logged_msgs: u64 = n_msgs.iter().sum();
    let mut log = ParticipantLog {
        participant_id: device_id.clone(),
        address_book_size: numbers.len() as u64,
        total_calls: logged_calls + poisson(&mut rng, 2.0),
        total_messages: logged_msgs + poisson(&mut rng, 2.0),
        active_partners: n_partners as u64,
        partners,
    };
    run_survey(&mut log, &latent_trust, config.survey_size, &mut rng);

    let partner_of: BTreeMap<&str, String> =
        partner_numbers.iter().map(|n| (n.as_str(), partner_id(&device_salt, n))).collect();
    let contacts = numbers
        .iter()
        .map(|n| Contact { identifier: n.clone(), partner_id: partner_of.get(n.as_str()).cloned() })
        .collect();

    Device {
        profile: DeviceProfile { device_id, community, contacts, latent_trust, degenerate },
        log,
    }
}

/// Places the earliest and latest event at the ends of the span so the
/// realized log span equals the drawn one.
fn pin_span(partners: &mut [PartnerRecord], offset: u64, span_secs: u64) {
    let mut dates: Vec<&mut u64> = partners
        .iter_mut()
        .flat_map(|p| {
            p.calls.iter_mut().map(|c| &mut c.relative_date).chain(p.messages.iter_mut().map(|m| &mut m.relative_date))
        })
        .collect();
    if dates.len() >= 2 {
        *dates[0] = offset;
        let last = dates.len() - 1;
        *dates[last] = offset + span_secs;
    }
}

/// Rates the surveyed partners from their latent trust; non-persons are skipped.
fn run_survey(log: &mut ParticipantLog, latent: &BTreeMap<String, TrustLevel>, n: usize, rng: &mut ChaCha8Rng) {
    let selection = select_survey_partners(log, n, rng.next_u64());
    if !selection.iter().any(|(id, _)| log.partner(id).is_some_and(|p| p.is_human)) {
        if let Some((first, _)) = selection.first() {
            if let Some(p) = log.partners.iter_mut().find(|p| &p.partner_id == first) {
                p.is_human = true;
            }
        }
    }
    for (pos, (id, _)) in selection.iter().enumerate() {
        let level = latent[id];
        let closeness = jitter_rating(rng, level);
        let trust_best = jitter_rating(rng, level);
        let p = log.partners.iter_mut().find(|p| &p.partner_id == id).expect("selected from log");
        p.survey_position = Some(pos as u8 + 1);
        if p.is_human {
            p.rating = Rating { closeness: Some(closeness), trust_info: Some(level.get()), trust_best: Some(trust_best) };
        }
    }
}
