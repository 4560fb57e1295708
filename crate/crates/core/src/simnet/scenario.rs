//! Batches of pairwise runs over one generated population.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::{generate_population, Device, SimConfig};
use super::protocol::{run_pairwise, NetConfig};
use super::SimError;
use crate::psi::TrustCombination;
use crate::trustmetric::{Combinator, Predictor, QuantileTable};

/// Which device pairs to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairingPlan {
    /// Every unordered pair.
    Mesh,
    /// This many distinct unordered pairs, drawn with the scenario seed.
    Random(usize),
    /// Device-id pairs, run in the given order.
    Explicit(Vec<(String, String)>),
}

impl FromStr for PairingPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mesh" {
            return Ok(PairingPlan::Mesh);
        }
        if let Some(n) = s.strip_prefix("random:") {
            return n.parse().map(PairingPlan::Random).map_err(|_| format!("bad pair count in {s:?}"));
        }
        Err(format!("expected mesh or random:N, got {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub table: QuantileTable,
    pub combinator: Combinator,
    pub favorites_filter: bool,
    pub combination: TrustCombination,
    pub net: NetConfig,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            table: QuantileTable::survey_reference(),
            combinator: Combinator::OrAny,
            favorites_filter: false,
            combination: TrustCombination::default(),
            net: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    pub mutual_count: usize,
    pub est_a: f64,
    pub est_b: f64,
    pub level_a: u8,
    pub level_b: u8,
}

impl PairOutcome {
    pub fn symmetry_gap(&self) -> f64 {
        (self.est_a - self.est_b).abs()
    }
}

/// Symmetry gaps are bucketed in tenths; the last bucket is closed.
pub const GAP_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub pairs: usize,
    /// Estimates per trust level 1..=5, counting both sides of every pair.
    pub level_histogram: [u64; 5],
    pub gap_histogram: [u64; GAP_BUCKETS],
    pub mean_estimate: f64,
    pub mean_gap: f64,
    pub insufficient_evidence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub devices: usize,
    pub outcomes: Vec<PairOutcome>,
    pub summary: ScenarioSummary,
}

impl ScenarioReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,mutual_count,est_a,est_b,level_a,level_b\n");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{}",
                o.pair_id, o.mutual_count, o.est_a, o.est_b, o.level_a, o.level_b
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn summarize(outcomes: &[PairOutcome], insufficient_evidence: u64) -> ScenarioSummary {
    let mut level_histogram = [0u64; 5];
    let mut gap_histogram = [0u64; GAP_BUCKETS];
    let mut est_sum = 0.0;
    let mut gap_sum = 0.0;
    for o in outcomes {
        level_histogram[usize::from(o.level_a) - 1] += 1;
        level_histogram[usize::from(o.level_b) - 1] += 1;
        let gap = o.symmetry_gap();
        gap_histogram[((gap * GAP_BUCKETS as f64) as usize).min(GAP_BUCKETS - 1)] += 1;
        est_sum += o.est_a + o.est_b;
        gap_sum += gap;
    }
    let n = outcomes.len() as f64;
    ScenarioSummary {
        pairs: outcomes.len(),
        level_histogram,
        gap_histogram,
        mean_estimate: if outcomes.is_empty() { 0.0 } else { est_sum / (2.0 * n) },
        mean_gap: if outcomes.is_empty() { 0.0 } else { gap_sum / n },
        insufficient_evidence,
    }
}

fn resolve_pairs(devices: &[Device], plan: &PairingPlan, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>, SimError> {
    let n = devices.len();
    let mesh = || (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)));
    match plan {
        PairingPlan::Mesh => Ok(mesh().collect()),
        PairingPlan::Random(k) => {
            let all: Vec<(usize, usize)> = mesh().collect();
            let mut picked = sample(rng, all.len(), (*k).min(all.len())).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| all[i]).collect())
        }
        PairingPlan::Explicit(pairs) => {
            let find = |id: &str| {
                devices
                    .iter()
                    .position(|d| d.profile.device_id == id)
                    .ok_or_else(|| SimError::UnknownDevice(id.to_string()))
            };
            pairs.iter().map(|(a, b)| Ok((find(a)?, find(b)?))).collect()
        }
    }
}

/// Generates the population for `config` and runs every pair in `plan`.
pub fn run_scenario(config: &SimConfig, plan: &PairingPlan, opts: &ScenarioOptions) -> Result<ScenarioReport, SimError> {
    let devices = generate_population(config)?;
    run_scenario_on(config.seed, &devices, plan, opts)
}

/// Like [`run_scenario`] but over an existing population.
pub fn run_scenario_on(
    seed: u64,
    devices: &[Device],
    plan: &PairingPlan,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport, SimError> {
    // separate stream from the population generator
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pairs = resolve_pairs(devices, plan, &mut rng)?;
    let predictor = Predictor::new(&opts.table, opts.combinator).with_favorites_filter(opts.favorites_filter);

    let mut outcomes = Vec::with_capacity(pairs.len());
    let mut insufficient = 0;
    for (i, j) in pairs {
        let (a, b) = (&devices[i], &devices[j]);
        let run = run_pairwise(a, b, &predictor, &opts.combination, &opts.net, rng.next_u64())?;
        log::debug!("{}:{} -> {:.3}/{:.3}", a.profile.device_id, b.profile.device_id, run.estimate_a.combined, run.estimate_b.combined);
        insufficient += u64::from(run.estimate_a.insufficient_evidence) + u64::from(run.estimate_b.insufficient_evidence);
        outcomes.push(PairOutcome {
            pair_id: format!("{}:{}", a.profile.device_id, b.profile.device_id),
            mutual_count: run.estimate_a.mutual_count,
            est_a: run.estimate_a.combined,
            est_b: run.estimate_b.combined,
            level_a: run.estimate_a.level.get(),
            level_b: run.estimate_b.level.get(),
        });
    }
    let summary = summarize(&outcomes, insufficient);
    Ok(ScenarioReport { seed, devices: devices.len(), outcomes, summary })
}
