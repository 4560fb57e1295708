//! Shared inputs for the benchmarks.

use socialtrust::simnet::{generate_population, Device, SimConfig};
use socialtrust::{extract_all, FeatureVector, Rating};

pub fn population(n_devices: usize, seed: u64) -> Vec<Device> {
    generate_population(&SimConfig { n_devices, seed, ..SimConfig::default() }).expect("default config is valid")
}

/// Every partner of every device with its feature vector and rating.
pub fn rated_partners(devices: &[Device]) -> Vec<(FeatureVector, Rating)> {
    devices
        .iter()
        .flat_map(|d| {
            let features = extract_all(&d.log);
            d.log.partners.iter().map(move |p| (features[&p.partner_id].clone(), p.rating)).collect::<Vec<_>>()
        })
        .collect()
}
