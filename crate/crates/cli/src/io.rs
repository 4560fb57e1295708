//! File formats shared between subcommands.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use socialtrust::{FeatureVector, ParticipantLog, Rating};
use tempfile::NamedTempFile;

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_logs(path: &Path) -> Result<Vec<ParticipantLog>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut logs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log = serde_json::from_str(&line).with_context(|| format!("{}:{}: bad log record", path.display(), n + 1))?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn logs_to_jsonl(logs: &[ParticipantLog]) -> String {
    logs.iter().map(|l| serde_json::to_string(l).expect("logs serialize") + "\n").collect()
}

/// One row of the features table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub partner_id: String,
    pub num_calls: u64,
    pub num_msgs: u64,
    pub dur_calls: u64,
    pub len_msgs: u64,
    pub rel_calls: f64,
    pub rel_msgs: f64,
    pub avg_call_dur: f64,
    pub avg_msg_len: f64,
    pub interactions_per_day: f64,
    pub is_favorite: bool,
    pub rating_trust_info: Option<u8>,
}

impl FeatureRow {
    pub fn new(participant_id: &str, partner_id: &str, fv: &FeatureVector, rating: &Rating) -> Self {
        FeatureRow {
            participant_id: participant_id.to_string(),
            partner_id: partner_id.to_string(),
            num_calls: fv.num_calls,
            num_msgs: fv.num_msgs,
            dur_calls: fv.dur_calls,
            len_msgs: fv.len_msgs,
            rel_calls: fv.rel_calls,
            rel_msgs: fv.rel_msgs,
            avg_call_dur: fv.avg_call_dur,
            avg_msg_len: fv.avg_msg_len,
            interactions_per_day: fv.interactions_per_day,
            is_favorite: fv.is_favorite,
            rating_trust_info: rating.trust_info,
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            num_calls: self.num_calls,
            num_msgs: self.num_msgs,
            dur_calls: self.dur_calls,
            len_msgs: self.len_msgs,
            rel_calls: self.rel_calls,
            rel_msgs: self.rel_msgs,
            avg_call_dur: self.avg_call_dur,
            avg_msg_len: self.avg_msg_len,
            interactions_per_day: self.interactions_per_day,
            is_favorite: self.is_favorite,
        }
    }

    pub fn rating(&self) -> Rating {
        Rating { trust_info: self.rating_trust_info, ..Rating::default() }
    }
}

pub fn read_feature_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: bad feature row {}", path.display(), i + 1)))
        .collect()
}

/// Serializes `rows` as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(writer.into_inner().map_err(|e| e.into_error())?)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("outputs serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn feature_rows_round_trip_through_csv() {
        let fv = FeatureVector { num_calls: 3, rel_calls: 12.5, is_favorite: true, ..FeatureVector::default() };
        let rows = vec![
            FeatureRow::new("p1", "a", &fv, &Rating { trust_info: Some(4), ..Rating::default() }),
            FeatureRow::new("p1", "b", &FeatureVector::default(), &Rating::default()),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_atomic(&path, &to_csv(&rows).unwrap()).unwrap();
        let back = read_feature_rows(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].features(), fv);
        assert_eq!(back[1].rating_trust_info, None);
    }
}
