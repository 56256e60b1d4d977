use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub root: u64,
    pub shuffle: u64,
    pub specmix: u64,
    pub noise: u64,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub steps: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_eer: f64,
    pub dev_eer_threshold: f64,
    pub dev_min_tdcf: f64,
    pub margin_lambda: f64,
    pub batches: usize,
    /// Batches on which Specmix cut and pasted a band.
    pub specmix_batches: usize,
    /// Batches whose augmented input was bit-identical to the clean input.
    pub identity_batches: usize,
    pub best_epoch: usize,
    pub best_dev_eer: f64,
    /// File name of the best checkpoint, relative to the run directory.
    pub best_checkpoint: String,
    pub seeds: SeedRecord,
    pub config: serde_json::Value,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }

    /// Parse JSON lines; blank lines are skipped, epochs must count up
    /// from 1.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: EpochRecord = serde_json::from_str(line)
                .map_err(|e| TrainError::Data(format!("run log line {}: {e}", n + 1)))?;
            if r.epoch != records.len() + 1 {
                return Err(TrainError::Data(format!(
                    "run log line {}: epoch {} out of sequence",
                    n + 1,
                    r.epoch
                )));
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    /// Lowest dev EER, earliest epoch on ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.dev_eer <= r.dev_eer => Some(b),
                _ => Some(r),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, eer: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            steps: 7 * epoch as u64,
            train_loss: 0.1 / 3.0,
            train_accuracy: 0.75,
            dev_eer: eer,
            dev_eer_threshold: -0.125,
            dev_min_tdcf: 0.2557,
            margin_lambda: 1000.0 / 3.0,
            batches: 7,
            specmix_batches: 3,
            identity_batches: 4,
            best_epoch: 1,
            best_dev_eer: eer,
            best_checkpoint: "best.mpif".into(),
            seeds: SeedRecord {
                root: 1,
                shuffle: u64::MAX,
                specmix: 3,
                noise: 4,
            },
            config: serde_json::json!({"train": {"epochs": 3}}),
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let log = RunLog {
            records: vec![rec(1, 0.2), rec(2, 0.1 + 0.2), rec(3, 2f64.sqrt() / 7.0)],
        };
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);
    }

    #[test]
    fn best_prefers_earliest_on_ties() {
        let log = RunLog {
            records: vec![rec(1, 0.3), rec(2, 0.1), rec(3, 0.1), rec(4, 0.2)],
        };
        assert_eq!(log.best().unwrap().epoch, 2);
        assert!(RunLog::default().best().is_none());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunLog::from_jsonl("{not json}\n").is_err());
        let out_of_order = rec(2, 0.1).to_json_line();
        assert!(RunLog::from_jsonl(&out_of_order).is_err());
    }
}
