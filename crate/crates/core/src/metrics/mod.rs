//! Countermeasure evaluation: equal error rate and minimum normalised
//! tandem detection cost, plus the ablation-table report.
//!
//! Scores are "higher = more bonafide". A trial is accepted as bonafide at
//! threshold `t` when `score >= t`.

mod eer;
mod report;
mod tdcf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Label;

pub use eer::{compute_eer, error_rates, Eer};
pub use report::{ablation_report, parse_ablation_csv, write_ablation_csv, AblationRow, NO_SPECMIX_LABEL};
pub use tdcf::{compute_min_tdcf, tdcf_curve, TdcfCosts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("need at least one bonafide and one spoof trial (got {bonafide} / {spoof})")]
    SingleClass { bonafide: usize, spoof: usize },
    #[error("trial {0:?} has no label")]
    Unlabeled(String),
    #[error("trial {0:?} has a non-finite score")]
    NonFinite(String),
    #[error("invalid t-DCF cost model: {0}")]
    Costs(String),
    #[error("report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_id: String,
    pub score: f64,
    pub label: Option<Label>,
}

impl TrialScore {
    pub fn new(trial_id: impl Into<String>, score: f64, label: Option<Label>) -> Self {
        Self {
            trial_id: trial_id.into(),
            score,
            label,
        }
    }
}

/// Split labelled scores by class, each sorted ascending.
pub(crate) fn split_by_class(scores: &[TrialScore]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for t in scores {
        if !t.score.is_finite() {
            return Err(MetricError::NonFinite(t.trial_id.clone()));
        }
        match t.label {
            Some(Label::Bonafide) => bona.push(t.score),
            Some(Label::Spoof) => spoof.push(t.score),
            None => return Err(MetricError::Unlabeled(t.trial_id.clone())),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(MetricError::SingleClass {
            bonafide: bona.len(),
            spoof: spoof.len(),
        });
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    Ok((bona, spoof))
}

/// Convenience constructor for labelled trials from two score lists.
pub fn labelled(bonafide: &[f64], spoof: &[f64]) -> Vec<TrialScore> {
    bonafide
        .iter()
        .enumerate()
        .map(|(i, &s)| TrialScore::new(format!("b{i}"), s, Some(Label::Bonafide)))
        .chain(
            spoof
                .iter()
                .enumerate()
                .map(|(i, &s)| TrialScore::new(format!("s{i}"), s, Some(Label::Spoof))),
        )
        .collect()
}
