//! Score files (`trial_id<TAB>score`) and key files
//! (`trial_id<TAB>bonafide|spoof`), one trial per line, no header.

use std::collections::{HashMap, HashSet};

use super::manifest::check_id;
use super::{IoError, Result};
use crate::metrics::TrialScore;
use crate::Label;

fn parse_pairs<T>(text: &str, what: &str, value: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<(String, T)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| IoError::Parse {
            what: what.into(),
            line: n + 1,
            detail,
        };
        let mut parts = line.split('\t');
        let (Some(id), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected 2 tab-separated fields".into()));
        };
        check_id(id).map_err(err)?;
        let v = value(v).map_err(err)?;
        if !seen.insert(id.to_string()) {
            return Err(err(format!("duplicate trial id {id}")));
        }
        out.push((id.to_string(), v));
    }
    Ok(out)
}

pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>> {
    parse_pairs(text, "score file", |v| match v.parse::<f64>() {
        Ok(s) if s.is_finite() => Ok(s),
        Ok(s) => Err(format!("non-finite score {s}")),
        Err(e) => Err(format!("bad score {v:?}: {e}")),
    })
}

pub fn parse_keys(text: &str) -> Result<Vec<(String, Label)>> {
    parse_pairs(text, "key file", |v| v.parse::<Label>())
}

/// Sorted by trial id. Scores are written in shortest round-trip form, so
/// parsing the file gives back the same bits.
pub fn write_scores(scores: &[TrialScore]) -> String {
    let mut rows: Vec<&TrialScore> = scores.iter().collect();
    rows.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    rows.iter().map(|t| format!("{}\t{}\n", t.trial_id, t.score)).collect()
}

pub fn write_keys(keys: &[(String, Label)]) -> String {
    let mut rows: Vec<&(String, Label)> = keys.iter().collect();
    rows.sort();
    rows.iter().map(|(id, l)| format!("{id}\t{l}\n")).collect()
}

/// Attach labels; every scored trial must have a key and vice versa.
pub fn join_keys(scores: &[(String, f64)], keys: &[(String, Label)]) -> Result<Vec<TrialScore>> {
    let map: HashMap<&str, Label> = keys.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut out = Vec::with_capacity(scores.len());
    for (id, s) in scores {
        let label = map
            .get(id.as_str())
            .ok_or_else(|| IoError::Mismatch(format!("trial {id} has no key")))?;
        out.push(TrialScore::new(id.clone(), *s, Some(*label)));
    }
    if keys.len() != scores.len() {
        let scored: HashSet<&str> = scores.iter().map(|(id, _)| id.as_str()).collect();
        let missing = keys.iter().find(|(id, _)| !scored.contains(id.as_str())).expect("sizes differ");
        return Err(IoError::Mismatch(format!("key {} has no score", missing.0)));
    }
    Ok(out)
}
