use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};

pub const NO_SPECMIX_LABEL: &str = "1(no Specmix)";
const CSV_HEADER: [&str; 4] = ["system", "p_hyper", "eer", "min_tdcf"];

/// One training+evaluation run of the p_hyper sweep. `eer` is a fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub system: String,
    pub p_hyper: f64,
    pub eer: f64,
    pub min_tdcf: f64,
}

fn row_label(p: f64) -> String {
    if p == 1.0 {
        NO_SPECMIX_LABEL.to_string()
    } else {
        format!("{p}")
    }
}

/// Grid with one row per p_hyper (ascending) and an (EER %, min t-DCF)
/// column pair per system, in first-seen order.
pub fn ablation_report(runs: &[AblationRow]) -> Result<String> {
    if runs.is_empty() {
        return Err(MetricError::Report("no runs to report".into()));
    }
    let mut systems: Vec<&str> = Vec::new();
    for r in runs {
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let mut ps: Vec<f64> = runs.iter().map(|r| r.p_hyper).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();

    let mut header = vec!["(p_hyper)".to_string()];
    for s in &systems {
        header.push(format!("{s} EER(%)"));
        header.push(format!("{s} min t-DCF"));
    }
    let mut rows = vec![header];
    for &p in &ps {
        let mut row = vec![row_label(p)];
        for s in &systems {
            match runs.iter().find(|r| r.system == *s && r.p_hyper == p) {
                Some(r) => {
                    row.push(format!("{:.2}", 100.0 * r.eer));
                    row.push(format!("{:.4}", r.min_tdcf));
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    Ok(out)
}

/// Long-format CSV: `system,p_hyper,eer,min_tdcf`, rows sorted by
/// (p_hyper, system order of appearance).
pub fn write_ablation_csv(runs: &[AblationRow]) -> Result<String> {
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| a.p_hyper.total_cmp(&b.p_hyper));
    // header written by hand so an empty table still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| MetricError::Report(e.to_string()))?;
    for r in &sorted {
        w.serialize(r).map_err(|e| MetricError::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| MetricError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricError::Report(e.to_string()))
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<AblationRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| MetricError::Report(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(MetricError::Report(format!("unexpected CSV header {headers:?}")));
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<AblationRow>() {
        let row = rec.map_err(|e| MetricError::Report(e.to_string()))?;
        if !(row.p_hyper.is_finite() && row.eer.is_finite() && row.min_tdcf.is_finite()) {
            return Err(MetricError::Report("non-finite value in CSV".into()));
        }
        if !seen.insert((row.system.clone(), row.p_hyper.to_bits())) {
            return Err(MetricError::Report(format!(
                "duplicate row for {} at p_hyper {}",
                row.system, row.p_hyper
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
