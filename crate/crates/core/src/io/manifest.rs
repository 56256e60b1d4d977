use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{IoError, Result};
use crate::Label;

pub const MANIFEST_HEADER: [&str; 3] = ["utterance_id", "audio_path", "label"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Audio path of `row`, resolved against the manifest's directory.
    pub fn resolve(&self, base: &Path, row: &ManifestRow) -> PathBuf {
        if row.audio_path.is_absolute() {
            row.audio_path.clone()
        } else {
            base.join(&row.audio_path)
        }
    }
}

/// Ids double as cache file names, so they are limited to a portable set.
pub(crate) fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() || id == "." || id == ".." {
        return Err(format!("invalid utterance id {id:?}"));
    }
    if let Some(c) = id.chars().find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))) {
        return Err(format!("utterance id {id:?} contains {c:?}"));
    }
    Ok(())
}

/// Tab-separated `utterance_id  audio_path  label` with that header line.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let err = |line: usize, detail: String| IoError::Parse {
        what: "manifest".into(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, header) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    if header.trim_end_matches('\r').split('\t').collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(err(n + 1, format!("header must be {:?}", MANIFEST_HEADER.join("\t"))));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let [id, path, label] = fields[..] else {
            return Err(err(n + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        check_id(id).map_err(|d| err(n + 1, d))?;
        if path.is_empty() {
            return Err(err(n + 1, "empty audio path".into()));
        }
        let label: Label = label.parse().map_err(|d| err(n + 1, d))?;
        if !seen.insert(id.to_string()) {
            return Err(err(n + 1, format!("duplicate utterance id {id}")));
        }
        rows.push(ManifestRow {
            utterance_id: id.to_string(),
            audio_path: PathBuf::from(path),
            label,
        });
    }
    if rows.is_empty() {
        return Err(err(n + 1, "manifest has no rows".into()));
    }
    Ok(Manifest { rows })
}

pub fn write_manifest(m: &Manifest) -> String {
    let mut out = MANIFEST_HEADER.join("\t") + "\n";
    for r in &m.rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.utterance_id, r.audio_path.display(), r.label));
    }
    out
}
