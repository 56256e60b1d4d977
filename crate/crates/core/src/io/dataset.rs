use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::manifest::Manifest;
use super::wav::read_wav;
use super::{io_err, IoError, Result};
use crate::dsp::{decode_cache, encode_cache, extract_features, FeatureBlock, FrontendConfig};
use crate::train::Utterance;

pub const CACHE_EXTENSION: &str = "f0sb";

pub fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{CACHE_EXTENSION}"))
}

/// Cached features if the file exists, decodes, and was produced with the
/// same frontend settings; `None` otherwise.
pub fn read_cached_features(path: &Path, cfg: &FrontendConfig) -> Result<Option<FeatureBlock>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(path)(e)),
    };
    Ok(match decode_cache(&bytes) {
        Ok((header, block)) if header == cfg.cache_header() => Some(block),
        _ => None,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeaturizeReport {
    pub written: usize,
    pub skipped: usize,
    /// `(utterance_id, error)` per failed file.
    pub failed: Vec<(String, String)>,
}

/// One cache file per manifest row. Existing files with a matching header
/// are left alone unless `force` is set.
pub fn featurize(manifest: &Manifest, base: &Path, out_dir: &Path, cfg: &FrontendConfig, force: bool) -> Result<FeaturizeReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let header = cfg.cache_header();
    let results: Vec<(String, std::result::Result<bool, String>)> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let out = cache_path(out_dir, &row.utterance_id);
            let run = || -> Result<bool> {
                if !force && read_cached_features(&out, cfg)?.is_some() {
                    return Ok(false);
                }
                let w = read_wav(&manifest.resolve(base, row))?;
                let block = extract_features(&w, cfg)?;
                let bytes = encode_cache(&header, &block)?;
                fs::write(&out, bytes).map_err(io_err(&out))?;
                Ok(true)
            };
            (row.utterance_id.clone(), run().map_err(|e| e.to_string()))
        })
        .collect();
    let mut report = FeaturizeReport::default();
    for (id, r) in results {
        match r {
            Ok(true) => report.written += 1,
            Ok(false) => report.skipped += 1,
            Err(e) => report.failed.push((id, e)),
        }
    }
    Ok(report)
}

/// Features (from the cache when valid, else from audio) and optionally
/// the audio for every manifest row.
pub fn load_utterances(
    manifest: &Manifest,
    base: &Path,
    cfg: &FrontendConfig,
    feature_dir: Option<&Path>,
    with_audio: bool,
) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let cached = match feature_dir {
                Some(d) => read_cached_features(&cache_path(d, &row.utterance_id), cfg)?,
                None => None,
            };
            let audio = if with_audio || cached.is_none() {
                Some(read_wav(&manifest.resolve(base, row))?)
            } else {
                None
            };
            let features = match cached {
                Some(f) => f,
                None => extract_features(audio.as_ref().expect("read above"), cfg)?,
            };
            Ok(Utterance {
                id: row.utterance_id.clone(),
                label: row.label,
                features,
                audio: if with_audio { audio } else { None },
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e: IoError| e)
}
