//! File formats and corpus plumbing behind the command-line tool.

mod config;
mod dataset;
mod manifest;
mod scores;
mod synth;
mod wav;

use std::path::Path;

use thiserror::Error;

pub use config::{parse_run_config, DataConfig, RunConfig};
pub use dataset::{cache_path, featurize, load_utterances, read_cached_features, FeaturizeReport, CACHE_EXTENSION};
pub use manifest::{parse_manifest, write_manifest, Manifest, ManifestRow, MANIFEST_HEADER};
pub use scores::{join_keys, parse_keys, parse_scores, write_keys, write_scores};
pub use synth::{generate_split, synth_utterance, write_corpus, SplitSpec, SyntheticSpec};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}, line {line}: {detail}")]
    Parse { what: String, line: usize, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Audio { path: String, detail: String },
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}
