//! Training-time augmentation: random Specmix on feature blocks and
//! Rawboost-style additive noise on waveforms.

mod noise;
mod specmix;

use thiserror::Error;

pub use noise::{
    apply_noise, isd_events, isd_noise, realised_snr_db, ssi_noise, NoiseConfig, NoiseMode,
    SILENCE_REFERENCE_POWER,
};
pub use specmix::{
    apply_plan, random_derangement, random_specmix, SpecmixConfig, SpecmixPlan, SpecmixReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("augmentation input: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;
