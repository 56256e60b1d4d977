//! Waveform → F0-subband log-power-spectrum features.
//!
//! `stft` (Hann window, no centre padding) → `f0_subband` (lowest 45 bins,
//! ≈0–400 Hz at 16 kHz) → `log_power` → `fix_frames` (tile or truncate to
//! 600 frames).

mod cache;
mod stft;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{decode_cache, encode_cache, CacheHeader, CACHE_MAGIC, CACHE_VERSION};
pub use stft::{hann_window, stft};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_WIN: usize = 1728;
pub const DEFAULT_HOP: usize = 130;
pub const F0_BINS: usize = 45;
pub const FIXED_FRAMES: usize = 600;
pub const DEFAULT_FLOOR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("waveform has {len} samples, at least {win} needed for one frame")]
    TooShort { len: usize, win: usize },
    #[error("spectrogram has {have} bins, {need} requested")]
    InsufficientBins { have: usize, need: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("feature cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(DspError::Invalid("empty waveform".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DspError::Invalid("waveform contains non-finite samples".into()));
        }
        if sample_rate == 0 {
            return Err(DspError::Invalid("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Real `freq_bins × frames` matrix, row-major (one row per frequency bin).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<f64>,
    pub freq_bins: usize,
    pub frames: usize,
    pub hop: usize,
    pub win: usize,
}

impl Spectrogram {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.bins[k * self.frames..(k + 1) * self.frames]
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.bins[bin * self.frames + frame]
    }

    /// Centre frequency of bin `k` in Hz.
    pub fn bin_frequency(k: usize, win: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / win as f64
    }
}

/// Fixed-size network input: `rows × cols` single-precision values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl FeatureBlock {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(DspError::Invalid(format!(
                "feature block {rows}x{cols} cannot hold {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DspError::Invalid("feature block has non-finite values".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Per-block standardisation to zero mean, unit variance.
    pub fn standardized(&self) -> Self {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-12).sqrt();
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| ((v as f64 - mean) * inv) as f32).collect(),
        }
    }
}

/// `ln(max(power, floor_eps))` elementwise.
pub fn log_power(spec: &Spectrogram, floor_eps: f64) -> Spectrogram {
    Spectrogram {
        bins: spec.bins.iter().map(|&p| p.max(floor_eps).ln()).collect(),
        ..spec.clone()
    }
}

/// Keep the lowest `rows` frequency bins.
pub fn f0_subband(spec: &Spectrogram, rows: usize) -> Result<Spectrogram> {
    if spec.freq_bins < rows || rows == 0 {
        return Err(DspError::InsufficientBins {
            have: spec.freq_bins,
            need: rows,
        });
    }
    Ok(Spectrogram {
        bins: spec.bins[..rows * spec.frames].to_vec(),
        freq_bins: rows,
        ..spec.clone()
    })
}

/// Truncate to the first `target` frames, or tile along time and truncate.
/// Column `k` of the result is source column `k mod frames`.
pub fn fix_frames(spec: &Spectrogram, target: usize) -> Result<FeatureBlock> {
    if spec.frames == 0 || target == 0 {
        return Err(DspError::Invalid("fix_frames needs at least one frame".into()));
    }
    let mut values = Vec::with_capacity(spec.freq_bins * target);
    for k in 0..spec.freq_bins {
        let row = spec.row(k);
        values.extend(row.iter().cycle().take(target).map(|&v| v as f32));
    }
    FeatureBlock::new(spec.freq_bins, target, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

impl WindowKind {
    pub fn id(self) -> u8 {
        match self {
            WindowKind::Hann => 0,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (id == 0).then_some(WindowKind::Hann)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub win: usize,
    pub hop: usize,
    pub rows: usize,
    pub frames: usize,
    pub floor_eps: f64,
    pub window: WindowKind,
    pub standardize: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win: DEFAULT_WIN,
            hop: DEFAULT_HOP,
            rows: F0_BINS,
            frames: FIXED_FRAMES,
            floor_eps: DEFAULT_FLOOR_EPS,
            window: WindowKind::Hann,
            standardize: false,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win < 2 || self.hop == 0 || self.rows == 0 || self.frames == 0 {
            return Err(DspError::Invalid(format!("frontend config {self:?}")));
        }
        if self.rows > self.win / 2 + 1 {
            return Err(DspError::InsufficientBins {
                have: self.win / 2 + 1,
                need: self.rows,
            });
        }
        if !(self.floor_eps > 0.0 && self.floor_eps.is_finite()) {
            return Err(DspError::Invalid("floor_eps must be positive".into()));
        }
        if self.rows > u16::MAX as usize || self.frames > u16::MAX as usize {
            return Err(DspError::Invalid("feature dimensions exceed cache limits".into()));
        }
        Ok(())
    }

    pub fn cache_header(&self) -> CacheHeader {
        CacheHeader {
            version: CACHE_VERSION,
            win: self.win as u32,
            hop: self.hop as u32,
            rows: self.rows as u16,
            cols: self.frames as u16,
            eps: self.floor_eps,
            window: self.window,
        }
    }
}

/// Full waveform → feature-block pipeline.
pub fn extract_features(w: &Waveform, cfg: &FrontendConfig) -> Result<FeatureBlock> {
    cfg.validate()?;
    let spec = stft(w, cfg.win, cfg.hop)?;
    let sub = f0_subband(&spec, cfg.rows)?;
    let lps = log_power(&sub, cfg.floor_eps);
    let block = fix_frames(&lps, cfg.frames)?;
    Ok(if cfg.standardize {
        block.standardized()
    } else {
        block
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_from(rows: usize, frames: usize, f: impl Fn(usize, usize) -> f64) -> Spectrogram {
        let mut bins = Vec::new();
        for r in 0..rows {
            for c in 0..frames {
                bins.push(f(r, c));
            }
        }
        Spectrogram {
            bins,
            freq_bins: rows,
            frames,
            hop: DEFAULT_HOP,
            win: DEFAULT_WIN,
        }
    }

    #[test]
    fn log_power_floor_and_unity() {
        let s = spec_from(1, 3, |_, c| [1.0, 0.0, 1e-20][c]);
        let l = log_power(&s, 1e-12);
        assert_eq!(l.bins[0], 0.0);
        assert_eq!(l.bins[1], 1e-12f64.ln());
        assert_eq!(l.bins[2], 1e-12f64.ln());
    }

    #[test]
    fn log_power_is_monotone() {
        let s = spec_from(7, 13, |r, c| ((r * 31 + c * 17) % 23) as f64 * 0.37);
        let l = log_power(&s, 1e-12);
        for i in 0..s.bins.len() {
            for j in 0..s.bins.len() {
                if s.bins[i] <= s.bins[j] {
                    assert!(l.bins[i] <= l.bins[j]);
                }
            }
        }
    }

    #[test]
    fn subband_keeps_low_rows() {
        let s = spec_from(865, 195, |r, c| (r * 1000 + c) as f64);
        let sub = f0_subband(&s, F0_BINS).unwrap();
        assert_eq!((sub.freq_bins, sub.frames), (45, 195));
        assert_eq!(sub.row(10), s.row(10));
        assert!(matches!(
            f0_subband(&spec_from(30, 4, |_, _| 0.0), F0_BINS),
            Err(DspError::InsufficientBins { .. })
        ));
    }

    #[test]
    fn bin_44_is_near_400_hz() {
        let f = Spectrogram::bin_frequency(44, DEFAULT_WIN, DEFAULT_SAMPLE_RATE);
        assert!((f - 407.407).abs() < 1e-3);
    }

    #[test]
    fn fix_frames_tiles_truncates_or_keeps() {
        let s = spec_from(45, 195, |r, c| (r * 1000 + c) as f64);
        let b = fix_frames(&s, 600).unwrap();
        for r in [0, 17, 44] {
            for k in 0..600 {
                assert_eq!(b.get(r, k), s.get(r, k % 195) as f32);
            }
        }
        let s600 = spec_from(45, 600, |r, c| (r + c) as f64);
        let b600 = fix_frames(&s600, 600).unwrap();
        assert!(s600.bins.iter().zip(b600.values()).all(|(a, b)| *a as f32 == *b));
        let s900 = spec_from(45, 900, |r, c| (r * 900 + c) as f64);
        let b900 = fix_frames(&s900, 600).unwrap();
        for r in 0..45 {
            assert_eq!(b900.row(r), &s900.row(r)[..600].iter().map(|&v| v as f32).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn pipeline_emits_fixed_block() {
        let samples: Vec<f64> = (0..27_000).map(|n| (n as f64 * 0.05).sin() * 0.3).collect();
        let w = Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap();
        let cfg = FrontendConfig::default();
        let a = extract_features(&w, &cfg).unwrap();
        let b = extract_features(&w, &cfg).unwrap();
        assert_eq!((a.rows(), a.cols()), (45, 600));
        assert!(a.values().iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
        let short = Waveform::new(vec![0.1; 1000], DEFAULT_SAMPLE_RATE).unwrap();
        assert!(matches!(
            extract_features(&short, &cfg),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn standardized_block_has_unit_moments() {
        let b = FeatureBlock::new(3, 4, (0..12).map(|v| v as f32 * 1.5 - 2.0).collect()).unwrap();
        let s = b.standardized();
        let mean: f64 = s.values().iter().map(|&v| v as f64).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16_000).is_err());
    }
}
