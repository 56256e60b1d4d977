//! Rawboost-style additive waveform noise.
//!
//! * SSI: white Gaussian noise coloured by a random FIR filter, scaled to a
//!   target SNR drawn uniformly from `snr_db_range`.
//! * ISD: Poisson-distributed single-sample impulses whose amplitude is a
//!   random multiple of the signal value at the impulse position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::dsp::Waveform;

/// Signal power assumed for silent input when scaling SSI noise.
pub const SILENCE_REFERENCE_POWER: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    None,
    Isd,
    Ssi,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub snr_db_range: [f64; 2],
    /// Expected ISD events per second.
    pub isd_event_rate: f64,
    /// Impulse gain is drawn from `U(-isd_gain, isd_gain)`.
    pub isd_gain: f64,
    pub fir_order: usize,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::None,
            snr_db_range: [10.0, 40.0],
            isd_event_rate: 10.0,
            isd_gain: 2.0,
            fir_order: 5,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(AugmentError::InvalidConfig(format!(
                "snr_db_range must be finite with lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.isd_event_rate > 0.0 && self.isd_event_rate.is_finite()) {
            return Err(AugmentError::InvalidConfig("isd_event_rate must be positive".into()));
        }
        if !(self.isd_gain > 0.0 && self.isd_gain.is_finite()) {
            return Err(AugmentError::InvalidConfig("isd_gain must be positive".into()));
        }
        Ok(())
    }

    /// Same settings, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream);
        rng
    }
}

const SSI_STREAM: u64 = 1;
const ISD_STREAM: u64 = 2;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn snr_db(signal: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(signal).map(|(a, b)| a - b).collect();
    10.0 * (power(signal) / power(&noise)).log10()
}

/// Realised SNR in dB of `noisy` relative to `signal`.
pub fn realised_snr_db(signal: &Waveform, noisy: &Waveform) -> f64 {
    snr_db(signal.samples(), noisy.samples())
}

/// Stationary signal-independent noise. Identity unless mode is SSI or both.
pub fn ssi_noise(w: &Waveform, cfg: &NoiseConfig) -> Result<Waveform> {
    cfg.validate()?;
    if !matches!(cfg.mode, NoiseMode::Ssi | NoiseMode::Both) {
        return Ok(w.clone());
    }
    let mut rng = cfg.rng(SSI_STREAM);
    let n = w.len();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let taps: Vec<f64> = (0..=cfg.fir_order).map(|_| normal.sample(&mut rng)).collect();
    let white: Vec<f64> = (0..n + cfg.fir_order).map(|_| normal.sample(&mut rng)).collect();
    let coloured: Vec<f64> = (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, b)| b * white[i + cfg.fir_order - k])
                .sum()
        })
        .collect();
    let [lo, hi] = cfg.snr_db_range;
    let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let ps = power(w.samples());
    let reference = if ps > 0.0 { ps } else { SILENCE_REFERENCE_POWER };
    let pn = power(&coloured);
    let gain = if pn > 0.0 {
        (reference / 10f64.powf(snr / 10.0) / pn).sqrt()
    } else {
        0.0
    };
    let out = w
        .samples()
        .iter()
        .zip(&coloured)
        .map(|(s, v)| s + gain * v)
        .collect();
    Waveform::new(out, w.sample_rate()).map_err(|e| AugmentError::Shape(e.to_string()))
}

/// Impulse positions and gains for an ISD pass over `len` samples.
pub fn isd_events(len: usize, sample_rate: u32, cfg: &NoiseConfig) -> Vec<(usize, f64)> {
    let mut rng = cfg.rng(ISD_STREAM);
    let lambda = cfg.isd_event_rate * len as f64 / sample_rate as f64;
    let count = if lambda > 0.0 {
        Poisson::new(lambda).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    (0..count)
        .map(|_| {
            let pos = rng.random_range(0..len);
            let gain = rng.random_range(-cfg.isd_gain..=cfg.isd_gain);
            (pos, gain)
        })
        .collect()
}

/// Impulsive signal-dependent noise. Identity unless mode is ISD or both.
pub fn isd_noise(w: &Waveform, cfg: &NoiseConfig) -> Result<Waveform> {
    cfg.validate()?;
    if !matches!(cfg.mode, NoiseMode::Isd | NoiseMode::Both) {
        return Ok(w.clone());
    }
    let x = w.samples();
    let mut out = x.to_vec();
    for (pos, gain) in isd_events(x.len(), w.sample_rate(), cfg) {
        out[pos] += gain * x[pos];
    }
    Waveform::new(out, w.sample_rate()).map_err(|e| AugmentError::Shape(e.to_string()))
}

/// ISD then SSI, each gated by the mode.
pub fn apply_noise(w: &Waveform, cfg: &NoiseConfig) -> Result<Waveform> {
    if cfg.mode == NoiseMode::None {
        return Ok(w.clone());
    }
    let w = isd_noise(w, cfg)?;
    ssi_noise(&w, cfg)
}
