//! Synthetic two-class corpus for desk-scale runs.
//!
//! Bonafide: a harmonic stack on a smooth F0 contour (100–180 Hz) with a
//! syllable-rate envelope and a low noise floor. Spoof: the same stack with
//! a segment-wise jittered F0 contour plus a few sinusoidal artifacts at
//! 30–90 Hz, i.e. inside the F0 subband and below any fundamental.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Manifest, ManifestRow};
use super::scores::write_keys;
use super::wav::write_wav;
use super::{io_err, IoError, Result};
use crate::{derive_seed, Label};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub duration_samples: usize,
    pub sample_rate: u32,
    pub seed: u64,
    pub splits: Vec<SplitSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub n_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let split = |name: &str, n| SplitSpec {
            name: name.into(),
            n_per_class: n,
        };
        Self {
            duration_samples: 27_000,
            sample_rate: crate::dsp::DEFAULT_SAMPLE_RATE,
            seed: 0,
            splits: vec![split("train", 50), split("dev", 20), split("eval", 30)],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_samples < crate::dsp::DEFAULT_WIN {
            return Err(IoError::Config(format!(
                "duration_samples must be at least {}",
                crate::dsp::DEFAULT_WIN
            )));
        }
        if self.sample_rate != crate::dsp::DEFAULT_SAMPLE_RATE {
            return Err(IoError::Config("only 16 kHz audio is supported".into()));
        }
        let mut names: Vec<&str> = self.splits.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        names.dedup();
        if self.splits.is_empty() || names.len() != self.splits.len() {
            return Err(IoError::Config("split names must be present and unique".into()));
        }
        for s in &self.splits {
            super::manifest::check_id(&s.name).map_err(IoError::Config)?;
            if s.n_per_class == 0 {
                return Err(IoError::Config(format!("split {} is empty", s.name)));
            }
        }
        Ok(())
    }
}

fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// One utterance of the given class.
pub fn synth_utterance<R: Rng + ?Sized>(label: Label, len: usize, sr: u32, rng: &mut R) -> Vec<f64> {
    let sr = sr as f64;
    let base = rng.random_range(100.0..180.0);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let tilt = rng.random_range(0.8..1.4);
    let env_rate = rng.random_range(2.0..5.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let n_harm = (4000.0 / base) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    // spoof: F0 jumps every ~25 ms and low-frequency tones under the stack
    let seg = (0.025 * sr) as usize;
    let jitter: Vec<f64> = match label {
        Label::Bonafide => vec![0.0; len / seg + 1],
        Label::Spoof => (0..len / seg + 1).map(|_| rng.random_range(-0.08..0.08)).collect(),
    };
    let tones: Vec<(f64, f64, f64)> = match label {
        Label::Bonafide => Vec::new(),
        Label::Spoof => (0..3)
            .map(|_| {
                (
                    rng.random_range(30.0..90.0),
                    rng.random_range(0.05..0.15),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect(),
    };
    let floor = Normal::new(0.0, 0.003).expect("std > 0");

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let f0 = base * (1.0 + 0.03 * (2.0 * PI * vib_rate * t + vib_phase).sin()) * (1.0 + jitter[n / seg]);
        phase += 2.0 * PI * f0 / sr;
        let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
        let mut v = 0.0;
        for (k, ph) in phases.iter().enumerate() {
            let h = (k + 1) as f64;
            v += h.powf(-tilt) * (h * phase + ph).sin();
        }
        v *= env;
        for &(f, a, ph) in &tones {
            v += a * (2.0 * PI * f * t + ph).sin();
        }
        out.push(v + floor.sample(rng));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// `(id, label, samples)` for one split: balanced classes in a seeded
/// order, ids `<split>_<index>`.
pub fn generate_split(spec: &SyntheticSpec, split: &SplitSpec) -> Vec<(String, Label, Vec<f64>)> {
    let tag = name_tag(&split.name);
    let mut labels: Vec<Label> = (0..2 * split.n_per_class)
        .map(|i| if i < split.n_per_class { Label::Bonafide } else { Label::Spoof })
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[tag])));
    labels
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[tag, i as u64 + 1]));
            let x = synth_utterance(label, spec.duration_samples, spec.sample_rate, &mut rng);
            (format!("{}_{i:04}", split.name), label, x)
        })
        .collect()
}

/// Writes `wav/<id>.wav`, `<split>.tsv` (manifest) and `<split>_key.tsv`
/// under `out_dir`; returns the manifest paths.
pub fn write_corpus(out_dir: &Path, spec: &SyntheticSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let mut paths = Vec::new();
    for split in &spec.splits {
        let mut manifest = Manifest::default();
        let mut keys = Vec::new();
        for (id, label, x) in generate_split(spec, split) {
            let rel = PathBuf::from("wav").join(format!("{id}.wav"));
            write_wav(&out_dir.join(&rel), &x)?;
            keys.push((id.clone(), label));
            manifest.rows.push(ManifestRow {
                utterance_id: id,
                audio_path: rel,
                label,
            });
        }
        let mpath = out_dir.join(format!("{}.tsv", split.name));
        fs::write(&mpath, write_manifest(&manifest)).map_err(io_err(&mpath))?;
        let kpath = out_dir.join(format!("{}_key.tsv", split.name));
        fs::write(&kpath, write_keys(&keys)).map_err(io_err(&kpath))?;
        paths.push(mpath);
    }
    Ok(paths)
}
