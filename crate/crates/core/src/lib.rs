//! MPIF-Res2Net fake speech detection kit.
//!
//! Audio is turned into 45×600 F0-subband log-power features ([`dsp`]),
//! optionally augmented ([`augment`]), classified by the MPIF-Res2Net
//! network ([`model`]) built on a small reverse-mode autograd engine
//! ([`autograd`]), trained with Adam ([`train`]) and scored with EER and
//! min-tDCF ([`metrics`]). [`io`] holds the file formats and the synthetic
//! corpus generator used by the `mpif` command-line tool.

pub mod augment;
pub mod cli;
pub mod autograd;
pub mod dsp;
pub mod io;
pub mod metrics;
pub mod model;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Utterance class. The discriminant is the network's class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide = 0,
    Spoof = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}, expected bonafide or spoof")),
        }
    }
}

/// Train mode enables augmentation and batch statistics; eval mode uses
/// running statistics and bypasses augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Counter-based seed fan-out: mixes a root seed with a path of counters
/// (splitmix64 finaliser per step), so every consumer of randomness gets an
/// independent, reproducible seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(root.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}
