//! 16-bit mono PCM WAV at 16 kHz, samples scaled to [-1, 1).

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{io_err, IoError, Result};
use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};

const SCALE: f64 = 32768.0;

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: DEFAULT_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

pub fn decode_wav(bytes: &[u8], name: &str) -> Result<Waveform> {
    let bad = |detail: String| IoError::Audio {
        path: name.to_string(),
        detail,
    };
    let reader = WavReader::new(Cursor::new(bytes)).map_err(|e| bad(e.to_string()))?;
    let s = reader.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != SampleFormat::Int {
        return Err(bad(format!(
            "need 16-bit mono PCM, got {} channel(s), {} bits, {:?}",
            s.channels, s.bits_per_sample, s.sample_format
        )));
    }
    if s.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(bad(format!("need {DEFAULT_SAMPLE_RATE} Hz, got {}", s.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|v| v.map(|x| x as f64 / SCALE))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Waveform::new(samples, s.sample_rate).map_err(|e| bad(e.to_string()))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes, &path.display().to_string())
}

/// Quantise to 16 bits (round to nearest, clipped).
pub fn encode_wav(samples: &[f64]) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec()).expect("in-memory writer");
        for &x in samples {
            let q = (x * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            w.write_sample(q).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    buf.into_inner()
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    std::fs::write(path, encode_wav(samples)).map_err(io_err(path))
}
