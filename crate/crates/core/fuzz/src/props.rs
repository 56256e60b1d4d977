//! Decode properties shared by the fuzz targets and the seed replay test.
//! Decoders must never panic; anything they accept must re-encode to a
//! fixed point.

use mpif::dsp::{decode_cache, encode_cache};
use mpif::io::{decode_wav, encode_wav, parse_keys, parse_manifest, parse_run_config, parse_scores, write_keys, write_manifest, write_scores};
use mpif::metrics::{parse_ablation_csv, write_ablation_csv, TrialScore};
use mpif::model::{decode_checkpoint, encode_checkpoint};
use mpif::train::RunLog;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

/// `encode(decode(x))` is stable under another decode/encode pass.
fn fixed_point<T, E: std::fmt::Display>(data: &[u8], decode: impl Fn(&[u8]) -> Result<T, E>, encode: impl Fn(&T) -> Vec<u8>) {
    if let Ok(v) = decode(data) {
        let once = encode(&v);
        let again = decode(&once).unwrap_or_else(|e| panic!("re-encoded {:?} fails to decode: {e}", String::from_utf8_lossy(&once)));
        assert!(encode(&again) == once, "encoding is not a fixed point");
    }
}

fn fixed_point_text<T, E: std::fmt::Display>(data: &[u8], parse: impl Fn(&str) -> Result<T, E>, write: impl Fn(&T) -> String) {
    if let Some(s) = text(data) {
        fixed_point(
            s.as_bytes(),
            |b| parse(std::str::from_utf8(b).expect("written text is utf-8")),
            |v| write(v).into_bytes(),
        );
    }
}

pub fn cache(data: &[u8]) {
    fixed_point(data, decode_cache, |(h, b)| encode_cache(h, b).expect("decoded cache re-encodes"));
}

pub fn checkpoint(data: &[u8]) {
    fixed_point(data, decode_checkpoint, |c| encode_checkpoint(c).expect("decoded checkpoint re-encodes"));
}

pub fn wav(data: &[u8]) {
    if let Ok(w) = decode_wav(data, "fuzz") {
        let back = decode_wav(&encode_wav(w.samples()), "fuzz").expect("re-encoded wav decodes");
        assert!(back.samples() == w.samples(), "16-bit samples do not survive a round trip");
    }
}

pub fn manifest(data: &[u8]) {
    fixed_point_text(data, parse_manifest, write_manifest);
}

pub fn scores(data: &[u8]) {
    fixed_point_text(data, parse_scores, |v| {
        let rows: Vec<TrialScore> = v.iter().map(|(id, s)| TrialScore::new(id.clone(), *s, None)).collect();
        write_scores(&rows)
    });
}

pub fn keys(data: &[u8]) {
    fixed_point_text(data, parse_keys, |v| write_keys(v));
}

pub fn run_config(data: &[u8]) {
    fixed_point_text(data, parse_run_config, |c| c.to_canonical_json());
}

pub fn ablation_csv(data: &[u8]) {
    fixed_point_text(data, parse_ablation_csv, |r| write_ablation_csv(r).expect("parsed rows re-encode"));
}

pub fn runlog(data: &[u8]) {
    fixed_point_text(data, RunLog::from_jsonl, RunLog::to_jsonl);
}
