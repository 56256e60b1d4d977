use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, Result, Spectrogram, Waveform};

/// Periodic Hann window, `0.5 − 0.5·cos(2πn/N)`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided power spectrogram `|X_k|²`, `X_k = Σ w[n]x[n]e^{-2πikn/N}`.
///
/// Frames start at sample 0 and step by `hop`; no padding is applied, so
/// there are `floor((len − win)/hop) + 1` frames and `win/2 + 1` bins.
pub fn stft(w: &Waveform, win: usize, hop: usize) -> Result<Spectrogram> {
    if win == 0 || hop == 0 {
        return Err(DspError::Invalid(format!("win={win}, hop={hop}")));
    }
    let x = w.samples();
    if x.len() < win {
        return Err(DspError::TooShort { len: x.len(), win });
    }
    let frames = (x.len() - win) / hop + 1;
    let freq_bins = win / 2 + 1;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); win];
    let mut bins = vec![0.0; freq_bins * frames];
    for f in 0..frames {
        let frame = &x[f * hop..f * hop + win];
        for ((b, &s), &wv) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(s * wv, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..freq_bins].iter().enumerate() {
            bins[k * frames + f] = c.norm_sqr();
        }
    }
    Ok(Spectrogram {
        bins,
        freq_bins,
        frames,
        hop,
        win,
    })
}
