//! Short-time magnitude spectrum: 32 ms Hamming window, 16 ms hop at 16 kHz.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Spectrogram, Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const FFT_SIZE: usize = 512;
pub const HOP: usize = 256;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// Periodic Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < FFT_SIZE {
        0
    } else {
        (n_samples - FFT_SIZE) / HOP + 1
    }
}

/// Magnitudes of bins 0..=256 for every full window; a trailing partial
/// window is dropped.
pub fn stft_magnitude(w: &Waveform) -> Result<Spectrogram> {
    if w.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::Format(format!(
            "expected {SAMPLE_RATE_HZ} Hz input, got {} Hz",
            w.sample_rate_hz
        )));
    }
    let frames = frame_count(w.samples.len());
    if frames == 0 {
        return Err(Error::Format(format!(
            "waveform of {} samples is shorter than one {FFT_SIZE}-sample window",
            w.samples.len()
        )));
    }
    let window = hamming(FFT_SIZE);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * N_BINS);
    for t in 0..frames {
        let seg = &w.samples[t * HOP..t * HOP + FFT_SIZE];
        for ((b, &s), &h) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * h, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..N_BINS].iter().map(|c| c.norm()));
    }
    Spectrogram::new(frames, N_BINS, data)
}
