//! Active-level normalization.
//!
//! The signal is cut into 32 ms blocks (the last block may be shorter). A block
//! is silent when its RMS is more than 40 dB below the loudest block. The gain
//! brings the RMS over the remaining samples to the target level.

use super::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_DBFS: f64 = -26.0;
pub const BLOCK: usize = 512;
pub const SILENCE_GATE_DB: f64 = 40.0;

fn active_rms(samples: &[f64]) -> Option<f64> {
    let blocks: Vec<(f64, usize)> = samples
        .chunks(BLOCK)
        .map(|b| (b.iter().map(|v| v * v).sum::<f64>(), b.len()))
        .collect();
    let peak = blocks
        .iter()
        .map(|&(e, n)| (e / n as f64).sqrt())
        .fold(0.0_f64, f64::max);
    if !(peak.is_finite() && peak > 0.0) {
        return None;
    }
    let gate = peak * 10f64.powf(-SILENCE_GATE_DB / 20.0);
    let (energy, count) = blocks
        .iter()
        .filter(|&&(e, n)| (e / n as f64).sqrt() >= gate)
        .fold((0.0, 0usize), |(se, sn), &(e, n)| (se + e, sn + n));
    Some((energy / count as f64).sqrt())
}

/// Scale `w` so that its RMS over non-silent blocks equals `target_dbfs`
/// (dB relative to full scale 1.0).
pub fn level_normalize(w: &Waveform, target_dbfs: f64) -> Result<Waveform> {
    let rms =
        active_rms(&w.samples).ok_or_else(|| Error::Degenerate("waveform is silent; no level to normalize".into()))?;
    let gain = 10f64.powf(target_dbfs / 20.0) / rms;
    Ok(Waveform {
        samples: w.samples.iter().map(|v| v * gain).collect(),
        sample_rate_hz: w.sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(amplitude: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amplitude * (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect()
    }

    fn db(rms: f64) -> f64 {
        20.0 * rms.log10()
    }

    #[test]
    fn doubles_a_sine() {
        let x = sine(0.1 * 2f64.sqrt(), 16000);
        let out = level_normalize(&Waveform::new(x.clone(), 16000), db(0.2)).unwrap();
        for (a, b) in out.samples.iter().zip(&x) {
            assert!((a - 2.0 * b).abs() <= 1e-6 * 2.0 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn silence_is_excluded() {
        let mut x = sine(0.3, 8192);
        let loud_only = level_normalize(&Waveform::new(x.clone(), 16000), -20.0).unwrap();
        let gain_loud = loud_only.samples[5] / x[5];
        x.extend(std::iter::repeat_n(0.0, 8192));
        let padded = level_normalize(&Waveform::new(x.clone(), 16000), -20.0).unwrap();
        let gain_padded = padded.samples[5] / x[5];
        assert!((gain_loud - gain_padded).abs() < 1e-12 * gain_loud);
    }

    #[test]
    fn hits_target_and_is_idempotent() {
        let mut x = sine(0.05, 4000);
        x.extend(sine(0.4, 6000));
        x.extend(std::iter::repeat_n(1e-7, 3000));
        let w = Waveform::new(x, 16000);
        let once = level_normalize(&w, -26.0).unwrap();
        let target = 10f64.powf(-26.0 / 20.0);
        assert!((active_rms(&once.samples).unwrap() - target).abs() < 1e-6 * target);
        let twice = level_normalize(&once, -26.0).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-9));
        }
    }

    #[test]
    fn all_silent_is_error() {
        assert!(level_normalize(&Waveform::new(vec![0.0; 2000], 16000), -26.0).is_err());
    }
}
