//! Model inputs: magnitude spectrograms and pooled feature vectors.

pub mod codec;
pub mod level;
pub mod stft;
pub mod store;
pub mod wav;

use crate::error::{Error, Result};

pub use codec::{
    decode_pooled, decode_spectrogram, encode_pooled, encode_spectrogram, load_pooled_feature, load_spectrogram,
    save_pooled_feature, save_spectrogram,
};
pub use level::{level_normalize, DEFAULT_TARGET_DBFS};
pub use stft::{stft_magnitude, FFT_SIZE, HOP, N_BINS};
pub use store::{extract, load_feature_store, load_input, source_path, FeatureStore, InputKind};
pub use wav::{decode_wav, read_wav, write_wav};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
        }
    }
}

/// `T x 257` non-negative magnitudes, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::Shape(format!(
                "spectrogram of {frames}x{bins} needs {} values, got {}",
                frames * bins,
                data.len()
            )));
        }
        if frames == 0 || bins == 0 {
            return Err(Error::Empty("spectrogram"));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format(
                "spectrogram magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(Spectrogram { frames, bins, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub vector: Vec<f64>,
}

/// Either model input representation.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Spectrogram(Spectrogram),
    Pooled(PooledFeature),
}

/// Mean over the time axis of a `frames x dim` row-major matrix.
pub fn time_average(frames: usize, dim: usize, data: &[f64]) -> Result<Vec<f64>> {
    if frames == 0 || dim == 0 {
        return Err(Error::Empty("time_average needs at least one frame"));
    }
    if data.len() != frames * dim {
        return Err(Error::Shape(format!(
            "expected {frames}x{dim} values, got {}",
            data.len()
        )));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv = 1.0 / frames as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

impl Spectrogram {
    pub fn time_average(&self) -> PooledFeature {
        PooledFeature {
            vector: time_average(self.frames, self.bins, &self.data).expect("non-empty by construction"),
        }
    }
}
