//! RIFF WAVE input: 16-bit PCM, mono, 16 kHz.

use std::io::Read;
use std::path::Path;

use super::{Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub fn decode_wav<R: Read>(reader: R) -> Result<Waveform> {
    let mut wav = hound::WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "expected 16-bit PCM mono, got {} channel(s), {} bits, {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::Format(format!(
            "expected {SAMPLE_RATE_HZ} Hz, got {} Hz",
            spec.sample_rate
        )));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if samples.is_empty() {
        return Err(Error::Empty("wav file has no samples"));
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(std::io::BufReader::new(file))
}

/// Write 16-bit PCM mono; samples are clipped to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &w.samples {
        out.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    out.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new((0..600).map(|i| ((i % 50) as f64 - 25.0) / 64.0).collect(), 16000);
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples.len(), 600);
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
        let p2 = dir.path().join("b.wav");
        write_wav(&p2, &Waveform::new(vec![0.1; 100], 8000)).unwrap();
        assert!(read_wav(&p2).is_err());
    }

    #[test]
    fn garbage_is_error() {
        assert!(decode_wav(&b"RIFF\x00\x00"[..]).is_err());
    }
}
