//! 16-bit PCM mono WAV at 16 kHz.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn read(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (resampling is not supported)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Data(format!("{}: {} channels, expected mono", path.display(), spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Data(format!(
            "{}: expected 16-bit integer PCM, got {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, SAMPLE_RATE)
}

/// Write with saturation to the 16-bit range.
pub fn write(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    if x.sample_rate() != SAMPLE_RATE {
        return Err(Error::Param(format!("can only write {SAMPLE_RATE} Hz audio, got {}", x.sample_rate())));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in x.samples() {
        writer.write_sample(to_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn to_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_quantised() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = Waveform::new(vec![0.0, 0.5, -0.25, 1.5, -2.0], SAMPLE_RATE).unwrap();
        write(&path, &x).unwrap();
        let y = read(&path).unwrap();
        assert_eq!(y.samples()[..3], [0.0, 0.5, -0.25]);
        assert_eq!(y.samples()[3], 32767.0 / 32768.0);
        assert_eq!(y.samples()[4], -1.0);
    }

    #[test]
    fn other_rates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read(&path), Err(Error::Data(_))));
        assert!(write(&path, &Waveform::zeros(4, 8000)).is_err());
    }
}
