use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate used by every stage of the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio in `[-1, 1]`.
///
/// Construction clips out-of-range samples and remembers how many were
/// clipped so callers can surface a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    clipped: usize,
}

impl Waveform {
    pub fn new(mut samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        let mut clipped = 0;
        for (i, s) in samples.iter_mut().enumerate() {
            if !s.is_finite() {
                return Err(Error::Numerical(format!("non-finite sample at index {i}")));
            }
            if s.abs() > 1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        if clipped > 0 {
            log::warn!("clipped {clipped} samples to [-1, 1]");
        }
        Ok(Self {
            samples,
            sample_rate,
            clipped,
        })
    }

    pub fn zeros(n: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; n],
            sample_rate,
            clipped: 0,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples clipped when this waveform was built.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Returns a copy multiplied by `gain` (clipping applies).
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::param(format!(
                "expected {rate} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Writes 16-bit PCM mono.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample(quantize(s))?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// Reads 16-bit PCM mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Format(format!(
                "{}: expected mono 16-bit PCM, got {} ch / {} bit",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32767.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_is_counted() {
        let w = Waveform::new(vec![0.5, 1.5, -2.0], SAMPLE_RATE).unwrap();
        assert_eq!(w.samples(), &[0.5, 1.0, -1.0]);
        assert_eq!(w.clipped(), 2);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Waveform::new(vec![0.0, f64::NAN], SAMPLE_RATE).is_err());
    }

    #[test]
    fn wav_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(
            (0..400).map(|i| (i as f64 * 0.01).sin() * 0.7).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        w.write_wav(&path).unwrap();
        let r = Waveform::read_wav(&path).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples().iter().zip(w.samples()) {
            assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-12);
        }
        // a second write of the decoded signal is bit-stable
        let path2 = dir.path().join("b.wav");
        r.write_wav(&path2).unwrap();
        assert_eq!(Waveform::read_wav(&path2).unwrap(), r);
    }
}
