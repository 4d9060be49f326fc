use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::corpus::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Square root of the periodic Hann window; used for both analysis and
    /// synthesis so that the product sums to a constant at 50 % overlap.
    SqrtHann,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::SqrtHann => (0..n)
                .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms frames, 50 % overlap.
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            fft_size: 512,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len || self.fft_size < self.frame_len {
            return Err(Error::param(format!("invalid STFT configuration {self:?}")));
        }
        Ok(())
    }

    fn pad_front(&self) -> usize {
        self.frame_len - self.hop
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// One-sided spectrogram. The signal is zero-padded by `frame_len - hop` on
/// both sides so that every input sample is fully covered by the overlap-add.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }
}

fn padded_len(cfg: &StftConfig, n: usize) -> usize {
    let min = n + 2 * cfg.pad_front();
    let frames = if min <= cfg.frame_len {
        1
    } else {
        (min - cfg.frame_len).div_ceil(cfg.hop) + 1
    };
    (frames - 1) * cfg.hop + cfg.frame_len
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n = w.len();
    let pad = cfg.pad_front();
    let total = padded_len(cfg, n);
    let mut padded = vec![0.0; total];
    padded[pad..pad + n].copy_from_slice(w.samples());
    let frames = (total - cfg.frame_len) / cfg.hop + 1;
    let window = cfg.window.coefficients(cfg.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let bins = cfg.bins();
    let mut data = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for m in 0..frames {
        let s = m * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..cfg.frame_len {
            buf[i].re = padded[s + i] * window[i];
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[[m, k]] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        data,
        config: cfg.clone(),
        signal_len: n,
        sample_rate: w.sample_rate(),
    })
}

/// Weighted overlap-add with explicit window-sum compensation.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = &s.config;
    cfg.validate()?;
    if s.bins() != cfg.bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, config implies {}",
            s.bins(),
            cfg.bins()
        )));
    }
    let total = padded_len(cfg, s.signal_len);
    let expected_frames = (total - cfg.frame_len) / cfg.hop + 1;
    if s.frames() != expected_frames {
        return Err(Error::shape(format!(
            "spectrogram has {} frames, signal length implies {expected_frames}",
            s.frames()
        )));
    }
    let window = cfg.window.coefficients(cfg.frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(cfg.fft_size);
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let n_fft = cfg.fft_size;
    for m in 0..s.frames() {
        for k in 0..cfg.bins() {
            buf[k] = s.data[[m, k]];
        }
        // Hermitian completion; DC and Nyquist must be real.
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        for k in cfg.bins()..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let start = m * cfg.hop;
        for i in 0..cfg.frame_len {
            out[start + i] += buf[i].re / n_fft as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let pad = cfg.pad_front();
    let samples = (pad..pad + s.signal_len)
        .map(|i| if norm[i] > 1e-12 { out[i] / norm[i] } else { 0.0 })
        .collect();
    Waveform::new(samples, s.sample_rate)
}
