use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::features::{FeatureKind, FeatureMatrix};
use crate::corpus::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// 20 ms frames with a 10 ms shift at 16 kHz.
pub const FRAME_LEN: usize = 320;
pub const FRAME_SHIFT: usize = 160;
pub const DELTA_WINDOW: usize = 2;

pub fn frame_count(n_samples: usize, frame_len: usize, shift: usize) -> usize {
    if n_samples < frame_len {
        0
    } else {
        (n_samples - frame_len) / shift + 1
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub n_filters: usize,
    pub n_ceps: usize,
    /// Keep c0 as the first coefficient.
    pub include_c0: bool,
    pub pre_emphasis: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    /// 19 static coefficients without c0; 57 dims after deltas.
    fn default() -> Self {
        Self {
            frame_len: FRAME_LEN,
            frame_shift: FRAME_SHIFT,
            fft_size: 512,
            n_filters: 26,
            n_ceps: 19,
            include_c0: false,
            pre_emphasis: 0.97,
            low_hz: 0.0,
            high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    /// 31 coefficients including c0, used by the DNN-SE input stack.
    pub fn enhancement() -> Self {
        Self {
            n_filters: 40,
            n_ceps: 31,
            include_c0: true,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let first = usize::from(!self.include_c0);
        if self.n_ceps + first > self.n_filters {
            return Err(Error::param(format!(
                "{} cepstra need more than {} mel filters",
                self.n_ceps, self.n_filters
            )));
        }
        if self.fft_size < self.frame_len || self.frame_shift == 0 {
            return Err(Error::param("invalid MFCC framing"));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided power spectrum, `n_filters ×
/// (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &MfccConfig, sample_rate: u32) -> Array2<f64> {
    let bins = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
    let edges: Vec<f64> = (0..cfg.n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_filters + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_filters, bins));
    for m in 0..cfg.n_filters {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * f64::from(sample_rate) / cfg.fft_size as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II rows for the requested cepstral indices.
fn dct_matrix(n_in: usize, indices: &[usize]) -> Array2<f64> {
    let mut d = Array2::zeros((indices.len(), n_in));
    for (r, &k) in indices.iter().enumerate() {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for m in 0..n_in {
            d[[r, m]] = scale * (PI * k as f64 * (m as f64 + 0.5) / n_in as f64).cos();
        }
    }
    d
}

pub(crate) struct PowerSpectrum {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    fft_size: usize,
}

impl PowerSpectrum {
    pub(crate) fn new(frame_len: usize, fft_size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Self {
            fft,
            window: hamming(frame_len),
            fft_size,
        }
    }

    pub(crate) fn compute(&self, frame: &[f64], out: &mut [f64], scratch: &mut Vec<Complex64>) {
        scratch.clear();
        scratch.extend(
            frame
                .iter()
                .zip(&self.window)
                .map(|(x, w)| Complex64::new(x * w, 0.0)),
        );
        scratch.resize(self.fft_size, Complex64::new(0.0, 0.0));
        self.fft.process(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.norm_sqr();
        }
    }
}

/// Static MFCCs: pre-emphasis, Hamming window, power spectrum, mel
/// filterbank, floored log, DCT-II.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    w.require_rate(SAMPLE_RATE)?;
    cfg.validate()?;
    let x = w.samples();
    let n_frames = frame_count(x.len(), cfg.frame_len, cfg.frame_shift);
    if n_frames == 0 {
        return Err(Error::param(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            x.len(),
            cfg.frame_len
        )));
    }
    let mut emph = Vec::with_capacity(x.len());
    emph.push(x[0]);
    emph.extend(x.windows(2).map(|p| p[1] - cfg.pre_emphasis * p[0]));

    let fb = mel_filterbank(cfg, w.sample_rate());
    let indices: Vec<usize> = if cfg.include_c0 {
        (0..cfg.n_ceps).collect()
    } else {
        (1..=cfg.n_ceps).collect()
    };
    let dct = dct_matrix(cfg.n_filters, &indices);
    let ps = PowerSpectrum::new(cfg.frame_len, cfg.fft_size);
    let bins = cfg.fft_size / 2 + 1;

    let mut logmel = Array2::zeros((n_frames, cfg.n_filters));
    let mut power = vec![0.0; bins];
    let mut scratch = Vec::with_capacity(cfg.fft_size);
    for t in 0..n_frames {
        let start = t * cfg.frame_shift;
        ps.compute(&emph[start..start + cfg.frame_len], &mut power, &mut scratch);
        for m in 0..cfg.n_filters {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
            logmel[[t, m]] = e.max(cfg.log_floor).ln();
        }
    }
    let ceps = logmel.dot(&dct.t());
    FeatureMatrix::new(
        ceps,
        FeatureKind::MfccStatic,
        cfg.frame_shift as f64 / f64::from(w.sample_rate()),
    )
}

fn regression(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let n = x.nrows();
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..n {
        let mut row = out.row_mut(t);
        for k in 1..=window {
            let ahead = x.row((t + k).min(n - 1));
            let behind = x.row(t.saturating_sub(k));
            row.scaled_add(k as f64 / denom, &(&ahead - &behind));
        }
    }
    out
}

/// Appends deltas and double deltas (regression over ±2 frames, edge frames
/// replicated).
pub fn add_deltas(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let need = 2 * DELTA_WINDOW + 1;
    if f.frames() < need {
        return Err(Error::param(format!(
            "deltas need at least {need} frames, got {}",
            f.frames()
        )));
    }
    let d1 = regression(f.data(), DELTA_WINDOW);
    let d2 = regression(&d1, DELTA_WINDOW);
    let data = ndarray::concatenate(ndarray::Axis(1), &[f.data().view(), d1.view(), d2.view()])
        .map_err(|e| Error::shape(e.to_string()))?;
    let kind = if f.kind() == FeatureKind::MfccStatic && 3 * f.dim() == super::MFCC_FULL_DIM {
        FeatureKind::MfccFull
    } else {
        FeatureKind::Combined
    };
    FeatureMatrix::new(data, kind, f.frame_shift_s())
}
