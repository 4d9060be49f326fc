//! 64-channel 4th-order gammatone analysis and mask-weighted resynthesis.
//!
//! Each channel is implemented by complex demodulation: the input is shifted
//! down by the centre frequency, low-passed by four identical one-pole
//! sections (the sampled gammatone envelope `t^3 exp(-2 pi b t)`), and
//! shifted back up. The analytic channel signal is stored with its envelope
//! advanced by the low-pass group delay, which aligns all channels in time
//! while leaving the carrier phase at the centre frequency untouched.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::features::{FeatureKind, FeatureMatrix, GAMMATONE_CHANNELS};
use super::mfcc::{frame_count, FRAME_LEN, FRAME_SHIFT};
use crate::corpus::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const GFE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneConfig {
    pub n_channels: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    /// Bandwidth in ERBs.
    pub bandwidth_factor: f64,
    pub frame_len: usize,
    pub frame_shift: usize,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            n_channels: GAMMATONE_CHANNELS,
            low_hz: 50.0,
            high_hz: 8000.0,
            order: 4,
            bandwidth_factor: 1.019,
            frame_len: FRAME_LEN,
            frame_shift: FRAME_SHIFT,
        }
    }
}

pub fn erb_hz(f: f64) -> f64 {
    24.7 * (4.37e-3 * f + 1.0)
}

pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37e-3 * f + 1.0).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

/// Centre frequencies equally spaced on the ERB-rate scale.
pub fn center_frequencies(cfg: &GammatoneConfig) -> Vec<f64> {
    let (lo, hi) = (erb_rate(cfg.low_hz), erb_rate(cfg.high_hz));
    (0..cfg.n_channels)
        .map(|k| erb_rate_to_hz(lo + (hi - lo) * k as f64 / (cfg.n_channels - 1) as f64))
        .collect()
}

#[derive(Debug, Clone)]
struct Channel {
    omega: f64,
    pole: f64,
    delay: usize,
}

impl Channel {
    fn new(cf: f64, cfg: &GammatoneConfig, fs: f64) -> Self {
        let b = cfg.bandwidth_factor * erb_hz(cf);
        let pole = (-2.0 * PI * b / fs).exp();
        let delay = (cfg.order as f64 * pole / (1.0 - pole)).round() as usize;
        Self {
            omega: 2.0 * PI * cf / fs,
            pole,
            delay,
        }
    }

    /// Delay-aligned analytic output; `Re` is the real gammatone response.
    fn analyze(&self, x: &[f64], order: usize) -> Vec<Complex64> {
        let n = x.len();
        let mut state = vec![Complex64::new(0.0, 0.0); order];
        let g = 1.0 - self.pole;
        let mut base = Vec::with_capacity(n + self.delay);
        for t in 0..n + self.delay {
            let xin = if t < n { x[t] } else { 0.0 };
            let (s, c) = (self.omega * t as f64).sin_cos();
            let mut v = Complex64::new(xin * c, -xin * s);
            for st in state.iter_mut() {
                *st = v * g + *st * self.pole;
                v = *st;
            }
            base.push(v);
        }
        (0..n)
            .map(|t| {
                let (s, c) = (self.omega * t as f64).sin_cos();
                2.0 * base[t + self.delay] * Complex64::new(c, s)
            })
            .collect()
    }

    /// Response to a real sinusoid at normalised frequency `w` (rad/sample)
    /// as seen in the real part of the aligned output.
    fn real_response(&self, w: f64, order: usize) -> Complex64 {
        let lowpass = |theta: f64| {
            let h = Complex64::new(1.0 - self.pole, 0.0)
                / (Complex64::new(1.0, 0.0) - self.pole * Complex64::from_polar(1.0, -theta));
            h.powi(order as i32)
        };
        let d = self.delay as f64;
        let pos = lowpass(w - self.omega) * Complex64::from_polar(1.0, (w - self.omega) * d);
        let neg = lowpass(-w - self.omega) * Complex64::from_polar(1.0, (-w - self.omega) * d);
        pos + neg.conj()
    }
}

/// Gammatone time-frequency representation of one signal.
#[derive(Debug, Clone)]
pub struct GammatoneTF {
    center_hz: Vec<f64>,
    analytic: Vec<Vec<Complex64>>,
    energies: Array2<f64>,
    config: GammatoneConfig,
    sample_rate: u32,
}

impl GammatoneTF {
    pub fn center_hz(&self) -> &[f64] {
        &self.center_hz
    }

    pub fn n_channels(&self) -> usize {
        self.center_hz.len()
    }

    pub fn n_samples(&self) -> usize {
        self.analytic.first().map_or(0, Vec::len)
    }

    /// Framed channel energies, frames × channels.
    pub fn energies(&self) -> &Array2<f64> {
        &self.energies
    }

    pub fn frames(&self) -> usize {
        self.energies.nrows()
    }

    pub fn config(&self) -> &GammatoneConfig {
        &self.config
    }

    /// Real, delay-aligned per-channel signals, channels × samples.
    pub fn channel_signals(&self) -> Array2<f64> {
        let n = self.n_samples();
        Array2::from_shape_fn((self.n_channels(), n), |(k, t)| self.analytic[k][t].re)
    }
}

fn framed_energy(sig: &[Complex64], cfg: &GammatoneConfig) -> Vec<f64> {
    (0..frame_count(sig.len(), cfg.frame_len, cfg.frame_shift))
        .map(|n| {
            let s = n * cfg.frame_shift;
            sig[s..s + cfg.frame_len].iter().map(|z| z.re * z.re).sum()
        })
        .collect()
}

fn channels(cfg: &GammatoneConfig, fs: f64) -> (Vec<f64>, Vec<Channel>) {
    let cfs = center_frequencies(cfg);
    let ch = cfs.iter().map(|&cf| Channel::new(cf, cfg, fs)).collect();
    (cfs, ch)
}

pub fn gammatone_analyze(w: &Waveform) -> Result<GammatoneTF> {
    gammatone_analyze_with(w, &GammatoneConfig::default())
}

pub fn gammatone_analyze_with(w: &Waveform, cfg: &GammatoneConfig) -> Result<GammatoneTF> {
    w.require_rate(SAMPLE_RATE)?;
    let (center_hz, chans) = channels(cfg, f64::from(w.sample_rate()));
    let frames = frame_count(w.len(), cfg.frame_len, cfg.frame_shift);
    let mut energies = Array2::zeros((frames, cfg.n_channels));
    let mut analytic = Vec::with_capacity(cfg.n_channels);
    for (k, ch) in chans.iter().enumerate() {
        let z = ch.analyze(w.samples(), cfg.order);
        for (n, e) in framed_energy(&z, cfg).into_iter().enumerate() {
            energies[[n, k]] = e;
        }
        analytic.push(z);
    }
    Ok(GammatoneTF {
        center_hz,
        analytic,
        energies,
        config: cfg.clone(),
        sample_rate: w.sample_rate(),
    })
}

/// Framed channel energies without keeping the channel signals.
pub fn gammatone_energies(w: &Waveform) -> Result<Array2<f64>> {
    w.require_rate(SAMPLE_RATE)?;
    let cfg = GammatoneConfig::default();
    let (_, chans) = channels(&cfg, f64::from(w.sample_rate()));
    let frames = frame_count(w.len(), cfg.frame_len, cfg.frame_shift);
    let mut energies = Array2::zeros((frames, cfg.n_channels));
    for (k, ch) in chans.iter().enumerate() {
        let z = ch.analyze(w.samples(), cfg.order);
        for (n, e) in framed_energy(&z, &cfg).into_iter().enumerate() {
            energies[[n, k]] = e;
        }
    }
    Ok(energies)
}

/// Log gammatone filterbank energies (natural log, floored).
pub fn gfe(tf: &GammatoneTF) -> Result<FeatureMatrix> {
    let data = tf.energies.mapv(|e| e.max(GFE_FLOOR).ln());
    FeatureMatrix::new(
        data,
        FeatureKind::Gfe,
        tf.config.frame_shift as f64 / f64::from(tf.sample_rate),
    )
}

/// Overall gain of the summed, aligned filterbank across the speech band.
fn synthesis_gain(cfg: &GammatoneConfig, fs: f64) -> f64 {
    let (_, chans) = channels(cfg, fs);
    let grid: Vec<f64> = (0..=138).map(|i| 100.0 + 50.0 * i as f64).collect();
    let total: f64 = grid
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f / fs;
            chans
                .iter()
                .map(|c| c.real_response(w, cfg.order))
                .sum::<Complex64>()
                .norm()
        })
        .sum();
    total / grid.len() as f64
}

/// Per-sample gain track for one channel: each frame's mask value weighted by
/// a Hann window over the frame, so adjacent frames cross-fade across their
/// 10 ms overlap.
fn gain_track(mask: impl Fn(usize) -> f64, frames: usize, n: usize, cfg: &GammatoneConfig) -> Vec<f64> {
    let len = cfg.frame_len;
    let hann: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for f in 0..frames {
        let m = mask(f);
        let s = f * cfg.frame_shift;
        for i in 0..len.min(n.saturating_sub(s)) {
            num[s + i] += m * hann[i];
            den[s + i] += hann[i];
        }
    }
    (0..n)
        .map(|t| {
            if den[t] > 1e-9 {
                num[t] / den[t]
            } else {
                mask((t / cfg.frame_shift).min(frames - 1))
            }
        })
        .collect()
}

/// Weights each channel by its frame mask, then sums the aligned channels.
pub fn gammatone_synthesize(tf: &GammatoneTF, mask: &Array2<f64>) -> Result<Waveform> {
    let frames = tf.frames();
    if mask.dim() != (frames, tf.n_channels()) {
        return Err(Error::shape(format!(
            "mask is {:?}, representation has {} frames x {} channels",
            mask.dim(),
            frames,
            tf.n_channels()
        )));
    }
    if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::param(format!("mask value {v} outside [0, 1]")));
    }
    let n = tf.n_samples();
    if frames == 0 {
        return Ok(Waveform::zeros(n, tf.sample_rate));
    }
    let gain = synthesis_gain(&tf.config, f64::from(tf.sample_rate));
    let mut out = vec![0.0; n];
    for (k, z) in tf.analytic.iter().enumerate() {
        let col = mask.column(k);
        if col.iter().all(|&m| m == 0.0) {
            continue;
        }
        let g = gain_track(|f| col[f], frames, n, &tf.config);
        for t in 0..n {
            out[t] += g[t] * z[t].re;
        }
    }
    out.iter_mut().for_each(|v| *v /= gain);
    Waveform::new(out, tf.sample_rate)
}
