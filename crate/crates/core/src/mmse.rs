//! Short-time spectral amplitude MMSE enhancement.
//!
//! Per STFT frame: a speech-presence-probability noise tracker updates the
//! noise PSD, the decision-directed rule gives the a priori SNR, and the
//! Ephraim-Malah amplitude gain is applied to the noisy spectrum.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use ndarray::{Array1, ArrayView1};
use rustfft::num_complex::Complex64;
use rand_distr::{Distribution, Exp1};
use rustfft::FftPlanner;

use crate::corpus::Waveform;
use crate::dsp::{istft, stft, StftConfig};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Samples assumed to be speech-free at the start of every input.
pub const INIT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Fixed a priori SNR assumed under speech presence.
    pub xi_h1_db: f64,
    pub prior_h1: f64,
    /// Smoothing of the noise PSD update.
    pub alpha_noise: f64,
    /// Smoothing of the presence-probability stagnation detector.
    pub alpha_presence: f64,
    /// Above this smoothed presence the posterior is capped, so the tracker
    /// cannot lock up after a noise level increase.
    pub presence_cap: f64,
    pub psd_floor: f64,
    /// Divide out the tracker's equilibrium bias on stationary Gaussian noise.
    pub bias_compensation: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            xi_h1_db: 15.0,
            prior_h1: 0.5,
            alpha_noise: 0.8,
            alpha_presence: 0.9,
            presence_cap: 0.99,
            psd_floor: 1e-10,
            bias_compensation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseConfig {
    pub stft: StftConfig,
    pub dd_alpha: f64,
    pub xi_min_db: f64,
    pub gain_floor_db: f64,
    /// Hop between the averaged periodograms of the noise initialisation.
    pub init_hop: usize,
    /// Half-width in bins of the moving average applied to the initial PSD.
    pub init_smooth_bins: usize,
    pub tracker: TrackerConfig,
}

impl Default for MmseConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            dd_alpha: 0.98,
            xi_min_db: -25.0,
            gain_floor_db: -20.0,
            init_hop: 244,
            init_smooth_bins: 4,
            tracker: TrackerConfig::default(),
        }
    }
}

impl MmseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dd_alpha >= 0.0 && self.dd_alpha < 1.0) {
            return Err(Error::param(format!("dd_alpha {} not in [0, 1)", self.dd_alpha)));
        }
        if self.init_hop == 0 || self.stft.frame_len > INIT_SAMPLES {
            return Err(Error::param("noise initialisation window does not fit the frame"));
        }
        let t = &self.tracker;
        for (name, v) in [
            ("prior_h1", t.prior_h1),
            ("alpha_noise", t.alpha_noise),
            ("alpha_presence", t.alpha_presence),
            ("presence_cap", t.presence_cap),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} {v} not in (0, 1)")));
            }
        }
        if !(t.psd_floor > 0.0) {
            return Err(Error::param("psd_floor must be positive"));
        }
        Ok(())
    }

    pub fn xi_min(&self) -> f64 {
        10f64.powf(self.xi_min_db / 10.0)
    }

    pub fn gain_floor(&self) -> f64 {
        10f64.powf(self.gain_floor_db / 20.0)
    }
}

/// Exponentially scaled modified Bessel functions `(e^-x I0(x), e^-x I1(x))`
/// for `x >= 0`.
pub fn bessel_i0e_i1e(x: f64) -> (f64, f64) {
    if x < 20.0 {
        let q = x * x / 4.0;
        let (mut t0, mut t1) = (1.0, x / 2.0);
        let (mut s0, mut s1) = (t0, t1);
        for k in 1..200 {
            let kf = k as f64;
            t0 *= q / (kf * kf);
            t1 *= q / (kf * (kf + 1.0));
            s0 += t0;
            s1 += t1;
            if t0 < 1e-17 * s0 && t1 < 1e-17 * s1.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let e = (-x).exp();
        (s0 * e, s1 * e)
    } else {
        // Hankel expansion; terms shrink monotonically for these x.
        let asym = |mu: f64| {
            let (mut term, mut sum) = (1.0, 1.0);
            for k in 1..30 {
                let kf = k as f64;
                let odd = 2.0 * kf - 1.0;
                term *= -(mu - odd * odd) / (kf * 8.0 * x);
                sum += term;
                if term.abs() < 1e-17 {
                    break;
                }
            }
            sum / (2.0 * PI * x).sqrt()
        };
        (asym(0.0), asym(4.0))
    }
}

/// Ephraim-Malah MMSE short-time spectral amplitude gain, unclamped.
pub fn stsa_gain_raw(xi: f64, gamma: f64) -> f64 {
    if xi <= 0.0 {
        return 0.0;
    }
    if gamma <= 0.0 {
        return f64::INFINITY;
    }
    let v = xi / (1.0 + xi) * gamma;
    let (i0, i1) = bessel_i0e_i1e(v / 2.0);
    (PI.sqrt() / 2.0) * (v.sqrt() / gamma) * ((1.0 + v) * i0 + v * i1)
}

/// Gain clamped to `[gain_floor, 1]`.
pub fn stsa_gain(xi: f64, gamma: f64, gain_floor: f64) -> f64 {
    stsa_gain_raw(xi, gamma).clamp(gain_floor, 1.0)
}

impl TrackerConfig {
    fn presence(&self, ratio: f64) -> f64 {
        let xi_h1 = 10f64.powf(self.xi_h1_db / 10.0);
        let odds = (1.0 - self.prior_h1) / self.prior_h1 * (1.0 + xi_h1);
        1.0 / (1.0 + odds * (-ratio * xi_h1 / (1.0 + xi_h1)).exp())
    }

    /// Mean ratio of the tracked PSD to the true PSD on stationary Gaussian
    /// noise (exponentially distributed periodogram bins), estimated once
    /// per configuration by a seeded simulation of the tracker itself.
    pub fn equilibrium_bias(&self) -> f64 {
        if !self.bias_compensation {
            return 1.0;
        }
        static CACHE: OnceLock<Mutex<HashMap<[u64; 5], f64>>> = OnceLock::new();
        let key = [
            self.xi_h1_db.to_bits(),
            self.prior_h1.to_bits(),
            self.alpha_noise.to_bits(),
            self.alpha_presence.to_bits(),
            self.presence_cap.to_bits(),
        ];
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(&c) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return c;
        }
        let c = self.simulate_bias();
        cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, c);
        c
    }

    fn simulate_bias(&self) -> f64 {
        const BINS: usize = 256;
        const WARMUP: usize = 200;
        const FRAMES: usize = 2000;
        let mut rng = rng_for(0x5350_5042, &[]);
        let mut lambda = vec![1.0; BINS];
        let mut pbar = vec![0.0; BINS];
        let mut sum = 0.0;
        for t in 0..WARMUP + FRAMES {
            for k in 0..BINS {
                let y: f64 = Exp1.sample(&mut rng);
                let mut p = self.presence(y / lambda[k]);
                pbar[k] = self.alpha_presence * pbar[k] + (1.0 - self.alpha_presence) * p;
                if pbar[k] > self.presence_cap {
                    p = p.min(self.presence_cap);
                }
                lambda[k] = self.alpha_noise * lambda[k]
                    + (1.0 - self.alpha_noise) * ((1.0 - p) * y + p * lambda[k]);
                if t >= WARMUP {
                    sum += lambda[k];
                }
            }
        }
        sum / (BINS * FRAMES) as f64
    }
}

/// Per-utterance enhancement state.
#[derive(Debug, Clone)]
pub struct MmseState {
    /// Tracker recursion value; the estimate is this divided by `bias`.
    raw_psd: Array1<f64>,
    noise_psd: Array1<f64>,
    bias: f64,
    /// `G^2 * gamma` of the previous frame; `None` before the first frame.
    prev_ratio: Option<Array1<f64>>,
    smoothed_presence: Array1<f64>,
    cfg: MmseConfig,
}

impl MmseState {
    pub fn new(noise_psd: Array1<f64>, cfg: MmseConfig) -> Result<Self> {
        cfg.validate()?;
        if noise_psd.len() != cfg.stft.bins() {
            return Err(Error::shape(format!(
                "noise PSD has {} bins, STFT has {}",
                noise_psd.len(),
                cfg.stft.bins()
            )));
        }
        if noise_psd.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::param("noise PSD must be finite and non-negative"));
        }
        let floor = cfg.tracker.psd_floor;
        let bias = cfg.tracker.equilibrium_bias();
        let noise_psd = noise_psd.mapv(|p| p.max(floor));
        Ok(Self {
            raw_psd: &noise_psd * bias,
            noise_psd,
            bias,
            prev_ratio: None,
            smoothed_presence: Array1::zeros(cfg.stft.bins()),
            cfg,
        })
    }

    pub fn noise_psd(&self) -> &Array1<f64> {
        &self.noise_psd
    }

    pub fn config(&self) -> &MmseConfig {
        &self.cfg
    }

    /// Soft, presence-weighted recursive update of the noise PSD from one
    /// noisy periodogram.
    pub fn update_noise_psd(&mut self, periodogram: ArrayView1<f64>) {
        let t = &self.cfg.tracker;
        for k in 0..self.raw_psd.len() {
            let lambda = self.raw_psd[k];
            let y = periodogram[k];
            let mut p = t.presence(y / lambda);
            let pbar = t.alpha_presence * self.smoothed_presence[k] + (1.0 - t.alpha_presence) * p;
            self.smoothed_presence[k] = pbar;
            if pbar > t.presence_cap {
                p = p.min(t.presence_cap);
            }
            let noise_power = (1.0 - p) * y + p * lambda;
            self.raw_psd[k] = (t.alpha_noise * lambda + (1.0 - t.alpha_noise) * noise_power)
                .max(t.psd_floor * self.bias);
            self.noise_psd[k] = self.raw_psd[k] / self.bias;
        }
    }

    /// A priori SNR by the decision-directed rule, floored at `xi_min`.
    pub fn decision_directed_xi(&self, gamma: ArrayView1<f64>) -> Array1<f64> {
        let a = self.cfg.dd_alpha;
        let xi_min = self.cfg.xi_min();
        Array1::from_shape_fn(gamma.len(), |k| {
            let ml = (gamma[k] - 1.0).max(0.0);
            let prev = self.prev_ratio.as_ref().map_or(ml, |r| r[k]);
            (a * prev + (1.0 - a) * ml).max(xi_min)
        })
    }

    /// Records the gains applied in the current frame for the next
    /// decision-directed estimate.
    pub fn commit(&mut self, gain: ArrayView1<f64>, gamma: ArrayView1<f64>) {
        self.prev_ratio = Some(Array1::from_shape_fn(gain.len(), |k| gain[k] * gain[k] * gamma[k]));
    }

    /// Gains for one noisy periodogram; advances the tracker and the
    /// decision-directed memory.
    pub fn process_frame(&mut self, periodogram: ArrayView1<f64>) -> Array1<f64> {
        self.update_noise_psd(periodogram);
        let gamma = &periodogram / &self.noise_psd;
        let xi = self.decision_directed_xi(gamma.view());
        let floor = self.cfg.gain_floor();
        let gain = Array1::from_shape_fn(gamma.len(), |k| stsa_gain(xi[k], gamma[k], floor));
        self.commit(gain.view(), gamma.view());
        gain
    }
}

/// Average windowed periodogram of frames lying within the first
/// [`INIT_SAMPLES`] samples, smoothed across neighbouring bins.
pub fn init_noise_psd(w: &Waveform, cfg: &MmseConfig) -> Result<Array1<f64>> {
    cfg.validate()?;
    if w.len() < INIT_SAMPLES {
        return Err(Error::param(format!(
            "need at least {INIT_SAMPLES} samples for noise initialisation, got {}",
            w.len()
        )));
    }
    let s = &cfg.stft;
    let window = s.window.coefficients(s.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(s.fft_size);
    let mut acc = Array1::<f64>::zeros(s.bins());
    let starts: Vec<usize> = (0..=INIT_SAMPLES - s.frame_len).step_by(cfg.init_hop).collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); s.fft_size];
    for &start in &starts {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..s.frame_len {
            buf[i].re = w.samples()[start + i] * window[i];
        }
        fft.process(&mut buf);
        for k in 0..s.bins() {
            acc[k] += buf[k].norm_sqr();
        }
    }
    acc /= starts.len() as f64;
    // A real signal's periodogram is mirror-symmetric about DC and Nyquist,
    // so the window reflects there instead of truncating.
    let h = cfg.init_smooth_bins as i64;
    let last = acc.len() as i64 - 1;
    let reflect = |i: i64| {
        let i = i.abs();
        (if i > last { 2 * last - i } else { i }) as usize
    };
    Ok(Array1::from_shape_fn(acc.len(), |k| {
        let k = k as i64;
        (k - h..=k + h).map(|i| acc[reflect(i)]).sum::<f64>() / (2 * h + 1) as f64
    }))
}

pub fn enhance_mmse(w: &Waveform) -> Result<Waveform> {
    enhance_mmse_with(w, &MmseConfig::default())
}

/// Enhances `w` using only the signal itself; the first [`INIT_SAMPLES`]
/// samples seed the noise estimate.
pub fn enhance_mmse_with(w: &Waveform, cfg: &MmseConfig) -> Result<Waveform> {
    let mut state = MmseState::new(init_noise_psd(w, cfg)?, cfg.clone())?;
    let mut spec = stft(w, &cfg.stft)?;
    for mut row in spec.data.rows_mut() {
        let periodogram = row.mapv(|c| c.norm_sqr());
        let gain = state.process_frame(periodogram.view());
        row.iter_mut().zip(&gain).for_each(|(c, g)| *c *= *g);
    }
    istft(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_speaker_utterance, gen_white_noise, SAMPLE_RATE};
    use crate::dsp::{energy_vad, segmental_snr, VadConfig, FRAME_LEN, FRAME_SHIFT};
    use crate::mixer::mix_at_snr;
    use ndarray::Array2;
    use proptest::prelude::*;

    /// Posterior-mean amplitude gain by direct 2-D quadrature over clean
    /// amplitude and phase, with unit noise variance and a real observation.
    fn quadrature_gain(xi: f64, gamma: f64) -> f64 {
        let r = gamma.sqrt();
        let a_max = r + 12.0 * (1.0 + xi.sqrt());
        let (na, nphi) = (6000usize, 512usize);
        let da = a_max / na as f64;
        let dphi = 2.0 * PI / nphi as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=na {
            let a = i as f64 * da;
            let wa = if i == 0 || i == na { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let mut inner = 0.0;
            for j in 0..nphi {
                let phi = j as f64 * dphi;
                let dist = r * r + a * a - 2.0 * r * a * phi.cos();
                inner += (-dist - a * a / xi).exp();
            }
            let f = wa * a * inner;
            num += f * a;
            den += f;
        }
        num / den / r
    }

    #[test]
    fn bessel_against_known_values() {
        // I0(1) = 1.2660658777520082, I1(1) = 0.5651591039924851
        let (i0, i1) = bessel_i0e_i1e(1.0);
        assert!((i0 * 1f64.exp() - 1.266_065_877_752_008_2).abs() < 1e-14);
        assert!((i1 * 1f64.exp() - 0.565_159_103_992_485_1).abs() < 1e-14);
        let (i0, i1) = bessel_i0e_i1e(0.0);
        assert_eq!((i0, i1), (1.0, 0.0));
        // both branches agree at the switch point
        let lo = bessel_i0e_i1e(20.0 - 1e-12);
        let hi = bessel_i0e_i1e(20.0);
        assert!((lo.0 - hi.0).abs() < 1e-12 && (lo.1 - hi.1).abs() < 1e-12);
    }

    #[test]
    fn gain_matches_quadrature() {
        for (xi, gamma) in [(1.0, 1.0), (0.3, 2.0), (5.0, 8.0), (0.05, 0.5)] {
            let q = quadrature_gain(xi, gamma);
            let g = stsa_gain_raw(xi, gamma);
            assert!((q - g).abs() < 1e-6, "xi={xi} gamma={gamma}: {g} vs {q}");
        }
    }

    #[test]
    fn gain_limits() {
        let floor = 0.1;
        assert_eq!(stsa_gain(0.0, 3.0, floor), floor);
        assert!((stsa_gain(1e9, 50.0, floor) - 1.0).abs() < 1e-2);
        assert_eq!(stsa_gain(1e-3, 0.0, floor), 1.0);
        assert!(stsa_gain(1e-3, 1e12, floor).is_finite());
    }

    fn state(alpha: f64) -> MmseState {
        let cfg = MmseConfig {
            dd_alpha: alpha,
            ..MmseConfig::default()
        };
        MmseState::new(Array1::ones(257), cfg).unwrap()
    }

    #[test]
    fn dd_formula_edges() {
        let s = state(0.0);
        let xi = s.decision_directed_xi(Array1::from_elem(257, 2.0).view());
        assert!(xi.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let s = state(0.98);
        let xi = s.decision_directed_xi(Array1::zeros(257).view());
        assert!(xi.iter().all(|&x| x == s.config().xi_min()));
    }

    #[test]
    fn dd_steady_state_fixed_point() {
        let g = 3.0;
        let alpha = 0.98;
        let floor = MmseConfig::default().gain_floor();
        let oracle_gain = |xi: f64| quadrature_gain(xi, g).clamp(floor, 1.0);
        // root of f(xi) = alpha G(xi)^2 g + (1-alpha)(g-1) - xi by bisection
        let f = |xi: f64| alpha * oracle_gain(xi).powi(2) * g + (1.0 - alpha) * (g - 1.0) - xi;
        let (mut lo, mut hi) = (1e-3, 10.0);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fixed = 0.5 * (lo + hi);

        let mut s = state(alpha);
        let gamma257 = Array1::from_elem(257, g);
        let mut xi = 0.0;
        for _ in 0..500 {
            let x = s.decision_directed_xi(gamma257.view());
            let gain = x.mapv(|v| stsa_gain(v, g, floor));
            s.commit(gain.view(), gamma257.view());
            xi = x[0];
        }
        assert!((xi - fixed).abs() < 1e-6, "{xi} vs {fixed}");
    }

    fn white_periodogram_mean(sigma2: f64, cfg: &MmseConfig) -> f64 {
        let w = cfg.stft.window.coefficients(cfg.stft.frame_len);
        sigma2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn frame_periodograms(w: &Waveform, cfg: &MmseConfig) -> Array2<f64> {
        stft(w, &cfg.stft).unwrap().data.mapv(|c| c.norm_sqr())
    }

    #[test]
    fn init_on_white_noise_is_flat() {
        let cfg = MmseConfig::default();
        for seed in 0..50 {
            let psd = init_noise_psd(&gen_white_noise(seed, 4000).unwrap(), &cfg).unwrap();
            let max = psd.iter().cloned().fold(f64::MIN, f64::max);
            let min = psd.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max / min < 10.0, "seed {seed}: ratio {}", max / min);
        }
    }

    #[test]
    fn init_uses_only_the_prefix() {
        let cfg = MmseConfig::default();
        let noise = gen_white_noise(3, 1000).unwrap();
        let mut x = noise.samples().to_vec();
        x.extend(gen_speaker_utterance(1, 1, 1, 1.0).unwrap().samples());
        let joined = init_noise_psd(&Waveform::new(x, SAMPLE_RATE).unwrap(), &cfg).unwrap();
        assert_eq!(joined, init_noise_psd(&noise, &cfg).unwrap());
        let zeros = init_noise_psd(&Waveform::zeros(2000, SAMPLE_RATE), &cfg).unwrap();
        assert!(zeros.iter().all(|&p| p == 0.0));
        assert!(init_noise_psd(&Waveform::zeros(999, SAMPLE_RATE), &cfg).is_err());
    }

    #[test]
    fn tracker_follows_stationary_noise() {
        let cfg = MmseConfig::default();
        let sigma = 0.05;
        let w = gen_white_noise(5, 32000).unwrap();
        let w = w.scaled(sigma / w.rms()).unwrap();
        let truth = white_periodogram_mean(sigma * sigma, &cfg);
        let frames = frame_periodograms(&w, &cfg);
        let mut s = MmseState::new(init_noise_psd(&w, &cfg).unwrap(), cfg).unwrap();
        let mut avg = Array1::<f64>::zeros(257);
        // skip the zero-padded edge frames
        for t in 2..102 {
            s.update_noise_psd(frames.row(t));
            if t >= 52 {
                avg += s.noise_psd();
            }
        }
        avg /= 50.0;
        // DC and Nyquist periodograms are real-valued (one degree of freedom)
        for (k, p) in avg.iter().enumerate().take(256).skip(1) {
            let err = 10.0 * (p / truth).log10();
            assert!(err.abs() < 3.0, "bin {k}: {err:.2} dB");
        }
    }

    #[test]
    fn tracker_step_response() {
        let cfg = MmseConfig::default();
        let hop = cfg.stft.hop;
        let a = gen_white_noise(8, 16000).unwrap();
        let a = a.scaled(0.02 / a.rms()).unwrap();
        let b = gen_white_noise(9, 48000).unwrap();
        let b = b.scaled(0.02 * 10f64.sqrt() / b.rms()).unwrap();
        let mut x = a.samples().to_vec();
        x.extend(b.samples());
        let w = Waveform::new(x, SAMPLE_RATE).unwrap();
        let frames = frame_periodograms(&w, &cfg);
        let high = white_periodogram_mean(0.004, &cfg);
        let mut s = MmseState::new(init_noise_psd(&w, &cfg).unwrap(), cfg).unwrap();
        let step_frame = 16000 / hop + 2;
        let mut reached = None;
        for t in 0..frames.nrows() {
            s.update_noise_psd(frames.row(t));
            if t > step_frame && reached.is_none() {
                let mean_db = s.noise_psd().iter().map(|p| 10.0 * (p / high).log10()).sum::<f64>() / 257.0;
                if mean_db > -3.0 {
                    reached = Some(t - step_frame);
                }
            }
        }
        let frames_taken = reached.expect("tracker never reached the new level");
        let seconds = (frames_taken * hop) as f64 / 16000.0;
        assert!(seconds <= 2.0, "took {seconds:.2} s");
    }

    #[test]
    fn compensated_tracker_is_unbiased_on_exponential_bins() {
        use rand_distr::{Distribution, Exp1};
        let mut rng = crate::seed::rng_for(7, &[]);
        let mut s = MmseState::new(Array1::ones(257), MmseConfig::default()).unwrap();
        let bias = s.config().tracker.equilibrium_bias();
        assert!(bias > 0.5 && bias < 1.0, "{bias}");
        let (mut sum, mut n) = (0.0, 0usize);
        for t in 0..3000 {
            let y = Array1::from_shape_fn(257, |_| Exp1.sample(&mut rng));
            s.update_noise_psd(y.view());
            if t >= 100 {
                sum += s.noise_psd().sum();
                n += 257;
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn tracker_decays_on_silence() {
        let mut s = MmseState::new(Array1::from_elem(257, 1.0), MmseConfig::default()).unwrap();
        let zero = Array1::zeros(257);
        let mut last = 1.0;
        for _ in 0..2000 {
            s.update_noise_psd(zero.view());
            let p = s.noise_psd()[10];
            assert!(p > 0.0 && p <= last);
            last = p;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn zero_in_zero_out() {
        let out = enhance_mmse(&Waveform::zeros(8000, SAMPLE_RATE)).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
        assert!(enhance_mmse(&Waveform::zeros(500, SAMPLE_RATE)).is_err());
    }

    #[test]
    fn clean_speech_nearly_transparent() {
        for spk in 0..4 {
            let w = gen_speaker_utterance(spk, 2, 1, 1.5).unwrap();
            let out = enhance_mmse(&w).unwrap();
            let active = energy_vad(&w, &VadConfig::default());
            let (mut dev, mut n) = (0.0, 0);
            for (t, &a) in active.iter().enumerate() {
                if !a {
                    continue;
                }
                let s = t * FRAME_SHIFT;
                let e_in: f64 = w.samples()[s..s + FRAME_LEN].iter().map(|v| v * v).sum();
                let e_out: f64 = out.samples()[s..s + FRAME_LEN].iter().map(|v| v * v).sum();
                dev += (10.0 * (e_out / e_in).log10()).abs();
                n += 1;
            }
            let dev = dev / n as f64;
            assert!(dev < 3.0, "speaker {spk}: {dev:.2} dB");
        }
    }

    #[test]
    fn improves_white_noise_at_five_db() {
        let mut gains: Vec<f64> = (0..20)
            .map(|i| {
                let clean = gen_speaker_utterance(i % 7, i, 1 + i % 4, 1.5).unwrap();
                let noise = gen_white_noise(100 + i, 30000).unwrap();
                let m = mix_at_snr(&clean, &noise, 5.0, i).unwrap();
                let out = enhance_mmse(&m.noisy).unwrap();
                segmental_snr(&m.speech, &out).unwrap() - segmental_snr(&m.speech, &m.noisy).unwrap()
            })
            .collect();
        gains.sort_by(f64::total_cmp);
        let median = 0.5 * (gains[9] + gains[10]);
        assert!(median > 0.0, "median improvement {median:.2} dB");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gain_within_bounds(xi in 0.0f64..1e4, gamma in 0.0f64..1e6) {
            let floor = MmseConfig::default().gain_floor();
            let g = stsa_gain(xi, gamma, floor);
            prop_assert!(g.is_finite() && g >= floor && g <= 1.0);
        }

        #[test]
        fn output_never_amplifies_bins(seed in 0u64..500, amp in 0.001f64..0.9) {
            let w = gen_white_noise(seed, 4000).unwrap().scaled(amp).unwrap();
            let cfg = MmseConfig::default();
            let mut state = MmseState::new(init_noise_psd(&w, &cfg).unwrap(), cfg.clone()).unwrap();
            let spec = stft(&w, &cfg.stft).unwrap();
            for row in spec.data.rows() {
                let p = row.mapv(|c| c.norm_sqr());
                let gain = state.process_frame(p.view());
                for (c, g) in row.iter().zip(&gain) {
                    prop_assert!((c * g).norm() <= c.norm() + 1e-15);
                    prop_assert!(g.is_finite());
                }
            }
            let a = enhance_mmse(&w).unwrap();
            let b = enhance_mmse(&w).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
