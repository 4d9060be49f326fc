//! Noisy speech at a target SNR.
//!
//! Speech level is the RMS over energy-VAD active frames; noise level is the
//! plain RMS of the segment actually added.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Partition, Waveform, NOISE_NAMES};
use crate::dsp::{frame_count, frame_energies_db, energy_vad, VadConfig};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// One mixing job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub speech_id: String,
    pub noise_name: String,
    pub snr_db: f64,
    pub seed: u64,
    pub partition: Partition,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::param(format!(
                "{}: SNR must be finite (clean speech is not mixed)",
                self.speech_id
            )));
        }
        if !NOISE_NAMES.contains(&self.noise_name.as_str()) {
            return Err(Error::param(format!("unknown noise '{}'", self.noise_name)));
        }
        Ok(())
    }
}

pub const MIX_JOBS_HEADER: [&str; 5] = ["speech_id", "noise_name", "snr_db", "seed", "partition"];

pub fn read_mix_jobs(path: impl AsRef<Path>) -> Result<Vec<MixSpec>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != MIX_JOBS_HEADER {
        return Err(Error::Format(format!(
            "{}: expected header {}, got {}",
            path.display(),
            MIX_JOBS_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut jobs = Vec::new();
    for row in reader.deserialize() {
        let job: MixSpec = row?;
        job.validate()?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn write_mix_jobs(path: impl AsRef<Path>, jobs: &[MixSpec]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for job in jobs {
        writer.serialize(job)?;
    }
    writer.flush()?;
    Ok(())
}

/// Output of [`mix_at_snr`]. After any anti-clipping gain,
/// `noisy == speech + noise` sample by sample.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Scaled noise segment actually present in `noisy`.
    pub noise: Waveform,
    /// Speech component actually present in `noisy`.
    pub speech: Waveform,
    pub offset: usize,
    /// Applied to the whole mixture to keep it within `[-1, 1]`; 1 if unused.
    pub gain: f64,
}

/// Per-file sidecar describing how a mixture was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixMetadata {
    pub speech_id: String,
    pub noise_name: String,
    pub snr_db: f64,
    pub seed: u64,
    pub partition: Partition,
    pub noise_offset: usize,
    pub applied_gain: f64,
}

fn db(power: f64) -> f64 {
    10.0 * power.log10()
}

/// Active speech level in dB relative to full scale (RMS 1 = 0 dB).
pub fn active_speech_level(w: &Waveform) -> Result<f64> {
    let cfg = VadConfig::default();
    let active = energy_vad(w, &cfg);
    let energies = frame_energies_db(w, cfg.frame_len, cfg.frame_shift);
    let (sum, n) = energies
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .filter_map(|(e, _)| *e)
        .fold((0.0, 0usize), |(s, n), e| (s + 10f64.powf(e / 10.0), n + 1));
    if n == 0 {
        if frame_count(w.len(), cfg.frame_len, cfg.frame_shift) == 0 {
            return Err(Error::param(format!(
                "{} samples is too short to measure speech level",
                w.len()
            )));
        }
        return Err(Error::Validation("speech is silent; level undefined".into()));
    }
    Ok(db(sum / (n * cfg.frame_len) as f64))
}

/// Plain RMS level in dB relative to full scale.
pub fn rms_level(w: &Waveform) -> Result<f64> {
    let rms = w.rms();
    if rms == 0.0 {
        return Err(Error::Validation("noise segment is silent; level undefined".into()));
    }
    Ok(20.0 * rms.log10())
}

/// Adds a seeded random segment of `noise`, scaled so that the speech level
/// exceeds the noise level by `snr_db`.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::param("SNR must be finite; clean speech is not mixed"));
    }
    if speech.sample_rate() != noise.sample_rate() {
        return Err(Error::param("speech and noise sample rates differ"));
    }
    if noise.len() < speech.len() {
        return Err(Error::param(format!(
            "noise has {} samples, speech needs {}",
            noise.len(),
            speech.len()
        )));
    }
    let speech_level = active_speech_level(speech)?;
    let offset = rng_for(seed, &[]).random_range(0..=noise.len() - speech.len());
    let segment = &noise.samples()[offset..offset + speech.len()];
    let seg_level = rms_level(&Waveform::new(segment.to_vec(), noise.sample_rate())?)?;
    let scale = 10f64.powf((speech_level - snr_db - seg_level) / 20.0);
    let scaled: Vec<f64> = segment.iter().map(|v| v * scale).collect();
    let sum: Vec<f64> = speech.samples().iter().zip(&scaled).map(|(s, n)| s + n).collect();
    let peak = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let rate = speech.sample_rate();
    let apply = |v: &[f64]| Waveform::new(v.iter().map(|x| x * gain).collect(), rate);
    Ok(Mixture {
        noisy: apply(&sum)?,
        noise: apply(&scaled)?,
        speech: if gain == 1.0 { speech.clone() } else { apply(speech.samples())? },
        offset,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_speaker_utterance, gen_white_noise, NoiseSpec, SAMPLE_RATE};
    use proptest::prelude::*;

    fn speech() -> Waveform {
        gen_speaker_utterance(7, 3, 2, 1.5).unwrap()
    }

    #[test]
    fn square_wave_is_zero_dbfs() {
        let w = Waveform::new(
            (0..8000).map(|i| if (i / 40) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        assert!(active_speech_level(&w).unwrap().abs() < 1e-12);
        let half = w.scaled(0.5).unwrap();
        assert!((active_speech_level(&half).unwrap() + 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn appended_silence_does_not_move_level() {
        let s = speech();
        let mut padded = s.samples().to_vec();
        padded.extend(std::iter::repeat(0.0).take(16000));
        let p = Waveform::new(padded, SAMPLE_RATE).unwrap();
        let d = active_speech_level(&p).unwrap() - active_speech_level(&s).unwrap();
        assert!(d.abs() < 0.2, "{d}");
    }

    #[test]
    fn silent_or_short_input_is_error() {
        assert!(active_speech_level(&Waveform::zeros(8000, SAMPLE_RATE)).is_err());
        assert!(active_speech_level(&Waveform::zeros(100, SAMPLE_RATE)).is_err());
        let n = gen_white_noise(1, 30000).unwrap();
        assert!(mix_at_snr(&Waveform::zeros(8000, SAMPLE_RATE), &n, 0.0, 1).is_err());
        assert!(mix_at_snr(&speech(), &gen_white_noise(1, 100).unwrap(), 0.0, 1).is_err());
        assert!(mix_at_snr(&speech(), &n, f64::INFINITY, 1).is_err());
    }

    #[test]
    fn zero_db_white_noise_measures_zero() {
        let s = speech();
        let n = gen_white_noise(9, 48000).unwrap();
        let m = mix_at_snr(&s, &n, 0.0, 11).unwrap();
        let measured = active_speech_level(&m.speech).unwrap() - rms_level(&m.noise).unwrap();
        assert!(measured.abs() < 0.1);
        for (y, (a, b)) in m.noisy.samples().iter().zip(m.speech.samples().iter().zip(m.noise.samples())) {
            assert!((y - a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = speech();
        let n = gen_white_noise(9, 48000).unwrap();
        let a = mix_at_snr(&s, &n, 5.0, 3).unwrap();
        let b = mix_at_snr(&s, &n, 5.0, 3).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_eq!(a.offset, b.offset);
    }

    #[test]
    fn clipping_scales_whole_mixture() {
        let s = speech().scaled(8.0).unwrap();
        let n = gen_white_noise(9, 48000).unwrap();
        let m = mix_at_snr(&s, &n, -5.0, 3).unwrap();
        assert!(m.gain < 1.0);
        assert_eq!(m.noisy.clipped(), 0);
        let measured = active_speech_level(&m.speech).unwrap() - rms_level(&m.noise).unwrap();
        assert!((measured + 5.0).abs() < 0.1);
    }

    #[test]
    fn mix_jobs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.csv");
        let jobs = vec![MixSpec {
            speech_id: "m002_t01_s2".into(),
            noise_name: "babble".into(),
            snr_db: 5.0,
            seed: 4,
            partition: Partition::Test,
        }];
        write_mix_jobs(&path, &jobs).unwrap();
        assert_eq!(read_mix_jobs(&path).unwrap(), jobs);
        std::fs::write(&path, "speech_id,noise_name,snr_db,seed,partition\nx,hum,5,1,test\n").unwrap();
        assert!(read_mix_jobs(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn remeasured_snr_matches_target(snr in -5.0f64..20.0, seed in 0u64..1000, noise_idx in 0usize..5) {
            let s = speech();
            let n = NoiseSpec::named(NOISE_NAMES[noise_idx], seed, Partition::Test)
                .unwrap()
                .generate(40000)
                .unwrap();
            let m = mix_at_snr(&s, &n, snr, seed).unwrap();
            let measured = active_speech_level(&m.speech).unwrap() - rms_level(&m.noise).unwrap();
            prop_assert!((measured - snr).abs() < 0.1);
        }

        #[test]
        fn twenty_db_apart_is_factor_ten(snr in -5.0f64..10.0, seed in 0u64..1000) {
            let s = speech();
            let n = gen_white_noise(seed, 40000).unwrap();
            let lo = mix_at_snr(&s, &n, snr, seed).unwrap();
            let hi = mix_at_snr(&s, &n, snr + 20.0, seed).unwrap();
            prop_assume!(lo.gain == 1.0 && hi.gain == 1.0);
            for (a, b) in lo.noise.samples().iter().zip(hi.noise.samples()) {
                prop_assert!((a - 10.0 * b).abs() < 1e-12);
            }
        }
    }
}
