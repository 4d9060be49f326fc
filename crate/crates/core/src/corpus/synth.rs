//! Source-filter speech synthesis used as a stand-in for a recorded corpus.
//!
//! A speaker is a fixed set of vocal-tract and glottal parameters; a text is
//! a fixed sequence of phone-like segments. The same text rendered by two
//! speakers follows the same phonetic trajectory through each speaker's own
//! formant space.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::waveform::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const STREAM_SPEAKER: u64 = 0x5350_4b52;
const STREAM_TEXT: u64 = 0x5445_5854;
const STREAM_UTT: u64 = 0x5554_5452;

/// Target level of the voiced part of every utterance.
const TARGET_ACTIVE_RMS: f64 = 0.08;
/// Recording-room floor under the whole utterance.
const ROOM_NOISE_RMS: f64 = 1e-4;

/// Peterson & Barney style male vowel formants (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 10] = [
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [300.0, 870.0, 2240.0],
    [640.0, 1190.0, 2390.0],
    [490.0, 1350.0, 1690.0],
];

/// Fricative noise centre frequency and bandwidth in Hz.
const FRICATIVES: [(f64, f64); 3] = [(5200.0, 1800.0), (2900.0, 900.0), (4000.0, 3500.0)];

/// Nasal murmur formants (F1, F2, F3).
const NASALS: [[f64; 3]; 2] = [[260.0, 1100.0, 2300.0], [260.0, 1500.0, 2500.0]];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phone {
    Vowel(usize),
    Fricative(usize),
    Nasal(usize),
    Closure,
}

impl Phone {
    fn nominal_duration_s(self) -> f64 {
        match self {
            Phone::Vowel(_) => 0.13,
            Phone::Fricative(_) => 0.09,
            Phone::Nasal(_) => 0.07,
            Phone::Closure => 0.045,
        }
    }
}

/// Fixed per-speaker voice parameters derived from the speaker seed.
#[derive(Debug, Clone)]
pub struct SpeakerVoice {
    pub vtl_scale: f64,
    pub formant_jitter: [f64; 4],
    pub bandwidth_scale: f64,
    pub f0_hz: f64,
    pub f0_swing: f64,
    pub tilt: f64,
    pub breathiness: f64,
    pub resonance_hz: f64,
    pub resonance_gain: f64,
}

impl SpeakerVoice {
    pub fn from_seed(speaker_seed: u64) -> Self {
        let mut rng = rng_for(speaker_seed, &[STREAM_SPEAKER]);
        Self {
            vtl_scale: rng.random_range(0.80..1.20),
            formant_jitter: [
                rng.random_range(0.90..1.10),
                rng.random_range(0.90..1.10),
                rng.random_range(0.90..1.10),
                rng.random_range(0.90..1.10),
            ],
            bandwidth_scale: rng.random_range(0.7..1.5),
            f0_hz: rng.random_range(85.0..190.0),
            f0_swing: rng.random_range(0.05..0.2),
            tilt: rng.random_range(0.88..0.98),
            breathiness: rng.random_range(0.01..0.12),
            resonance_hz: rng.random_range(3200.0..5200.0),
            resonance_gain: rng.random_range(0.0..0.6),
        }
    }
}

fn text_phones(text_id: u64) -> Vec<Phone> {
    let mut rng = rng_for(text_id, &[STREAM_TEXT]);
    let syllables = rng.random_range(4..7);
    let mut phones = Vec::new();
    for _ in 0..syllables {
        match rng.random_range(0..4) {
            0 => phones.push(Phone::Fricative(rng.random_range(0..FRICATIVES.len()))),
            1 => phones.push(Phone::Nasal(rng.random_range(0..NASALS.len()))),
            2 => phones.push(Phone::Closure),
            _ => {}
        }
        phones.push(Phone::Vowel(rng.random_range(0..VOWELS.len())));
        if rng.random_bool(0.3) {
            phones.push(Phone::Nasal(rng.random_range(0..NASALS.len())));
        }
    }
    phones
}

/// Two-pole resonator with unity gain at DC.
#[derive(Debug, Clone, Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tick(&mut self, x: f64, freq: f64, bw: f64) -> f64 {
        let fs = f64::from(SAMPLE_RATE);
        let r = (-PI * bw / fs).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        let a2 = -r * r;
        let b0 = 1.0 - a1 - a2;
        let y = b0 * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Per-sample articulatory targets.
#[derive(Debug, Clone, Copy)]
struct Target {
    formants: [f64; 3],
    voicing: f64,
    frication: f64,
    fric_freq: f64,
    fric_bw: f64,
}

fn phone_target(phone: Phone) -> Target {
    match phone {
        Phone::Vowel(i) => Target {
            formants: VOWELS[i],
            voicing: 1.0,
            frication: 0.0,
            fric_freq: 4000.0,
            fric_bw: 2000.0,
        },
        Phone::Nasal(i) => Target {
            formants: NASALS[i],
            voicing: 0.35,
            frication: 0.0,
            fric_freq: 4000.0,
            fric_bw: 2000.0,
        },
        Phone::Fricative(i) => Target {
            formants: [500.0, 1500.0, 2500.0],
            voicing: 0.0,
            frication: 0.5,
            fric_freq: FRICATIVES[i].0,
            fric_bw: FRICATIVES[i].1,
        },
        Phone::Closure => Target {
            formants: [500.0, 1500.0, 2500.0],
            voicing: 0.0,
            frication: 0.0,
            fric_freq: 4000.0,
            fric_bw: 2000.0,
        },
    }
}

/// Renders text `text_id` spoken by speaker `speaker_seed`.
///
/// `utterance_seed` controls session variability: timing jitter, pitch
/// contour, level and the breath/frication noise realisation.
pub fn gen_speaker_utterance(
    speaker_seed: u64,
    utterance_seed: u64,
    text_id: u64,
    duration_s: f64,
) -> Result<Waveform> {
    if !(1.0..=10.0).contains(&duration_s) {
        return Err(Error::param(format!(
            "utterance duration must be in [1, 10] s, got {duration_s}"
        )));
    }
    let voice = SpeakerVoice::from_seed(speaker_seed);
    let mut rng = rng_for(speaker_seed, &[STREAM_UTT, utterance_seed, text_id]);
    let samples = render(&voice, &text_phones(text_id), duration_s, &mut rng);
    Waveform::new(samples, SAMPLE_RATE)
}

fn render(voice: &SpeakerVoice, phones: &[Phone], duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = f64::from(SAMPLE_RATE);
    let n_total = (duration_s * fs).round() as usize;
    let lead = (rng.random_range(0.10..0.18) * fs) as usize;
    let trail = (rng.random_range(0.08..0.15) * fs) as usize;
    let active = n_total.saturating_sub(lead + trail).max(1);

    // Segment boundaries, with session-dependent timing jitter.
    let weights: Vec<f64> = phones
        .iter()
        .map(|p| p.nominal_duration_s() * rng.random_range(0.85..1.15))
        .collect();
    let total_w: f64 = weights.iter().sum();
    let mut bounds = Vec::with_capacity(phones.len() + 1);
    let mut acc = 0.0;
    bounds.push(lead);
    for w in &weights {
        acc += w;
        bounds.push(lead + ((acc / total_w) * active as f64).round() as usize);
    }

    let f0_offset = rng.random_range(0.95..1.05);
    let f0_rate = rng.random_range(2.0..5.0);
    let f0_phase0 = rng.random_range(0.0..2.0 * PI);

    let mut formant_res: [Resonator; 4] = Default::default();
    let mut extra_res = Resonator::default();
    let mut fric_res = Resonator::default();
    let mut tilt_state = 0.0;
    let mut tilt_state2 = 0.0;
    let mut phase = 0.0;
    let mut cur = phone_target(phones[0]);
    let smooth = (-1.0 / (0.012 * fs)).exp();

    let mut out = vec![0.0; n_total];
    let mut seg = 0;
    for (t, slot) in out.iter_mut().enumerate() {
        let in_speech = t >= lead && t < lead + active;
        let target = if in_speech {
            while seg + 1 < phones.len() && t >= bounds[seg + 1] {
                seg += 1;
            }
            phone_target(phones[seg])
        } else {
            Target {
                voicing: 0.0,
                frication: 0.0,
                ..cur
            }
        };
        for k in 0..3 {
            cur.formants[k] = smooth * cur.formants[k] + (1.0 - smooth) * target.formants[k];
        }
        cur.voicing = smooth * cur.voicing + (1.0 - smooth) * target.voicing;
        cur.frication = smooth * cur.frication + (1.0 - smooth) * target.frication;
        cur.fric_freq = target.fric_freq;
        cur.fric_bw = target.fric_bw;

        // Glottal source: pulse train with declination and slow pitch movement.
        let progress = if in_speech {
            (t - lead) as f64 / active as f64
        } else {
            0.5
        };
        let f0 = voice.f0_hz
            * f0_offset
            * (1.0 + voice.f0_swing * (0.5 - progress))
            * (1.0 + 0.03 * (2.0 * PI * f0_rate * t as f64 / fs + f0_phase0).sin());
        phase += f0 / fs;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        let noise: f64 = StandardNormal.sample(rng);
        tilt_state = voice.tilt * tilt_state + (1.0 - voice.tilt) * pulse * 40.0;
        tilt_state2 = voice.tilt * tilt_state2 + (1.0 - voice.tilt) * tilt_state;
        let glottal = tilt_state - tilt_state2;
        let source = cur.voicing * (glottal + voice.breathiness * noise * 0.3);

        let mut y = source;
        for k in 0..3 {
            let f = (cur.formants[k] * voice.vtl_scale * voice.formant_jitter[k]).min(7200.0);
            let bw = (50.0 + 0.06 * f) * voice.bandwidth_scale;
            y = formant_res[k].tick(y, f, bw);
        }
        let f4 = 3400.0 * voice.vtl_scale * voice.formant_jitter[3];
        y = formant_res[3].tick(y, f4.min(7400.0), 250.0 * voice.bandwidth_scale);
        let extra = extra_res.tick(y, voice.resonance_hz, 400.0);
        y += voice.resonance_gain * extra;

        let fric_noise: f64 = StandardNormal.sample(rng);
        let ff = (cur.fric_freq * voice.vtl_scale.sqrt()).min(7000.0);
        let fric = fric_res.tick(fric_noise, ff, cur.fric_bw) * cur.frication;
        *slot = y + fric;
    }

    // Level normalisation over the active region, with session gain jitter.
    let act = &out[lead..lead + active];
    let rms = (act.iter().map(|s| s * s).sum::<f64>() / act.len() as f64).sqrt();
    let gain_db: f64 = rng.random_range(-2.0..2.0);
    let gain = if rms > 0.0 {
        TARGET_ACTIVE_RMS * 10f64.powf(gain_db / 20.0) / rms
    } else {
        0.0
    };
    for s in out.iter_mut() {
        let floor: f64 = StandardNormal.sample(rng);
        *s = (*s * gain + ROOM_NOISE_RMS * floor).clamp(-1.0, 1.0);
    }
    out
}

/// A continuous talker stream: a few seconds of random texts from one voice,
/// looped to `n_samples`.
pub(crate) fn talker_stream(talker_seed: u64, n_samples: usize) -> Result<Vec<f64>> {
    let mut rng = rng_for(talker_seed, &[STREAM_UTT, 0xBABB]);
    let speaker_seed = rng.random::<u64>();
    let mut base = Vec::new();
    for _ in 0..2 {
        let text_id = 10_000 + rng.random_range(0..10_000u64);
        let utt_seed = rng.random::<u64>();
        let dur = rng.random_range(1.5..2.5);
        base.extend(gen_speaker_utterance(speaker_seed, utt_seed, text_id, dur)?.into_samples());
    }
    let offset = rng.random_range(0..base.len());
    Ok((0..n_samples).map(|i| base[(offset + i) % base.len()]).collect())
}
