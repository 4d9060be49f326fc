//! Noise generators. Every noise type has three disjoint streams, one per
//! data partition, so that training, enrollment and test mixtures never share
//! noise material.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::synth::talker_stream;
use super::waveform::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, name_hash, rng_for};

/// RMS of every generated noise signal.
pub const NOISE_RMS: f64 = 0.1;
pub const DEFAULT_BABBLE_TALKERS: usize = 6;

const STREAM_WHITE: u64 = 0x5748_4954;
const STREAM_BABBLE: u64 = 0x4241_4242;
const STREAM_COLORED: u64 = 0x434f_4c52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Enroll,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Enroll, Partition::Test];

    fn stream(self) -> u64 {
        match self {
            Partition::Train => 1,
            Partition::Enroll => 2,
            Partition::Test => 3,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Enroll => "enroll",
            Partition::Test => "test",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "enroll" => Ok(Partition::Enroll),
            "test" => Ok(Partition::Test),
            other => Err(Error::param(format!("unknown partition '{other}'"))),
        }
    }
}

/// Stand-ins for recorded environmental noises: distinct spectral tilt and
/// amplitude modulation per profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColoredProfile {
    Cantine,
    Market,
    Airplane,
}

impl ColoredProfile {
    /// (lowpass pole, highpass pole, modulation rate Hz, modulation depth)
    fn params(self) -> (f64, f64, f64, f64) {
        match self {
            ColoredProfile::Cantine => (0.75, 0.0, 3.0, 0.5),
            ColoredProfile::Market => (0.55, 0.9, 0.7, 0.35),
            ColoredProfile::Airplane => (0.97, 0.0, 0.2, 0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Babble { talkers: usize },
    Colored(ColoredProfile),
}

/// The five noise types of the experimental protocol.
pub const NOISE_NAMES: [&str; 5] = ["white", "babble", "cantine", "market", "airplane"];

pub fn noise_kind(name: &str) -> Result<NoiseKind> {
    Ok(match name {
        "white" => NoiseKind::White,
        "babble" => NoiseKind::Babble {
            talkers: DEFAULT_BABBLE_TALKERS,
        },
        "cantine" => NoiseKind::Colored(ColoredProfile::Cantine),
        "market" => NoiseKind::Colored(ColoredProfile::Market),
        "airplane" => NoiseKind::Colored(ColoredProfile::Airplane),
        other => return Err(Error::param(format!("unknown noise type '{other}'"))),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub noise_name: String,
    pub kind: NoiseKind,
    pub seed: u64,
    pub partition: Partition,
}

impl NoiseSpec {
    pub fn named(name: &str, seed: u64, partition: Partition) -> Result<Self> {
        Ok(Self {
            noise_name: name.to_string(),
            kind: noise_kind(name)?,
            seed,
            partition,
        })
    }

    /// Seed of this partition's stream; distinct per (name, partition).
    pub fn stream_seed(&self) -> u64 {
        derive_seed(
            self.seed,
            &[name_hash(&self.noise_name), self.partition.stream()],
        )
    }

    pub fn generate(&self, n_samples: usize) -> Result<Waveform> {
        let seed = self.stream_seed();
        match self.kind {
            NoiseKind::White => gen_white_noise(seed, n_samples),
            NoiseKind::Babble { talkers } => gen_babble_noise(seed, n_samples, talkers),
            NoiseKind::Colored(p) => gen_colored_noise(p, seed, n_samples),
        }
    }
}

fn check_len(n_samples: usize) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::param("noise length must be positive"));
    }
    Ok(())
}

fn renormalize(mut x: Vec<f64>) -> Result<Waveform> {
    let rms = (x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        let g = NOISE_RMS / rms;
        x.iter_mut().for_each(|s| *s *= g);
    }
    Waveform::new(x, SAMPLE_RATE)
}

/// Zero-mean Gaussian noise at RMS 0.1.
pub fn gen_white_noise(seed: u64, n_samples: usize) -> Result<Waveform> {
    check_len(n_samples)?;
    let mut rng = rng_for(seed, &[STREAM_WHITE]);
    let x: Vec<f64> = (0..n_samples)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    renormalize(x)
}

/// Unnormalised sum of talker streams, one per component seed.
pub fn babble_mix(component_seeds: &[u64], n_samples: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; n_samples];
    for &s in component_seeds {
        for (a, v) in acc.iter_mut().zip(talker_stream(s, n_samples)?) {
            *a += v;
        }
    }
    Ok(acc)
}

pub fn babble_component_seeds(seed: u64, n_talkers: usize) -> Vec<u64> {
    (0..n_talkers as u64)
        .map(|i| derive_seed(seed, &[STREAM_BABBLE, i]))
        .collect()
}

/// Sum of `n_talkers` synthetic talkers, renormalised to RMS 0.1.
pub fn gen_babble_noise(seed: u64, n_samples: usize, n_talkers: usize) -> Result<Waveform> {
    check_len(n_samples)?;
    if n_talkers < 2 {
        return Err(Error::param(format!(
            "babble needs at least 2 talkers, got {n_talkers}"
        )));
    }
    renormalize(babble_mix(&babble_component_seeds(seed, n_talkers), n_samples)?)
}

pub fn gen_colored_noise(profile: ColoredProfile, seed: u64, n_samples: usize) -> Result<Waveform> {
    check_len(n_samples)?;
    let (lp, hp, mod_rate, depth) = profile.params();
    let mut rng = rng_for(seed, &[STREAM_COLORED]);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let fs = f64::from(SAMPLE_RATE);
    let mut low = 0.0;
    let mut low2 = 0.0;
    let mut slow = 0.0;
    let mut x = Vec::with_capacity(n_samples);
    for t in 0..n_samples {
        let n: f64 = StandardNormal.sample(&mut rng);
        low = lp * low + (1.0 - lp) * n;
        let mut y = low;
        if hp > 0.0 {
            low2 = hp * low2 + (1.0 - hp) * low;
            y = low - low2;
        }
        // slowly wandering level on top of the periodic modulation
        let jitter: f64 = StandardNormal.sample(&mut rng);
        slow = 0.9995 * slow + 0.0005 * jitter * 10.0;
        let env = 1.0 + depth * ((2.0 * PI * mod_rate * t as f64 / fs + phase0).sin() + slow).tanh();
        x.push(y * env);
    }
    renormalize(x)
}
