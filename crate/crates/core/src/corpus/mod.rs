//! Synthetic corpus: speakers, noises, manifests and WAV I/O.

mod manifest;
mod noise;
mod synth;
mod waveform;

pub use manifest::{
    build_manifest, generate_corpus, Condition, CorpusLayout, CorpusManifest, ManifestEntry, Role,
    MANIFEST_HEADER,
};
pub use noise::{
    babble_component_seeds, babble_mix, gen_babble_noise, gen_colored_noise, gen_white_noise,
    noise_kind, ColoredProfile, NoiseKind, NoiseSpec, Partition, DEFAULT_BABBLE_TALKERS,
    NOISE_NAMES, NOISE_RMS,
};
pub use synth::{gen_speaker_utterance, SpeakerVoice};
pub use waveform::{Waveform, SAMPLE_RATE};
