//! Front-end signal processing: framing, cepstra, VAD, STFT and the
//! gammatone filterbank.

mod features;
mod gammatone;
mod mfcc;
mod normalize;
mod quality;
mod stft;
mod vad;

pub(crate) use features::{put_f64s, put_string, ByteReader};
pub use features::{FeatureKind, FeatureMatrix, GAMMATONE_CHANNELS, MFCC_FULL_DIM};
pub use gammatone::{
    center_frequencies, erb_hz, erb_rate, erb_rate_to_hz, gammatone_analyze,
    gammatone_analyze_with, gammatone_energies, gammatone_synthesize, gfe, GammatoneConfig,
    GammatoneTF, GFE_FLOOR,
};
pub use mfcc::{
    add_deltas, frame_count, hamming, mel_filterbank, mfcc, MfccConfig, DELTA_WINDOW, FRAME_LEN,
    FRAME_SHIFT,
};
pub use normalize::{normalize, stack_context, FeatureStats};
pub use quality::{segmental_snr, SEG_SNR_MAX_DB, SEG_SNR_MIN_DB};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use vad::{energy_vad, frame_energies_db, VadConfig};
