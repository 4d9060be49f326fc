use super::mfcc::{frame_count, FRAME_LEN, FRAME_SHIFT};
use crate::corpus::Waveform;

/// Frames with exactly this little energy are digital silence.
const SILENCE_ENERGY: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    /// Frames more than this far below the loudest frame are non-speech.
    pub threshold_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_len: FRAME_LEN,
            frame_shift: FRAME_SHIFT,
            threshold_db: 30.0,
        }
    }
}

pub fn frame_energies_db(w: &Waveform, frame_len: usize, frame_shift: usize) -> Vec<Option<f64>> {
    let x = w.samples();
    (0..frame_count(x.len(), frame_len, frame_shift))
        .map(|t| {
            let s = t * frame_shift;
            let e: f64 = x[s..s + frame_len].iter().map(|v| v * v).sum();
            (e > SILENCE_ENERGY).then(|| 10.0 * e.log10())
        })
        .collect()
}

/// Energy-based speech mask, one entry per analysis frame.
///
/// The threshold is relative to the utterance's loudest frame, so the mask
/// does not change under global gain.
pub fn energy_vad(w: &Waveform, cfg: &VadConfig) -> Vec<bool> {
    let energies = frame_energies_db(w, cfg.frame_len, cfg.frame_shift);
    let max = energies
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    energies
        .iter()
        .map(|e| e.is_some_and(|e| e > max - cfg.threshold_db))
        .collect()
}
