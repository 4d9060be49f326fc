use super::mfcc::{frame_count, FRAME_LEN, FRAME_SHIFT};
use super::vad::{energy_vad, VadConfig};
use crate::corpus::Waveform;
use crate::error::{Error, Result};

pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;

/// Mean per-frame SNR of `estimate` against `reference` over the frames the
/// energy VAD marks as speech in `reference`. Each frame is clamped to
/// `[SEG_SNR_MIN_DB, SEG_SNR_MAX_DB]`.
pub fn segmental_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let active = energy_vad(reference, &VadConfig::default());
    let (r, e) = (reference.samples(), estimate.samples());
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..frame_count(r.len(), FRAME_LEN, FRAME_SHIFT) {
        if !active[t] {
            continue;
        }
        let s = t * FRAME_SHIFT;
        let (mut sig, mut err) = (0.0, 0.0);
        for i in s..s + FRAME_LEN {
            sig += r[i] * r[i];
            err += (r[i] - e[i]).powi(2);
        }
        let snr = if err == 0.0 {
            SEG_SNR_MAX_DB
        } else {
            (10.0 * (sig / err).log10()).clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        };
        total += snr;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Validation("reference has no active frames".into()));
    }
    Ok(total / count as f64)
}
