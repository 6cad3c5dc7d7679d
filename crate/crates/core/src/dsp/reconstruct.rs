//! Low-fidelity waveform fallback: lift the Mel mask back to linear frequency
//! and resynthesize the masked reference channel.

use super::mel::MelFilterbank;
use super::stft::{Spectrogram, Stft};
use super::TfGrid;
use crate::error::{Error, Result};

/// Per-bin gain from a Mel-band mask via the column-normalized transpose of
/// the filterbank. Bins no filter covers take the nearest band's value.
/// Output is `frames × n_bins`, clamped to `[0, 1]`.
pub fn lift_mask(mask: &TfGrid, fb: &MelFilterbank) -> Result<TfGrid> {
    if mask.bands() != fb.n_mels() {
        return Err(Error::Shape(format!(
            "mask has {} bands, filterbank {}",
            mask.bands(),
            fb.n_mels()
        )));
    }
    let sums = fb.column_sums();
    let bins = fb.n_bins();
    let first_centre = fb.support(0).start;
    let mut out = TfGrid::zeros(mask.frames(), bins);
    for t in 0..mask.frames() {
        let mrow = mask.frame(t);
        let orow = out.frame_mut(t);
        for m in 0..fb.n_mels() {
            for f in fb.support(m) {
                orow[f] += fb.weight(m, f) * mrow[m];
            }
        }
        for f in 0..bins {
            orow[f] = if sums[f] > 0.0 {
                orow[f] / sums[f]
            } else if f < first_centre {
                mrow[0]
            } else {
                mrow[fb.n_mels() - 1]
            };
            orow[f] = orow[f].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Applies the lifted mask to channel `ref_ch` of `noisy` and overlap-adds.
pub fn pseudo_inverse_reconstruct(
    noisy: &Spectrogram,
    ref_ch: usize,
    mask: &TfGrid,
    fb: &MelFilterbank,
    stft: &Stft,
) -> Result<Vec<f32>> {
    if mask.frames() != noisy.frames() {
        return Err(Error::Shape(format!(
            "mask has {} frames, spectrogram {}",
            mask.frames(),
            noisy.frames()
        )));
    }
    let gain = lift_mask(mask, fb)?;
    let mut spec = noisy.channel(ref_ch)?;
    for t in 0..spec.frames() {
        for (c, &g) in spec.frame_mut(t).iter_mut().zip(gain.frame(t)) {
            *c *= g;
        }
    }
    stft.synthesize(&spec)
}
