//! Recursive input normalization against the reference channel.

use rustfft::num_complex::Complex32;

use super::stft::Spectrogram;
use crate::error::{Error, Result};

pub const NORM_DECAY: f32 = 0.999;
const NORM_FLOOR: f32 = 1e-8;

/// Running statistics of the reference-channel magnitude.
///
/// Frame `t` is divided by a bias-corrected exponential mean of the per-frame
/// mean magnitude over frames `0..=t`, so the scale only ever uses the past.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    decay: f32,
    acc: f32,
    weight: f32,
    /// Divisor applied to the most recent frame.
    pub last_scale: f32,
}

impl Default for NormState {
    fn default() -> Self {
        Self::new(NORM_DECAY)
    }
}

impl NormState {
    pub fn new(decay: f32) -> Self {
        Self {
            decay,
            acc: 0.0,
            weight: 0.0,
            last_scale: 1.0,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.decay);
    }

    /// Normalizes one `bins × channels` frame in place.
    pub(crate) fn normalize_frame(
        &mut self,
        frame: &mut [Complex32],
        channels: usize,
        ref_ch: usize,
    ) {
        let bins = frame.len() / channels;
        let mean = frame
            .iter()
            .skip(ref_ch)
            .step_by(channels)
            .map(|c| c.norm())
            .sum::<f32>()
            / bins as f32;
        self.acc = self.decay * self.acc + (1.0 - self.decay) * mean;
        self.weight = self.decay * self.weight + (1.0 - self.decay);
        let scale = (self.acc / self.weight).max(NORM_FLOOR);
        self.last_scale = scale;
        let inv = 1.0 / scale;
        for c in frame.iter_mut() {
            *c *= inv;
        }
    }
}

/// Normalizes every frame of `spec`, continuing from `state`.
pub fn normalize(
    spec: &Spectrogram,
    ref_ch: usize,
    mut state: NormState,
) -> Result<(Spectrogram, NormState)> {
    if ref_ch >= spec.channels() {
        return Err(Error::Input(format!(
            "reference channel index {ref_ch} out of range for {} channels",
            spec.channels()
        )));
    }
    let mut out = spec.clone();
    let m = spec.channels();
    for t in 0..spec.frames() {
        state.normalize_frame(out.frame_mut(t), m, ref_ch);
    }
    Ok((out, state))
}
