//! Waveform/STFT conversion, normalization, Mel filterbanks, the rectified
//! Mel power-ratio mask and its application.

mod mask;
mod mel;
mod norm;
mod reconstruct;
mod stft;

pub(crate) use mask::masked_log;
pub use mask::{apply_mask, mask_mse, mel_prm, LOG_FLOOR};
pub use mel::{hz_to_mel, mel_power, mel_to_hz, MelFilterbank};
pub use norm::{normalize, NormState, NORM_DECAY};
pub use reconstruct::{lift_mask, pseudo_inverse_reconstruct};
pub use stft::{hann, Spectrogram, Stft, StftConfig};

pub use rustfft::num_complex::Complex32;

use crate::error::{Error, Result};

/// A `frames × bands` grid of reals: Mel power, masks, log spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct TfGrid {
    frames: usize,
    bands: usize,
    values: Vec<f32>,
}

/// Mel-band power, non-negative.
pub type MelPowerSpec = TfGrid;
/// Mask values in `[0, 1]`.
pub type MelMask = TfGrid;
/// Natural-log power.
pub type LogMel = TfGrid;

impl TfGrid {
    pub fn zeros(frames: usize, bands: usize) -> Self {
        Self::filled(frames, bands, 0.0)
    }

    pub fn filled(frames: usize, bands: usize, v: f32) -> Self {
        Self {
            frames,
            bands,
            values: vec![v; frames * bands],
        }
    }

    pub fn new(frames: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * bands {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{bands} grid",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            bands,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn at(&self, t: usize, b: usize) -> f32 {
        self.values[t * self.bands + b]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.bands..(t + 1) * self.bands]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.values[t * self.bands..(t + 1) * self.bands]
    }

    pub fn same_shape(&self, other: &TfGrid) -> bool {
        self.frames == other.frames && self.bands == other.bands
    }

    /// CSV text, one row per frame.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 14);
        for t in 0..self.frames {
            let row: Vec<String> = self.frame(t).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn push_frame(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.bands);
        self.values.extend_from_slice(row);
        self.frames += 1;
    }
}
