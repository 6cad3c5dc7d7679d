//! Hann-windowed STFT with start-only padding, and overlap-add synthesis.
//!
//! The signal is mirrored (edge sample included) by `fft_size / 2` samples at
//! the start only, so frame `t` spans original samples
//! `[t·hop − fft/2, t·hop + fft/2)` and never looks past them. A signal of `N`
//! samples yields `floor((N + fft/2 − fft) / hop) + 1` frames.

use std::f32::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use crate::audio::Audio;
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 128,
            sample_rate: 16000,
        }
    }
}

impl StftConfig {
    /// Number of one-sided frequency bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Samples of mirrored padding before the first sample.
    pub fn pad(&self) -> usize {
        self.fft_size / 2
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 || self.fft_size % 2 != 0 {
            return config_err(format!("fft_size {} must be even and >= 4", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return config_err(format!("hop {} must be in 1..=fft_size", self.hop));
        }
        if self.pad() % self.hop != 0 {
            return config_err(format!(
                "hop {} must divide fft_size/2 = {} so every block yields one frame",
                self.hop,
                self.pad()
            ));
        }
        if self.sample_rate == 0 {
            return config_err("sample_rate must be positive");
        }
        Ok(())
    }

    /// Frame count for `n` samples per channel; 0 when `n < fft_size / 2`.
    pub fn frame_count(&self, n: usize) -> usize {
        let padded = n + self.pad();
        if n < self.pad() || padded < self.fft_size {
            0
        } else {
            (padded - self.fft_size) / self.hop + 1
        }
    }
}

/// Complex STFT coefficients laid out `[frame][bin][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex32>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, bins: usize, channels: usize) -> Self {
        Self {
            frames,
            bins,
            channels,
            data: vec![Complex32::new(0.0, 0.0); frames * bins * channels],
        }
    }

    pub fn from_data(
        frames: usize,
        bins: usize,
        channels: usize,
        data: Vec<Complex32>,
    ) -> Result<Self> {
        if data.len() != frames * bins * channels {
            return Err(Error::Shape(format!(
                "{} coefficients for {frames}x{bins}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            channels,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn at(&self, t: usize, f: usize, m: usize) -> Complex32 {
        self.data[(t * self.bins + f) * self.channels + m]
    }

    pub fn set(&mut self, t: usize, f: usize, m: usize, v: Complex32) {
        self.data[(t * self.bins + f) * self.channels + m] = v;
    }

    /// One frame, `bins × channels`.
    pub fn frame(&self, t: usize) -> &[Complex32] {
        let n = self.bins * self.channels;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex32] {
        let n = self.bins * self.channels;
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Single-channel copy of channel `m`.
    pub fn channel(&self, m: usize) -> Result<Spectrogram> {
        if m >= self.channels {
            return Err(Error::Input(format!(
                "channel {m} out of range for {} channels",
                self.channels
            )));
        }
        let data = self
            .data
            .iter()
            .skip(m)
            .step_by(self.channels)
            .copied()
            .collect();
        Ok(Spectrogram {
            frames: self.frames,
            bins: self.bins,
            channels: 1,
            data,
        })
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f32 / n as f32).cos())
        .collect()
}

/// Smallest overlap-add normalizer, relative to the interior value.
const TAIL_FLOOR: f32 = 0.01;

/// Planned forward/inverse transforms for one [`StftConfig`].
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f32>,
    fwd: Arc<dyn Fft<f32>>,
    inv: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: hann(cfg.fft_size),
            fwd: planner.plan_fft_forward(cfg.fft_size),
            inv: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    /// Analyzes every channel of `audio`.
    pub fn analyze(&self, audio: &Audio) -> Result<Spectrogram> {
        if audio.is_empty() {
            return Err(Error::Input("empty input".into()));
        }
        let frames = self.cfg.frame_count(audio.len());
        if frames == 0 {
            return Err(Error::Input(format!(
                "{} samples is shorter than the {} needed for one frame",
                audio.len(),
                self.cfg.pad()
            )));
        }
        let m = audio.num_channels();
        let padded: Vec<Vec<f32>> = audio.channels().iter().map(|c| self.pad_start(c)).collect();
        let mut spec = Spectrogram::zeros(frames, self.cfg.bins(), m);
        let n = self.cfg.fft_size;
        let mut windows: Vec<&[f32]> = Vec::with_capacity(m);
        for t in 0..frames {
            windows.clear();
            windows.extend(
                padded
                    .iter()
                    .map(|p| &p[t * self.cfg.hop..t * self.cfg.hop + n]),
            );
            self.analyze_frame(&windows, spec.frame_mut(t));
        }
        Ok(spec)
    }

    /// Mirrors the first `fft/2` samples in front of `x` (edge sample included).
    pub(crate) fn pad_start(&self, x: &[f32]) -> Vec<f32> {
        let pad = self.cfg.pad();
        let mut out = Vec::with_capacity(x.len() + pad);
        out.extend(x[..pad].iter().rev());
        out.extend_from_slice(x);
        out
    }

    /// Transforms one `fft_size` window per channel into `out` (`bins × channels`).
    pub(crate) fn analyze_frame(&self, windows: &[&[f32]], out: &mut [Complex32]) {
        let m = windows.len();
        let bins = self.cfg.bins();
        let mut buf = vec![Complex32::new(0.0, 0.0); self.cfg.fft_size];
        for (c, w) in windows.iter().enumerate() {
            for ((b, &s), &h) in buf.iter_mut().zip(w.iter()).zip(&self.window) {
                *b = Complex32::new(s * h, 0.0);
            }
            self.fwd.process(&mut buf);
            for f in 0..bins {
                out[f * m + c] = buf[f];
            }
        }
    }

    /// Weighted overlap-add resynthesis of a single-channel spectrogram.
    ///
    /// Returns `(frames − 1)·hop + fft/2` samples aligned with the analysis
    /// input (the start padding is dropped).
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<f32>> {
        if spec.bins() != self.cfg.bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, config expects {}",
                spec.bins(),
                self.cfg.bins()
            )));
        }
        if spec.channels() != 1 {
            return Err(Error::Shape(format!(
                "synthesis takes one channel, got {}",
                spec.channels()
            )));
        }
        let (n, hop, pad) = (self.cfg.fft_size, self.cfg.hop, self.cfg.pad());
        let frames = spec.frames();
        if frames == 0 {
            return Ok(Vec::new());
        }
        let total = (frames - 1) * hop + n;
        let mut acc = vec![0f32; total];
        let mut wsum = vec![0f32; total];
        let mut buf = vec![Complex32::new(0.0, 0.0); n];
        let scale = 1.0 / n as f32;
        for t in 0..frames {
            let frame = spec.frame(t);
            buf[..frame.len()].copy_from_slice(frame);
            for f in 1..n - frame.len() + 1 {
                buf[n - f] = frame[f].conj();
            }
            self.inv.process(&mut buf);
            let base = t * hop;
            for i in 0..n {
                let w = self.window[i];
                acc[base + i] += buf[i].re * scale * w;
                wsum[base + i] += w * w;
            }
        }
        // the tail is covered only by the last frame's falling edge; a floor
        // keeps modified spectra from being amplified there
        let floor = TAIL_FLOOR * wsum.iter().cloned().fold(0.0, f32::max);
        let out_len = (frames - 1) * hop + n - pad;
        Ok((0..out_len)
            .map(|i| {
                let j = i + pad;
                acc[j] / wsum[j].max(floor).max(1e-10)
            })
            .collect())
    }
}
