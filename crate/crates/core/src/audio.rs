//! Planar multichannel audio and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const MAX_WAV_CHANNELS: usize = 6;

/// Planar audio: one `Vec<f32>` per channel, all the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    channels: Vec<Vec<f32>>,
}

impl Audio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Input("audio needs at least one channel".into()));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Input("channels differ in length".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn from_interleaved(sample_rate: u32, num_channels: usize, data: &[f32]) -> Result<Self> {
        if num_channels == 0 || data.len() % num_channels != 0 {
            return Err(Error::Input(format!(
                "{} interleaved samples do not split into {num_channels} channels",
                data.len()
            )));
        }
        let mut channels = vec![Vec::with_capacity(data.len() / num_channels); num_channels];
        for frame in data.chunks_exact(num_channels) {
            for (ch, &s) in channels.iter_mut().zip(frame) {
                ch.push(s);
            }
        }
        Self::new(sample_rate, channels)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f32] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn interleaved(&self) -> Vec<f32> {
        let m = self.num_channels();
        let mut out = vec![0f32; self.len() * m];
        for (c, ch) in self.channels.iter().enumerate() {
            for (i, &s) in ch.iter().enumerate() {
                out[i * m + c] = s;
            }
        }
        out
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV with 1 to 6 channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    if !(1..=MAX_WAV_CHANNELS).contains(&m) {
        return Err(Error::Input(format!(
            "{m} channels; supported are 1 to {MAX_WAV_CHANNELS}"
        )));
    }
    let data: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Input(format!(
                "unsupported WAV encoding {fmt:?}/{bits} bit; use PCM16 or float32"
            )))
        }
    };
    Audio::from_interleaved(spec.sample_rate, m, &data)
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &Audio) -> Result<()> {
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for s in audio.interleaved() {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM WAV, clipping to [-1, 1).
pub fn write_wav_pcm16(path: impl AsRef<Path>, audio: &Audio) -> Result<()> {
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for s in audio.interleaved() {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// A seeded synthetic array recording: a voiced source with a gliding pitch
/// and syllable-rate envelope reaching each microphone with a small integer
/// delay, plus independent noise at `snr_db`. Returns `(clean, noisy)`.
pub fn synthetic_scene(
    sample_rate: u32,
    channels: usize,
    samples: usize,
    snr_db: f32,
    seed: u64,
) -> Result<(Audio, Audio)> {
    let mut r = SplitMix64::new(seed);
    let fs = sample_rate as f32;
    let f0 = 110.0 + 80.0 * r.next_unit();
    let phase0 = std::f32::consts::TAU * r.next_unit();
    let source: Vec<f32> = (0..samples + 16)
        .map(|i| {
            let t = i as f32 / fs;
            let pitch = f0 * (1.0 + 0.1 * (1.3 * t).sin());
            let env = 0.5 + 0.5 * (std::f32::consts::TAU * 3.0 * t + phase0).sin();
            let ph = std::f32::consts::TAU * pitch * t;
            let voiced: f32 = (1..=12).map(|h| (h as f32 * ph).sin() / h as f32).sum();
            0.1 * env * env * voiced
        })
        .collect();
    let power = source.iter().map(|v| v * v).sum::<f32>() / source.len() as f32;
    // uniform on [-a, a] has power a²/3
    let a = (3.0 * power / 10f32.powf(snr_db / 10.0)).sqrt();
    let mut clean = Vec::with_capacity(channels);
    let mut noisy = Vec::with_capacity(channels);
    for m in 0..channels {
        let delay = (m * 3) % 16;
        let c: Vec<f32> = source[16 - delay..16 - delay + samples].to_vec();
        noisy.push(c.iter().map(|&v| v + r.uniform(a)).collect());
        clean.push(c);
    }
    Ok((
        Audio::new(sample_rate, clean)?,
        Audio::new(sample_rate, noisy)?,
    ))
}
