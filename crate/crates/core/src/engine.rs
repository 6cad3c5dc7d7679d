//! Frame-synchronous enhancement pipeline with explicit per-stream state.
//!
//! Each hop of audio goes through the STFT, reference-channel normalization,
//! STFT-to-Mel compression (or raw per-bin features for the linear
//! frontend), the backbone, and finally the mask is applied to the noisy
//! reference-channel Mel power. [`Enhancer::push_block`] and
//! [`Enhancer::offline`] share the per-frame arithmetic, so the two paths
//! produce bit-identical frames.

use std::time::{Duration, Instant};

use crate::audio::Audio;
use crate::backbone::{Backbone, BackboneState};
use crate::config::{Frontend, PipelineConfig};
use crate::dsp::{
    pseudo_inverse_reconstruct, Complex32, MelFilterbank, NormState, Spectrogram, Stft, TfGrid,
    LOG_FLOOR,
};
use crate::error::{Error, Result};
use crate::stft2mel::{Stft2Mel, Stft2MelState};
use crate::tensor::OpCounter;
use crate::weights::{filterbank, Manifest, Weights};

/// Frames processed per batch on the offline path.
const OFFLINE_CHUNK: usize = 64;

/// Wall time spent per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    /// STFT, normalization and supplementary features.
    pub frontend: Duration,
    /// STFT-to-Mel compression.
    pub compress: Duration,
    /// Backbone and mask application.
    pub backbone: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.frontend + self.compress + self.backbone
    }
}

/// One emitted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedFrame {
    pub index: u64,
    /// Enhanced natural-log Mel power, `n_mels` values.
    pub logmel: Vec<f32>,
    /// Mask over the backbone's bands.
    pub mask: Vec<f32>,
}

/// Result of a whole-utterance run.
#[derive(Clone, Debug)]
pub struct OfflineOutput {
    pub logmel: TfGrid,
    pub mask: TfGrid,
    /// Masked reference channel, when requested.
    pub wave: Option<Vec<f32>>,
    pub ops: OpCounter,
    pub times: StageTimes,
}

#[derive(Clone, Debug, Default)]
struct Work {
    spec: Vec<Complex32>,
    feats: Vec<f32>,
    supp: Vec<f32>,
    raw_pow: Vec<f32>,
    mask: Vec<f32>,
    logmel: Vec<f32>,
}

/// Everything one stream carries between hops.
///
/// Equality and [`StreamState::footprint`] cover the recurrent state only;
/// the operation counter, timings and scratch buffers are excluded.
#[derive(Clone, Debug)]
pub struct StreamState {
    /// Last `fft_size` samples of the start-padded signal, per channel.
    window: Vec<f32>,
    received: u64,
    norm: NormState,
    s2m: Option<Stft2MelState>,
    backbone: BackboneState,
    frames: u64,
    pub ops: OpCounter,
    pub times: StageTimes,
    work: Work,
}

impl PartialEq for StreamState {
    fn eq(&self, o: &Self) -> bool {
        self.window == o.window
            && self.received == o.received
            && self.norm == o.norm
            && self.s2m == o.s2m
            && self.backbone == o.backbone
            && self.frames == o.frames
    }
}

impl StreamState {
    /// Restores the freshly opened state.
    pub fn reset(&mut self) {
        self.window.fill(0.0);
        self.received = 0;
        self.norm.reset();
        if let Some(s) = &mut self.s2m {
            s.reset();
        }
        self.backbone.reset();
        self.frames = 0;
        self.ops.reset();
        self.times = StageTimes::default();
    }

    /// Frames emitted so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Bytes of recurrent state; constant over the life of a stream.
    pub fn footprint(&self) -> usize {
        4 * self.window.len()
            + std::mem::size_of::<NormState>()
            + self.s2m.as_ref().map_or(0, |s| s.footprint())
            + self.backbone.footprint()
            + 2 * std::mem::size_of::<u64>()
    }
}

/// A configured pipeline with loaded weights; shareable across streams.
#[derive(Debug)]
pub struct Enhancer {
    cfg: PipelineConfig,
    stft: Stft,
    fb: MelFilterbank,
    s2m: Option<Stft2Mel>,
    backbone: Backbone,
}

impl Enhancer {
    /// Checks `w` against the manifest of `cfg` before building.
    pub fn new(cfg: &PipelineConfig, w: &Weights) -> Result<Self> {
        cfg.validate()?;
        Manifest::for_config(cfg)?.validate(w)?;
        if cfg.stft.pad() % cfg.stft.hop != 0 {
            return Err(Error::Config(format!(
                "streaming needs hop {} to divide the start padding {}",
                cfg.stft.hop,
                cfg.stft.pad()
            )));
        }
        let s2m = match cfg.frontend {
            Frontend::Mel => Some(Stft2Mel::new(cfg, w)?),
            Frontend::Linear => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg.stft)?,
            fb: filterbank(cfg)?,
            s2m,
            backbone: Backbone::new(cfg, w)?,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Bands the mask covers: `n_mels`, or FFT bins for the linear frontend.
    pub fn mask_bands(&self) -> usize {
        self.cfg.bands()
    }

    pub fn open_stream(&self) -> StreamState {
        StreamState {
            window: vec![0.0; self.cfg.channels * self.cfg.stft.fft_size],
            received: 0,
            norm: NormState::new(self.cfg.norm_decay),
            s2m: self.s2m.as_ref().map(|s| s.new_state()),
            backbone: self.backbone.new_state(),
            frames: 0,
            ops: OpCounter::new(),
            times: StageTimes::default(),
            work: Work::default(),
        }
    }

    /// Feeds one hop of interleaved samples (`hop × channels`).
    ///
    /// The start of the signal is mirror-padded by `fft_size / 2` samples, so
    /// the first frame is emitted once that many samples have arrived (after
    /// the second block with the default 512/128 framing). Every later block
    /// emits exactly one frame.
    pub fn push_block(
        &self,
        st: &mut StreamState,
        samples: &[f32],
    ) -> Result<Option<EnhancedFrame>> {
        let (m, n, hop, pad) = (
            self.cfg.channels,
            self.cfg.stft.fft_size,
            self.cfg.stft.hop,
            self.cfg.stft.pad(),
        );
        if samples.len() != hop * m {
            return Err(Error::Input(format!(
                "block has {} samples; expected hop {hop} × {m} channels = {}",
                samples.len(),
                hop * m
            )));
        }
        let t0 = Instant::now();
        let got = st.received as usize;
        for c in 0..m {
            let w = &mut st.window[c * n..(c + 1) * n];
            if got >= pad {
                w.copy_within(hop.., 0);
            }
            // before the pad is complete, samples fill the right half in order
            let at = if got >= pad { n - hop } else { pad + got };
            for (i, s) in w[at..at + hop].iter_mut().enumerate() {
                *s = samples[i * m + c];
            }
            if got + hop == pad {
                for i in 0..pad {
                    w[i] = w[n - 1 - i];
                }
            }
        }
        st.received += hop as u64;
        if (st.received as usize) < pad {
            st.times.frontend += t0.elapsed();
            return Ok(None);
        }
        let bins = self.cfg.stft.bins();
        let mut work = std::mem::take(&mut st.work);
        work.spec.resize(bins * m, Complex32::new(0.0, 0.0));
        let windows: Vec<&[f32]> = st.window.chunks_exact(n).collect();
        self.stft.analyze_frame(&windows, &mut work.spec);
        st.times.frontend += t0.elapsed();
        let mut spec = std::mem::take(&mut work.spec);
        self.process(&mut spec, 1, st, &mut work);
        work.spec = spec;
        let out = EnhancedFrame {
            index: st.frames - 1,
            logmel: work.logmel.clone(),
            mask: work.mask.clone(),
        };
        st.work = work;
        Ok(Some(out))
    }

    /// Streams a whole recording through a fresh state, one hop at a time.
    /// Trailing samples short of a hop are ignored.
    pub fn stream(&self, audio: &Audio) -> Result<(TfGrid, TfGrid, StreamState)> {
        self.check_audio(audio)?;
        if self.cfg.stft.frame_count(audio.len()) == 0 {
            return Err(Error::Input(format!(
                "{} samples is shorter than the {} needed for one frame",
                audio.len(),
                self.cfg.stft.pad()
            )));
        }
        let (m, hop) = (self.cfg.channels, self.cfg.stft.hop);
        let inter = audio.interleaved();
        let mut st = self.open_stream();
        let mut logmel = TfGrid::zeros(0, self.cfg.n_mels);
        let mut mask = TfGrid::zeros(0, self.mask_bands());
        for block in inter.chunks_exact(hop * m) {
            if let Some(f) = self.push_block(&mut st, block)? {
                logmel.push_frame(&f.logmel);
                mask.push_frame(&f.mask);
            }
        }
        Ok((logmel, mask, st))
    }

    /// Whole-utterance enhancement, optionally resynthesizing the masked
    /// reference channel.
    pub fn offline(&self, audio: &Audio, with_wave: bool) -> Result<OfflineOutput> {
        self.check_audio(audio)?;
        let t0 = Instant::now();
        let raw = self.stft.analyze(audio)?;
        let (frames, bins, m) = (raw.frames(), raw.bins(), raw.channels());
        let mut st = self.open_stream();
        st.times.frontend += t0.elapsed();
        let mut logmel = Vec::with_capacity(frames * self.cfg.n_mels);
        let mut mask = Vec::with_capacity(frames * self.mask_bands());
        let mut work = Work::default();
        let mut chunk = Vec::new();
        for start in (0..frames).step_by(OFFLINE_CHUNK) {
            let len = OFFLINE_CHUNK.min(frames - start);
            chunk.clear();
            chunk.extend_from_slice(&raw.data()[start * bins * m..(start + len) * bins * m]);
            self.process(&mut chunk, len, &mut st, &mut work);
            logmel.extend_from_slice(&work.logmel);
            mask.extend_from_slice(&work.mask);
        }
        let logmel = TfGrid::new(frames, self.cfg.n_mels, logmel)?;
        let mask = TfGrid::new(frames, self.mask_bands(), mask)?;
        let wave = with_wave
            .then(|| self.reconstruct(&raw, &mask))
            .transpose()?;
        Ok(OfflineOutput {
            logmel,
            mask,
            wave,
            ops: st.ops,
            times: st.times,
        })
    }

    /// Applies `mask` to the reference channel of `raw` and overlap-adds.
    pub fn reconstruct(&self, raw: &Spectrogram, mask: &TfGrid) -> Result<Vec<f32>> {
        let r = self.cfg.ref_index();
        match self.cfg.frontend {
            Frontend::Mel => pseudo_inverse_reconstruct(raw, r, mask, &self.fb, &self.stft),
            Frontend::Linear => {
                let mut spec = raw.channel(r)?;
                for t in 0..spec.frames() {
                    for (c, &g) in spec.frame_mut(t).iter_mut().zip(mask.frame(t)) {
                        *c *= g;
                    }
                }
                self.stft.synthesize(&spec)
            }
        }
    }

    fn check_audio(&self, audio: &Audio) -> Result<()> {
        if audio.num_channels() != self.cfg.channels {
            return Err(Error::Input(format!(
                "input has {} channels, config expects {}",
                audio.num_channels(),
                self.cfg.channels
            )));
        }
        if self.cfg.ref_channel > audio.num_channels() {
            return Err(Error::Input(format!(
                "reference channel {} does not exist in {}-channel input",
                self.cfg.ref_channel,
                audio.num_channels()
            )));
        }
        if audio.sample_rate != self.cfg.stft.sample_rate {
            return Err(Error::Input(format!(
                "input is sampled at {} Hz, config expects {} Hz",
                audio.sample_rate, self.cfg.stft.sample_rate
            )));
        }
        Ok(())
    }

    /// Runs `frames` raw STFT frames (`frames × bins × channels`, normalized
    /// in place) through the network. Results land in `work.logmel` and
    /// `work.mask`.
    fn process(
        &self,
        spec: &mut [Complex32],
        frames: usize,
        st: &mut StreamState,
        work: &mut Work,
    ) {
        let t0 = Instant::now();
        let (m, bins, r) = (
            self.cfg.channels,
            self.cfg.stft.bins(),
            self.cfg.ref_index(),
        );
        let (nm, bands) = (self.cfg.n_mels, self.mask_bands());
        let linear = self.cfg.frontend == Frontend::Linear;

        // noisy reference power before normalization: Mel bands, or bins for
        // the linear frontend
        let pw = if linear { bins } else { nm };
        work.raw_pow.resize(frames * pw, 0.0);
        work.supp.resize(frames * bands, 0.0);
        for t in 0..frames {
            let frame = &mut spec[t * bins * m..(t + 1) * bins * m];
            let raw = &mut work.raw_pow[t * pw..(t + 1) * pw];
            let supp = &mut work.supp[t * bands..(t + 1) * bands];
            if linear {
                for (f, p) in raw.iter_mut().enumerate() {
                    *p = frame[f * m + r].norm_sqr();
                }
            } else {
                self.fb.power_frame(frame, m, r, raw);
            }
            st.norm.normalize_frame(frame, m, r);
            if linear {
                for (f, s) in supp.iter_mut().enumerate() {
                    *s = frame[f * m + r].norm_sqr();
                }
            } else {
                self.fb.power_frame(frame, m, r, supp);
            }
            for s in supp.iter_mut() {
                *s = (*s + LOG_FLOOR).ln();
            }
        }
        let t1 = Instant::now();
        st.times.frontend += t1 - t0;

        match &self.s2m {
            Some(s2m) => {
                let s2m_state = st.s2m.as_mut().expect("mel frontend has compression state");
                s2m.run(spec, frames, s2m_state, &mut work.feats, &mut st.ops);
            }
            None => {
                work.feats.resize(frames * bins * 2 * m, 0.0);
                for (i, z) in spec[..frames * bins * m].iter().enumerate() {
                    work.feats[2 * i] = z.re;
                    work.feats[2 * i + 1] = z.im;
                }
            }
        }
        let t2 = Instant::now();
        st.times.compress += t2 - t1;

        work.mask.resize(frames * bands, 0.0);
        self.backbone.run(
            &work.feats,
            &work.supp,
            frames,
            &mut st.backbone,
            &mut work.mask,
            &mut st.ops,
        );
        work.logmel.resize(frames * nm, 0.0);
        for t in 0..frames {
            let mk = &work.mask[t * bands..(t + 1) * bands];
            let raw = &work.raw_pow[t * pw..(t + 1) * pw];
            let out = &mut work.logmel[t * nm..(t + 1) * nm];
            if linear {
                for (b, o) in out.iter_mut().enumerate() {
                    let p: f32 = self
                        .fb
                        .support(b)
                        .map(|f| self.fb.weight(b, f) * mk[f] * mk[f] * raw[f])
                        .sum();
                    *o = (p.max(LOG_FLOOR) as f64).ln() as f32;
                }
            } else {
                for ((o, &x), &g) in out.iter_mut().zip(raw).zip(mk) {
                    *o = crate::dsp::masked_log(x, g);
                }
            }
        }
        st.frames += frames as u64;
        st.times.backbone += t2.elapsed();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::rng::SplitMix64;
    use crate::weights::random_init;

    fn tiny(frontend: Frontend) -> PipelineConfig {
        let mut c = match frontend {
            Frontend::Mel => PipelineConfig::mel(),
            Frontend::Linear => PipelineConfig::linear(),
        };
        c.channels = 2;
        c.ref_channel = 2;
        c.n_mels = 16;
        c.s2m.embed_dim = 4;
        c.backbone.hidden = [5, 4, 6, 3];
        c.backbone.out_dims = [4, 5, 3, 4];
        c
    }

    fn noise(seed: u64, m: usize, n: usize) -> Audio {
        let mut r = SplitMix64::new(seed);
        Audio::new(16000, (0..m).map(|_| r.uniform_vec(n, 0.3)).collect()).unwrap()
    }

    fn setup(cfg: &PipelineConfig) -> Enhancer {
        Enhancer::new(cfg, &random_init(cfg, 7).unwrap()).unwrap()
    }

    #[test]
    fn streaming_matches_offline_exactly() {
        for cfg in [
            tiny(Frontend::Mel),
            tiny(Frontend::Mel).with_variant(Variant::JointHandcrafted),
            tiny(Frontend::Linear),
        ] {
            let e = setup(&cfg);
            let audio = noise(1, 2, 128 * 150 + 77);
            let off = e.offline(&audio, false).unwrap();
            let (logmel, mask, st) = e.stream(&audio).unwrap();
            assert_eq!(off.logmel.frames(), cfg.stft.frame_count(audio.len()));
            assert_eq!(off.logmel, logmel);
            assert_eq!(off.mask, mask);
            assert_eq!(off.ops, st.ops);
        }
    }

    #[test]
    fn first_frame_waits_for_padding() {
        let e = setup(&tiny(Frontend::Mel));
        let mut st = e.open_stream();
        let block = vec![0.1f32; 256];
        assert!(e.push_block(&mut st, &block).unwrap().is_none());
        let f = e.push_block(&mut st, &block).unwrap().unwrap();
        assert_eq!(f.index, 0);
        assert_eq!(e.push_block(&mut st, &block).unwrap().unwrap().index, 1);
        assert!(e.push_block(&mut st, &block[..255]).is_err());
    }

    #[test]
    fn outputs_ignore_the_future() {
        let e = setup(&tiny(Frontend::Mel));
        let a = noise(2, 2, 128 * 60);
        let mut b = a.clone();
        let cut = 128 * 40;
        for c in 0..2 {
            let mut ch = b.channel(c).to_vec();
            ch[cut..].iter_mut().for_each(|v| *v = -*v * 3.0);
            b = {
                let mut chans = b.channels().to_vec();
                chans[c] = ch;
                Audio::new(16000, chans).unwrap()
            };
        }
        let (la, ma, _) = e.stream(&a).unwrap();
        let (lb, mb, _) = e.stream(&b).unwrap();
        // frame t covers samples up to t·hop + fft/2
        let safe = (cut - 256) / 128 + 1;
        for t in 0..safe {
            assert_eq!(la.frame(t), lb.frame(t), "frame {t}");
            assert_eq!(ma.frame(t), mb.frame(t));
        }
        assert_ne!(la.frame(safe), lb.frame(safe));
    }

    #[test]
    fn reset_restores_fresh_state_and_footprint_is_constant() {
        let e = setup(&tiny(Frontend::Mel).with_variant(Variant::SeparateFcbTsb));
        let fresh = e.open_stream();
        let mut st = e.open_stream();
        let size = st.footprint();
        assert!(size > 0);
        let audio = noise(3, 2, 128 * 30).interleaved();
        for block in audio.chunks_exact(256) {
            e.push_block(&mut st, block).unwrap();
            assert_eq!(st.footprint(), size);
        }
        assert_ne!(st, fresh);
        st.reset();
        assert_eq!(st, fresh);
        assert_eq!(st.ops, OpCounter::new());
    }

    #[test]
    fn rejects_wrong_input() {
        let e = setup(&tiny(Frontend::Mel));
        assert!(matches!(
            e.offline(&noise(1, 3, 4000), false),
            Err(Error::Input(_))
        ));
        let a = Audio::new(8000, vec![vec![0.0; 4000]; 2]).unwrap();
        assert!(matches!(e.offline(&a, false), Err(Error::Input(_))));
        let mut cfg = tiny(Frontend::Mel);
        let w = random_init(&cfg, 1).unwrap();
        cfg.n_mels = 20;
        assert!(Enhancer::new(&cfg, &w).is_err());
    }

    #[test]
    fn masked_wave_is_bounded_by_mask_gain() {
        let e = setup(&tiny(Frontend::Linear));
        let audio = noise(4, 2, 128 * 40);
        let out = e.offline(&audio, true).unwrap();
        let wave = out.wave.unwrap();
        assert!(wave.len() >= audio.len() - 128 && wave.len() <= audio.len());
        assert!(wave.iter().all(|v| v.is_finite()));
        let (ein, eout): (f32, f32) = (
            audio.channel(1).iter().map(|v| v * v).sum(),
            wave.iter().map(|v| v * v).sum(),
        );
        let gmax = out.mask.values().iter().cloned().fold(0.0, f32::max);
        assert!(eout <= ein * gmax * gmax * 1.2, "{eout} vs {ein}");
    }
}
