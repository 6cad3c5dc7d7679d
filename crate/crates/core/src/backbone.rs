//! Four-stage recurrent mask estimator: full-band spatial (along frequency),
//! narrow-band spatial (along time), sub-band spectral (along time, with
//! neighbouring-band power), full-band spectral (along frequency, with
//! recent-frame power), then a per-band sigmoid output.
//!
//! Frequency stages are bidirectional within a frame; time stages are
//! unidirectional and share weights across bands.

use crate::config::PipelineConfig;
use crate::dsp::TfGrid;
use crate::error::{shape_err, Error, Result};
use crate::kernels::gemm::Packed;
use crate::kernels::{linear_rows, sigmoid_inplace, PreparedLstm};
use crate::tensor::{OpCounter, Tensor};
use crate::weights::{stage_inputs, stage_is_freq, Weights};

/// One LSTM (bidirectional along frequency, or forward along time) and its
/// output projection.
#[derive(Clone, Debug)]
pub struct Stage {
    freq: bool,
    fwd: PreparedLstm,
    bwd: Option<PreparedLstm>,
    /// `dirs·h × out`.
    lin_wt: Packed,
    lin_b: Vec<f32>,
    out: usize,
}

/// Recurrent state of a time stage: one `(h, c)` per band.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeState {
    h: Vec<f32>,
    c: Vec<f32>,
}

/// Reusable buffers; contents never carry over between calls.
#[derive(Clone, Debug, Default)]
struct Scratch {
    gates: Vec<f32>,
    gates_b: Vec<f32>,
    hs: Vec<f32>,
    rec: Vec<f32>,
    hc: Vec<f32>,
    cur: Vec<f32>,
    next: Vec<f32>,
    inp: Vec<f32>,
    hist: Vec<f32>,
}

impl Stage {
    /// `wx: [dirs, 4h, in]`, `wh: [dirs, 4h, h]`, `b: [dirs, 4h]`,
    /// `lin_w: [out, dirs·h]`, `lin_b: [out]`; `dirs` is 2 along frequency.
    pub fn new(
        freq: bool,
        wx: &Tensor,
        wh: &Tensor,
        b: &Tensor,
        lin_w: &Tensor,
        lin_b: &Tensor,
    ) -> Result<Self> {
        let dirs = if freq { 2 } else { 1 };
        let (g, inp) = match wx.dims() {
            &[d, g, i] if d == dirs && g % 4 == 0 => (g, i),
            d => return shape_err(format!("stage Wx {d:?}, expected [{dirs}, 4h, in]")),
        };
        let h = g / 4;
        if wh.dims() != [dirs, g, h] || b.dims() != [dirs, g] {
            return shape_err(format!(
                "stage Wh/b {:?}/{:?}, expected [{dirs}, {g}, {h}]/[{dirs}, {g}]",
                wh.dims(),
                b.dims()
            ));
        }
        let out = match lin_w.dims() {
            &[o, i] if i == dirs * h => o,
            d => return shape_err(format!("stage linear {d:?}, expected [out, {}]", dirs * h)),
        };
        if lin_b.dims() != [out] {
            return shape_err(format!(
                "stage linear bias {:?}, expected [{out}]",
                lin_b.dims()
            ));
        }
        let dir = |k: usize| {
            PreparedLstm::new(
                inp,
                h,
                &wx.data()[k * g * inp..(k + 1) * g * inp],
                &wh.data()[k * g * h..(k + 1) * g * h],
                &b.data()[k * g..(k + 1) * g],
            )
        };
        Ok(Self {
            freq,
            fwd: dir(0),
            bwd: freq.then(|| dir(1)),
            lin_wt: Packed::from_rows(lin_w.data(), out, dirs * h),
            lin_b: lin_b.data().to_vec(),
            out,
        })
    }

    fn load(w: &Weights, k: usize) -> Result<Self> {
        let p = format!("bb.m{}", k + 1);
        let get = |n: &str| w.require(&format!("{p}.{n}"));
        Self::new(
            stage_is_freq(k),
            get("lstm.Wx")?,
            get("lstm.Wh")?,
            get("lstm.b")?,
            get("lin.W")?,
            get("lin.b")?,
        )
        .map_err(|e| Error::Manifest(format!("{p}: {e}")))
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.out
    }

    pub fn is_freq(&self) -> bool {
        self.freq
    }

    pub fn new_state(&self, bands: usize) -> TimeState {
        let n = if self.freq { 0 } else { bands * self.hidden() };
        TimeState {
            h: vec![0.0; n],
            c: vec![0.0; n],
        }
    }

    /// `x`: `frames × bands × in` → `y`: `frames × bands × out`.
    fn run(
        &self,
        x: &[f32],
        frames: usize,
        bands: usize,
        state: &mut TimeState,
        y: &mut [f32],
        s: &mut Scratch,
        ctr: &mut OpCounter,
    ) {
        let (h, g) = (self.hidden(), 4 * self.hidden());
        let rows = frames * bands;
        let dirs = if self.freq { 2 } else { 1 };
        s.gates.resize(rows * g, 0.0);
        s.hs.resize(rows * dirs * h, 0.0);
        self.fwd.input_gates(x, rows, &mut s.gates, ctr);
        if self.freq {
            let bwd = self
                .bwd
                .as_ref()
                .expect("frequency stage has two directions");
            s.gates_b.resize(rows * g, 0.0);
            bwd.input_gates(x, rows, &mut s.gates_b, ctr);
            // forward and backward chains advance together, band i and F-1-i
            s.hc.clear();
            s.hc.resize(4 * h, 0.0);
            for t in 0..frames {
                s.hc.fill(0.0);
                let (hf, rest) = s.hc.split_at_mut(h);
                let (hb, rest) = rest.split_at_mut(h);
                let (cf, cb) = rest.split_at_mut(h);
                for i in 0..bands {
                    let (rf, rb) = (t * bands + i, t * bands + bands - 1 - i);
                    let gf = &mut s.gates[rf * g..(rf + 1) * g];
                    let gb = &mut s.gates_b[rb * g..(rb + 1) * g];
                    PreparedLstm::recur_pair(
                        [&self.fwd, bwd],
                        [hf, hb],
                        [&mut *gf, &mut *gb],
                        &mut s.rec,
                        ctr,
                    );
                    self.fwd.cell(gf, cf, hf, 1, ctr);
                    bwd.cell(gb, cb, hb, 1, ctr);
                    s.hs[rf * 2 * h..rf * 2 * h + h].copy_from_slice(hf);
                    s.hs[rb * 2 * h + h..(rb + 1) * 2 * h].copy_from_slice(hb);
                }
            }
        } else {
            for t in 0..frames {
                let gt = &mut s.gates[t * bands * g..(t + 1) * bands * g];
                self.fwd.recur_rows(&state.h, bands, gt, &mut s.rec, ctr);
                self.fwd.cell(gt, &mut state.c, &mut state.h, bands, ctr);
                s.hs[t * bands * h..(t + 1) * bands * h].copy_from_slice(&state.h);
            }
        }
        linear_rows(&s.hs, rows, &self.lin_wt, Some(&self.lin_b), y, ctr);
    }

    /// Fresh-state pass over `x: [T, F, in]`.
    pub fn forward(&self, x: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
        let (t, f) = match x.dims() {
            &[t, f, i] if i == self.input_dim() => (t, f),
            d => {
                return shape_err(format!(
                    "stage expects [T, F, {}], got {d:?}",
                    self.input_dim()
                ))
            }
        };
        let mut st = self.new_state(f);
        let mut y = vec![0f32; t * f * self.out];
        self.run(
            x.data(),
            t,
            f,
            &mut st,
            &mut y,
            &mut Scratch::default(),
            ctr,
        );
        Tensor::new(vec![t, f, self.out], y)
    }
}

/// Per-stream state: time-stage recurrences and recent supplementary frames.
#[derive(Clone, Debug)]
pub struct BackboneState {
    stages: Vec<TimeState>,
    /// Last `context` frames of supplementary power, oldest first.
    past_supp: Vec<f32>,
    work: Scratch,
}

impl PartialEq for BackboneState {
    fn eq(&self, other: &Self) -> bool {
        self.stages == other.stages && self.past_supp == other.past_supp
    }
}

impl BackboneState {
    pub fn reset(&mut self) {
        for s in &mut self.stages {
            s.h.fill(0.0);
            s.c.fill(0.0);
        }
        self.past_supp.fill(0.0);
    }

    /// Bytes of state held.
    pub fn footprint(&self) -> usize {
        4 * (self
            .stages
            .iter()
            .map(|s| s.h.len() + s.c.len())
            .sum::<usize>()
            + self.past_supp.len())
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    bands: usize,
    input_dim: usize,
    n_below: usize,
    n_above: usize,
    context: usize,
    stages: [Option<Stage>; 4],
    out_w: Packed,
    out_b: Vec<f32>,
}

impl Backbone {
    pub fn new(cfg: &PipelineConfig, w: &Weights) -> Result<Self> {
        cfg.validate()?;
        let bb = &cfg.backbone;
        let inputs = stage_inputs(cfg);
        let mut stages: [Option<Stage>; 4] = Default::default();
        for k in 0..4 {
            if bb.skip[k] {
                continue;
            }
            let st = Stage::load(w, k)?;
            if st.input_dim() != inputs[k]
                || st.hidden() != bb.hidden[k]
                || st.output_dim() != bb.out_dims[k]
            {
                return Err(Error::Manifest(format!(
                    "bb.m{}: weights give in {} / hidden {} / out {}, config wants {} / {} / {}",
                    k + 1,
                    st.input_dim(),
                    st.hidden(),
                    st.output_dim(),
                    inputs[k],
                    bb.hidden[k],
                    bb.out_dims[k]
                )));
            }
            stages[k] = Some(st);
        }
        let o4 = bb.out_dims[3];
        let out_w = w.require("bb.out.W")?;
        let out_b = w.require("bb.out.b")?;
        if out_w.dims() != [1, o4] || out_b.dims() != [1] {
            return Err(Error::Manifest(format!(
                "bb.out: expected [1, {o4}]/[1], found {:?}/{:?}",
                out_w.dims(),
                out_b.dims()
            )));
        }
        Ok(Self {
            bands: cfg.bands(),
            input_dim: cfg.backbone_input_dim(),
            n_below: bb.n_below,
            n_above: bb.n_above,
            context: bb.context,
            stages,
            out_w: Packed::from_rows(out_w.data(), 1, o4),
            out_b: out_b.data().to_vec(),
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn stage(&self, k: usize) -> Option<&Stage> {
        self.stages[k].as_ref()
    }

    pub fn new_state(&self) -> BackboneState {
        BackboneState {
            stages: self
                .stages
                .iter()
                .map(|s| match s {
                    Some(s) => s.new_state(self.bands),
                    None => TimeState {
                        h: vec![],
                        c: vec![],
                    },
                })
                .collect(),
            past_supp: vec![0.0; self.context * self.bands],
            work: Scratch::default(),
        }
    }

    /// `x`: `frames × F × D` embeddings; `supp`: `frames × F` log power of the
    /// reference channel. Writes `frames × F` mask values in `(0, 1)`.
    pub fn run(
        &self,
        x: &[f32],
        supp: &[f32],
        frames: usize,
        state: &mut BackboneState,
        mask: &mut [f32],
        ctr: &mut OpCounter,
    ) {
        let f = self.bands;
        let rows = frames * f;
        let s = &mut state.work;
        let mut cur = std::mem::take(&mut s.cur);
        let mut next = std::mem::take(&mut s.next);
        let mut inp = std::mem::take(&mut s.inp);
        cur.clear();
        cur.extend_from_slice(&x[..rows * self.input_dim]);
        for k in 0..4 {
            let Some(st) = &self.stages[k] else { continue };
            match k {
                2 => self.with_neighbours(&cur, supp, frames, st.input_dim(), &mut inp),
                3 => self.with_context(
                    &cur,
                    supp,
                    frames,
                    &mut state.past_supp,
                    st.input_dim(),
                    &mut inp,
                    &mut s.hist,
                ),
                _ => std::mem::swap(&mut cur, &mut inp),
            }
            next.resize(rows * st.output_dim(), 0.0);
            st.run(&inp, frames, f, &mut state.stages[k], &mut next, s, ctr);
            std::mem::swap(&mut cur, &mut next);
        }
        if self.stages[3].is_none() {
            // the context buffer still has to follow the stream
            self.advance_context(supp, frames, &mut state.past_supp, &mut s.hist);
        }
        linear_rows(&cur, rows, &self.out_w, Some(&self.out_b), mask, ctr);
        sigmoid_inplace(&mut mask[..rows]);
        ctr.count_nonlin(rows);
        (s.cur, s.next, s.inp) = (cur, next, inp);
    }

    fn with_neighbours(
        &self,
        x: &[f32],
        supp: &[f32],
        frames: usize,
        width: usize,
        out: &mut Vec<f32>,
    ) {
        let f = self.bands;
        let d = width - (self.n_below + self.n_above + 1);
        out.resize(frames * f * width, 0.0);
        for t in 0..frames {
            for b in 0..f {
                let r = t * f + b;
                let o = &mut out[r * width..(r + 1) * width];
                o[..d].copy_from_slice(&x[r * d..(r + 1) * d]);
                for (j, slot) in o[d..].iter_mut().enumerate() {
                    let nb = (b + j).saturating_sub(self.n_below).min(f - 1);
                    *slot = supp[t * f + nb];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn with_context(
        &self,
        x: &[f32],
        supp: &[f32],
        frames: usize,
        past: &mut [f32],
        width: usize,
        out: &mut Vec<f32>,
        hist: &mut Vec<f32>,
    ) {
        let (f, c) = (self.bands, self.context);
        let d = width - (c + 1);
        out.resize(frames * f * width, 0.0);
        hist.clear();
        hist.extend_from_slice(past);
        hist.extend_from_slice(&supp[..frames * f]);
        for t in 0..frames {
            for b in 0..f {
                let r = t * f + b;
                let o = &mut out[r * width..(r + 1) * width];
                o[..d].copy_from_slice(&x[r * d..(r + 1) * d]);
                // oldest first; hist frame t + j is input frame t + j - c
                for j in 0..=c {
                    o[d + j] = hist[(t + j) * f + b];
                }
            }
        }
        past.copy_from_slice(&hist[frames * f..]);
    }

    fn advance_context(&self, supp: &[f32], frames: usize, past: &mut [f32], hist: &mut Vec<f32>) {
        let f = self.bands;
        hist.clear();
        hist.extend_from_slice(past);
        hist.extend_from_slice(&supp[..frames * f]);
        past.copy_from_slice(&hist[frames * f..]);
    }

    /// Fresh-state mask for embeddings `e: [T, F, D]` and log power `supp: T × F`.
    pub fn forward(&self, e: &Tensor, supp: &TfGrid, ctr: &mut OpCounter) -> Result<TfGrid> {
        let t = match e.dims() {
            &[t, f, d] if f == self.bands && d == self.input_dim => t,
            d => {
                return shape_err(format!(
                    "backbone expects [T, {}, {}], got {d:?}",
                    self.bands, self.input_dim
                ))
            }
        };
        if supp.frames() != t || supp.bands() != self.bands {
            return shape_err(format!(
                "supplementary {}×{}, expected {t}×{}",
                supp.frames(),
                supp.bands(),
                self.bands
            ));
        }
        let mut st = self.new_state();
        let mut mask = vec![0f32; t * self.bands];
        self.run(e.data(), supp.values(), t, &mut st, &mut mask, ctr);
        TfGrid::new(t, self.bands, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{lstm_seq, LstmParams};
    use crate::rng::SplitMix64;
    use crate::weights::random_init;

    fn rand_tensor(r: &mut SplitMix64, dims: &[usize]) -> Tensor {
        Tensor::from_fn(dims, |_| r.uniform(0.5))
    }

    fn tiny() -> PipelineConfig {
        let mut c = PipelineConfig::mel();
        c.n_mels = 12;
        c.s2m.embed_dim = 6;
        c.backbone.hidden = [5, 7, 6, 4];
        c.backbone.out_dims = [6, 5, 6, 6];
        c
    }

    fn inputs(r: &mut SplitMix64, t: usize, f: usize, d: usize) -> (Tensor, TfGrid) {
        let e = rand_tensor(r, &[t, f, d]);
        let supp = TfGrid::new(t, f, (0..t * f).map(|_| r.uniform(5.0)).collect()).unwrap();
        (e, supp)
    }

    fn lstm_dir(wx: &Tensor, wh: &Tensor, b: &Tensor, k: usize) -> LstmParams {
        let (g, i) = (wx.dims()[1], wx.dims()[2]);
        let h = g / 4;
        LstmParams::new(
            Tensor::new(vec![g, i], wx.data()[k * g * i..(k + 1) * g * i].to_vec()).unwrap(),
            Tensor::new(vec![g, h], wh.data()[k * g * h..(k + 1) * g * h].to_vec()).unwrap(),
            Tensor::new(vec![g], b.data()[k * g..(k + 1) * g].to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn freq_stage_matches_reference_lstm_per_frame() {
        let mut r = SplitMix64::new(1);
        let (inp, h, out) = (3, 4, 2);
        let wx = rand_tensor(&mut r, &[2, 4 * h, inp]);
        let wh = rand_tensor(&mut r, &[2, 4 * h, h]);
        let b = rand_tensor(&mut r, &[2, 4 * h]);
        let lw = rand_tensor(&mut r, &[out, 2 * h]);
        let lb = rand_tensor(&mut r, &[out]);
        let st = Stage::new(true, &wx, &wh, &b, &lw, &lb).unwrap();
        let x = rand_tensor(&mut r, &[3, 5, inp]);
        let y = st.forward(&x, &mut OpCounter::new()).unwrap();
        let (pf, pb) = (lstm_dir(&wx, &wh, &b, 0), lstm_dir(&wx, &wh, &b, 1));
        for t in 0..3 {
            let xt = Tensor::new(
                vec![5, inp],
                x.data()[t * 5 * inp..(t + 1) * 5 * inp].to_vec(),
            )
            .unwrap();
            let hs = lstm_seq(&xt, &pf, Some(&pb), &mut OpCounter::new()).unwrap();
            let yt = crate::kernels::linear(&hs, &lw, &lb, &mut OpCounter::new()).unwrap();
            for (a, bb) in yt
                .data()
                .iter()
                .zip(&y.data()[t * 5 * out..(t + 1) * 5 * out])
            {
                assert!((a - bb).abs() < 1e-5);
            }
        }
        // perturbing one frame leaves the others untouched
        let mut x2 = x.clone();
        x2.data_mut()[5 * inp + 2] += 1.0;
        let y2 = st.forward(&x2, &mut OpCounter::new()).unwrap();
        assert_eq!(&y.data()[..5 * out], &y2.data()[..5 * out]);
        assert_eq!(&y.data()[10 * out..], &y2.data()[10 * out..]);
        assert_ne!(&y.data()[5 * out..10 * out], &y2.data()[5 * out..10 * out]);
    }

    #[test]
    fn time_stage_is_per_band_and_causal() {
        let mut r = SplitMix64::new(2);
        let (inp, h, out, f) = (3, 5, 2, 4);
        let wx = rand_tensor(&mut r, &[1, 4 * h, inp]);
        let wh = rand_tensor(&mut r, &[1, 4 * h, h]);
        let b = rand_tensor(&mut r, &[1, 4 * h]);
        let lw = rand_tensor(&mut r, &[out, h]);
        let lb = rand_tensor(&mut r, &[out]);
        let st = Stage::new(false, &wx, &wh, &b, &lw, &lb).unwrap();
        let x = rand_tensor(&mut r, &[6, f, inp]);
        let y = st.forward(&x, &mut OpCounter::new()).unwrap();
        let p = lstm_dir(&wx, &wh, &b, 0);
        for band in 0..f {
            let seq: Vec<f32> = (0..6)
                .flat_map(|t| x.data()[(t * f + band) * inp..(t * f + band + 1) * inp].to_vec())
                .collect();
            let hs = lstm_seq(
                &Tensor::new(vec![6, inp], seq).unwrap(),
                &p,
                None,
                &mut OpCounter::new(),
            )
            .unwrap();
            let yb = crate::kernels::linear(&hs, &lw, &lb, &mut OpCounter::new()).unwrap();
            for t in 0..6 {
                for o in 0..out {
                    let got = y.data()[(t * f + band) * out + o];
                    assert!((got - yb.data()[t * out + o]).abs() < 1e-5);
                }
            }
        }
        let mut x2 = x.clone();
        x2.data_mut()[(3 * f + 1) * inp] -= 2.0;
        let y2 = st.forward(&x2, &mut OpCounter::new()).unwrap();
        assert_eq!(&y.data()[..3 * f * out], &y2.data()[..3 * f * out]);
        for t in 3..6 {
            for band in [0, 2, 3] {
                let i = (t * f + band) * out;
                assert_eq!(&y.data()[i..i + out], &y2.data()[i..i + out]);
            }
        }
    }

    #[test]
    fn mask_in_unit_interval_and_zero_output_gives_half() {
        let cfg = tiny();
        let mut w = random_init(&cfg, 3).unwrap();
        let bb = Backbone::new(&cfg, &w).unwrap();
        let mut r = SplitMix64::new(4);
        let (e, supp) = inputs(&mut r, 9, 12, 6);
        let m = bb.forward(&e, &supp, &mut OpCounter::new()).unwrap();
        assert!(m.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        w.set("bb.out.W", Tensor::zeros(&[1, 6]));
        w.set("bb.out.b", Tensor::zeros(&[1]));
        let bb = Backbone::new(&cfg, &w).unwrap();
        let m = bb.forward(&e, &supp, &mut OpCounter::new()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn causal_and_block_equals_frame_by_frame() {
        let cfg = tiny();
        let w = random_init(&cfg, 5).unwrap();
        let bb = Backbone::new(&cfg, &w).unwrap();
        let mut r = SplitMix64::new(6);
        let (e, supp) = inputs(&mut r, 8, 12, 6);
        let m = bb.forward(&e, &supp, &mut OpCounter::new()).unwrap();

        let mut e2 = e.clone();
        e2.data_mut()[5 * 12 * 6 + 7] += 1.0;
        let mut s2 = supp.clone();
        s2.values_mut()[6 * 12 + 3] -= 1.0;
        let m2 = bb.forward(&e2, &s2, &mut OpCounter::new()).unwrap();
        assert_eq!(&m.values()[..5 * 12], &m2.values()[..5 * 12]);
        assert_ne!(&m.values()[5 * 12..], &m2.values()[5 * 12..]);

        let mut st = bb.new_state();
        let mut out = vec![0f32; 12];
        for t in 0..8 {
            bb.run(
                &e.data()[t * 72..(t + 1) * 72],
                &supp.values()[t * 12..(t + 1) * 12],
                1,
                &mut st,
                &mut out,
                &mut OpCounter::new(),
            );
            assert_eq!(&out[..], m.frame(t));
        }
    }

    #[test]
    fn skipped_stage_is_identity_and_state_resets() {
        let mut cfg = tiny();
        cfg.backbone.out_dims = [6, 6, 6, 6];
        cfg.backbone.skip = [false, true, false, false];
        let w = random_init(&cfg, 7).unwrap();
        assert!(w.get("bb.m2.lstm.Wx").is_none());
        let bb = Backbone::new(&cfg, &w).unwrap();
        let mut r = SplitMix64::new(8);
        let (e, supp) = inputs(&mut r, 4, 12, 6);
        let m = bb.forward(&e, &supp, &mut OpCounter::new()).unwrap();
        assert!(m.values().iter().all(|v| v.is_finite()));

        let fresh = bb.new_state();
        let mut st = bb.new_state();
        let mut out = vec![0f32; 4 * 12];
        bb.run(
            e.data(),
            supp.values(),
            4,
            &mut st,
            &mut out,
            &mut OpCounter::new(),
        );
        assert_ne!(st, fresh);
        assert_eq!(st.footprint(), fresh.footprint());
        st.reset();
        assert_eq!(st, fresh);
    }

    #[test]
    fn neighbour_and_context_features() {
        let mut cfg = tiny();
        cfg.backbone.n_below = 1;
        cfg.backbone.n_above = 2;
        cfg.backbone.context = 2;
        let w = random_init(&cfg, 9).unwrap();
        let bb = Backbone::new(&cfg, &w).unwrap();
        let f = 12;
        let supp: Vec<f32> = (0..2 * f).map(|i| i as f32).collect();
        let x = vec![0f32; 2 * f];
        let mut nb = Vec::new();
        bb.with_neighbours(&x, &supp, 2, 1 + 4, &mut nb);
        // band 0 of frame 1: bands -1 (clamped to 0), 0, 1, 2
        assert_eq!(&nb[f * 5 + 1..f * 5 + 5], &[12.0, 12.0, 13.0, 14.0]);
        // band 11: 10, 11, 12→11, 13→11
        assert_eq!(&nb[11 * 5 + 1..11 * 5 + 5], &[10.0, 11.0, 11.0, 11.0]);
        let mut past = vec![0f32; 2 * f];
        let mut cx = Vec::new();
        bb.with_context(&x, &supp, 2, &mut past, 1 + 3, &mut cx, &mut Vec::new());
        // band 4: frame 0 sees [0, 0, s0]; frame 1 sees [0, s0, s1]
        assert_eq!(&cx[4 * 4 + 1..4 * 4 + 4], &[0.0, 0.0, 4.0]);
        assert_eq!(&cx[(f + 4) * 4 + 1..(f + 4) * 4 + 4], &[0.0, 4.0, 16.0]);
        assert_eq!(past, supp);
    }
}
