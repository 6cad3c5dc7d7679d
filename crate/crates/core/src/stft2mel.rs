//! STFT-to-Mel compression: per-bin feature embedding, frequency conv
//! blocks, gated branch exchange, Mel-band contraction and causal time
//! smoothing.
//!
//! All stages except time smoothing act on one frame at a time, so a block of
//! `T` frames gives the same numbers as `T` single-frame calls.

use crate::config::{CommDirection, PipelineConfig, Variant};
use crate::dsp::{Complex32, MelFilterbank, Spectrogram};
use crate::error::{shape_err, Error, Result};
use crate::kernels::gemm::{gemm, Packed};
use crate::kernels::{
    conv_gemm, im2col, layer_norm_rows, linear_rows, relu_inplace, tanh_inplace, LN_EPS,
};
use crate::tensor::{OpCounter, Tensor};
use crate::weights::{filterbank, Weights};

fn vec_of(w: &Weights, name: &str, dims: &[usize]) -> Result<Vec<f32>> {
    let t = w.require(name)?;
    if t.dims() != dims {
        return Err(Error::Manifest(format!(
            "shape {name}: expected {dims:?}, found {:?}",
            t.dims()
        )));
    }
    Ok(t.data().to_vec())
}

/// FC, optional ReLU, LayerNorm over the output features.
#[derive(Clone, Debug)]
pub struct LinearBlock {
    pub inp: usize,
    pub out: usize,
    pub relu: bool,
    wt: Packed,
    b: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

impl LinearBlock {
    pub fn new(w: &Tensor, b: &Tensor, gamma: &Tensor, beta: &Tensor, relu: bool) -> Result<Self> {
        let (out, inp) = match w.dims() {
            &[o, i] => (o, i),
            d => return shape_err(format!("linear block weight {d:?}, expected [out, in]")),
        };
        for (n, t) in [("bias", b), ("gamma", gamma), ("beta", beta)] {
            if t.dims() != [out] {
                return shape_err(format!("linear block {n} {:?}, expected [{out}]", t.dims()));
            }
        }
        Ok(Self {
            inp,
            out,
            relu,
            wt: Packed::from_rows(w.data(), out, inp),
            b: b.data().to_vec(),
            gamma: gamma.data().to_vec(),
            beta: beta.data().to_vec(),
        })
    }

    fn load(w: &Weights, p: &str, inp: usize, out: usize, relu: bool) -> Result<Self> {
        Ok(Self {
            inp,
            out,
            relu,
            wt: Packed::from_rows(&vec_of(w, &format!("{p}.W"), &[out, inp])?, out, inp),
            b: vec_of(w, &format!("{p}.b"), &[out])?,
            gamma: vec_of(w, &format!("{p}.ln.gamma"), &[out])?,
            beta: vec_of(w, &format!("{p}.ln.beta"), &[out])?,
        })
    }

    pub(crate) fn run(&self, x: &[f32], rows: usize, y: &mut [f32], ctr: &mut OpCounter) {
        linear_rows(x, rows, &self.wt, Some(&self.b), y, ctr);
        finish(
            &mut y[..rows * self.out],
            self.out,
            self.relu,
            &self.gamma,
            &self.beta,
            ctr,
        );
    }

    /// `x` is `[.., in]`; returns `[.., out]`.
    pub fn forward(&self, x: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
        if x.last_dim() != self.inp {
            return shape_err(format!(
                "linear block expects {} features, got {}",
                self.inp,
                x.last_dim()
            ));
        }
        let rows = x.rows();
        let mut y = vec![0f32; rows * self.out];
        self.run(x.data(), rows, &mut y, ctr);
        let mut dims = x.dims().to_vec();
        *dims.last_mut().unwrap() = self.out;
        Tensor::new(dims, y)
    }
}

fn finish(y: &mut [f32], d: usize, relu: bool, gamma: &[f32], beta: &[f32], ctr: &mut OpCounter) {
    if relu {
        relu_inplace(y);
        ctr.count_nonlin(y.len());
    }
    layer_norm_rows(y, d, gamma, beta, LN_EPS, ctr);
}

/// `D → D` convolution along frequency (same-centered), optional ReLU, LayerNorm.
#[derive(Clone, Debug)]
pub struct FconvBlock {
    pub dim: usize,
    pub kernel_size: usize,
    pub relu: bool,
    kt: Packed,
    b: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

impl FconvBlock {
    pub fn new(k: &Tensor, b: &Tensor, gamma: &Tensor, beta: &Tensor, relu: bool) -> Result<Self> {
        let (d, ks) = match k.dims() {
            &[o, i, ks] if o == i && ks % 2 == 1 => (o, ks),
            dd => return shape_err(format!("conv block kernel {dd:?}, expected [D, D, odd k]")),
        };
        for t in [b, gamma, beta] {
            if t.dims() != [d] {
                return shape_err(format!("conv block vector {:?}, expected [{d}]", t.dims()));
            }
        }
        Ok(Self {
            dim: d,
            kernel_size: ks,
            relu,
            kt: Packed::from_rows(k.data(), d, d * ks),
            b: b.data().to_vec(),
            gamma: gamma.data().to_vec(),
            beta: beta.data().to_vec(),
        })
    }

    fn load(w: &Weights, p: &str, d: usize, ks: usize, relu: bool) -> Result<Self> {
        Ok(Self {
            dim: d,
            kernel_size: ks,
            relu,
            kt: Packed::from_rows(&vec_of(w, &format!("{p}.K"), &[d, d, ks])?, d, d * ks),
            b: vec_of(w, &format!("{p}.b"), &[d])?,
            gamma: vec_of(w, &format!("{p}.ln.gamma"), &[d])?,
            beta: vec_of(w, &format!("{p}.ln.beta"), &[d])?,
        })
    }

    /// `x`, `y`: `frames × bands × D`.
    pub(crate) fn run(
        &self,
        x: &[f32],
        frames: usize,
        bands: usize,
        y: &mut [f32],
        cols: &mut Vec<f32>,
        ctr: &mut OpCounter,
    ) {
        let (d, ks) = (self.dim, self.kernel_size);
        let half = ks / 2;
        let rows = frames * bands;
        cols.resize(rows * d * ks, 0.0);
        im2col(rows, d, ks, x, cols, |r, j| {
            let (t, f) = (r / bands, r % bands);
            (f + j)
                .checked_sub(half)
                .filter(|&g| g < bands)
                .map(|g| t * bands + g)
        });
        conv_gemm(cols, rows, &self.kt, Some(&self.b), y, ctr);
        finish(
            &mut y[..rows * d],
            d,
            self.relu,
            &self.gamma,
            &self.beta,
            ctr,
        );
    }

    /// `x` is `[T, F, D]`.
    pub fn forward(&self, x: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
        let (t, f) = frames_bands(x, self.dim)?;
        let mut y = vec![0f32; x.numel()];
        self.run(x.data(), t, f, &mut y, &mut Vec::new(), ctr);
        Tensor::new(x.dims().to_vec(), y)
    }
}

fn frames_bands(x: &Tensor, d: usize) -> Result<(usize, usize)> {
    match x.dims() {
        &[t, f, dd] if dd == d => Ok((t, f)),
        dims => shape_err(format!("expected [T, F, {d}], got {dims:?}")),
    }
}

/// Gate `target ∘ tanh(W·source + b)`, one direction of the branch exchange.
#[derive(Clone, Debug)]
pub struct Gate {
    pub dim: usize,
    wt: Packed,
    b: Vec<f32>,
}

impl Gate {
    pub fn new(w: &Tensor, b: &Tensor) -> Result<Self> {
        let d = match w.dims() {
            &[o, i] if o == i => o,
            dd => return shape_err(format!("gate weight {dd:?}, expected square")),
        };
        if b.dims() != [d] {
            return shape_err(format!("gate bias {:?}, expected [{d}]", b.dims()));
        }
        Ok(Self {
            dim: d,
            wt: Packed::from_rows(w.data(), d, d),
            b: b.data().to_vec(),
        })
    }

    fn load(w: &Weights, p: &str, d: usize) -> Result<Self> {
        Ok(Self {
            dim: d,
            wt: Packed::from_rows(&vec_of(w, &format!("{p}.W"), &[d, d])?, d, d),
            b: vec_of(w, &format!("{p}.b"), &[d])?,
        })
    }

    /// Writes `target ∘ tanh(W·source + b)` to `out`.
    pub(crate) fn run(
        &self,
        target: &[f32],
        source: &[f32],
        rows: usize,
        out: &mut [f32],
        ctr: &mut OpCounter,
    ) {
        let n = rows * self.dim;
        linear_rows(source, rows, &self.wt, Some(&self.b), out, ctr);
        tanh_inplace(&mut out[..n]);
        ctr.count_nonlin(n);
        for (o, &t) in out[..n].iter_mut().zip(target) {
            *o *= t;
        }
        ctr.count_add(n);
    }
}

/// `e_mag ∘ tanh(linear(e_pha))` with the gate's parameters; shapes `[.., D]`.
pub fn info_comm(
    e_mag: &Tensor,
    e_pha: &Tensor,
    gate: &Gate,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    if e_mag.dims() != e_pha.dims() || e_mag.last_dim() != gate.dim {
        return shape_err(format!(
            "info_comm shapes {:?} / {:?} with gate width {}",
            e_mag.dims(),
            e_pha.dims(),
            gate.dim
        ));
    }
    let mut y = vec![0f32; e_mag.numel()];
    gate.run(e_mag.data(), e_pha.data(), e_mag.rows(), &mut y, ctr);
    Tensor::new(e_mag.dims().to_vec(), y)
}

/// `out[f′, d] = Σ_f fb[f′, f]·x[f, d]` for each of `frames` frames, over the
/// filter supports only.
pub(crate) fn handcrafted_frames(
    fb: &MelFilterbank,
    x: &[f32],
    frames: usize,
    d: usize,
    out: &mut [f32],
    ctr: &mut OpCounter,
) {
    let (fm, f) = (fb.n_mels(), fb.n_bins());
    out[..frames * fm * d].fill(0.0);
    for t in 0..frames {
        let xt = &x[t * f * d..(t + 1) * f * d];
        for m in 0..fm {
            let o = &mut out[(t * fm + m) * d..(t * fm + m + 1) * d];
            let row = fb.row(m);
            for k in fb.support(m) {
                let wk = row[k];
                for (ov, &xv) in o.iter_mut().zip(&xt[k * d..(k + 1) * d]) {
                    *ov += wk * xv;
                }
            }
        }
    }
    ctr.count_mac(frames * fb.nnz() * d);
}

/// Triangular-filterbank contraction of `x: [T, F, D]` to `[T, F′, D]`.
pub fn apply_handcrafted_fb(x: &Tensor, fb: &MelFilterbank, ctr: &mut OpCounter) -> Result<Tensor> {
    let (t, f, d) = match x.dims() {
        &[t, f, d] => (t, f, d),
        dims => return shape_err(format!("expected [T, F, D], got {dims:?}")),
    };
    if f != fb.n_bins() {
        return shape_err(format!("input has {f} bins, filterbank {}", fb.n_bins()));
    }
    let mut y = vec![0f32; t * fb.n_mels() * d];
    handcrafted_frames(fb, x.data(), t, d, &mut y, ctr);
    Tensor::new(vec![t, fb.n_mels(), d], y)
}

/// Dense frequency contraction `out[f′, :] = Σ_f W[f′, f]·x[f, :] + b[f′]`.
#[derive(Clone, Debug)]
pub struct LearnableFb {
    pub bands: usize,
    pub bins: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

impl LearnableFb {
    pub fn new(w: &Tensor, b: &Tensor) -> Result<Self> {
        let (fm, f) = match w.dims() {
            &[fm, f] => (fm, f),
            d => return shape_err(format!("filterbank weight {d:?}, expected [F′, F]")),
        };
        if b.dims() != [fm] {
            return shape_err(format!("filterbank bias {:?}, expected [{fm}]", b.dims()));
        }
        Ok(Self {
            bands: fm,
            bins: f,
            w: w.data().to_vec(),
            b: b.data().to_vec(),
        })
    }

    pub(crate) fn run(
        &self,
        x: &[f32],
        frames: usize,
        d: usize,
        out: &mut [f32],
        ctr: &mut OpCounter,
    ) {
        let (fm, f) = (self.bands, self.bins);
        for t in 0..frames {
            let o = &mut out[t * fm * d..(t + 1) * fm * d];
            gemm(&self.w, fm, f, &x[t * f * d..(t + 1) * f * d], d, o);
            for (row, &bb) in o.chunks_exact_mut(d).zip(&self.b) {
                for v in row {
                    *v += bb;
                }
            }
        }
        ctr.count_mac(frames * fm * f * d);
        ctr.count_add(frames * fm * d);
    }
}

/// Learnable filterbank on `x: [T, F, D]`.
pub fn apply_learnable_fb(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    let fb = LearnableFb::new(w, b)?;
    let (t, f, d) = match x.dims() {
        &[t, f, d] => (t, f, d),
        dims => return shape_err(format!("expected [T, F, D], got {dims:?}")),
    };
    if f != fb.bins {
        return shape_err(format!("input has {f} bins, filterbank weight {}", fb.bins));
    }
    let mut y = vec![0f32; t * fb.bands * d];
    fb.run(x.data(), t, d, &mut y, ctr);
    Tensor::new(vec![t, fb.bands, d], y)
}

/// One small FC per Mel band over exactly the bins of its triangle, weights
/// shared across embedding channels.
#[derive(Clone, Debug)]
pub struct TrainMel {
    fb: MelFilterbank,
    w: Vec<f32>,
    b: Vec<f32>,
}

impl TrainMel {
    pub fn new(fb: MelFilterbank, w: &Tensor, b: &Tensor) -> Result<Self> {
        if w.dims() != [fb.nnz()] || b.dims() != [fb.n_mels()] {
            return shape_err(format!(
                "band-group weights {:?}/{:?}, expected [{}]/[{}]",
                w.dims(),
                b.dims(),
                fb.nnz(),
                fb.n_mels()
            ));
        }
        Ok(Self {
            w: w.data().to_vec(),
            b: b.data().to_vec(),
            fb,
        })
    }

    pub(crate) fn run(
        &self,
        x: &[f32],
        frames: usize,
        d: usize,
        out: &mut [f32],
        ctr: &mut OpCounter,
    ) {
        let (fm, f) = (self.fb.n_mels(), self.fb.n_bins());
        for t in 0..frames {
            let xt = &x[t * f * d..(t + 1) * f * d];
            let mut off = 0;
            for m in 0..fm {
                let o = &mut out[(t * fm + m) * d..(t * fm + m + 1) * d];
                o.fill(self.b[m]);
                for k in self.fb.support(m) {
                    let wk = self.w[off];
                    off += 1;
                    for (ov, &xv) in o.iter_mut().zip(&xt[k * d..(k + 1) * d]) {
                        *ov += wk * xv;
                    }
                }
            }
        }
        ctr.count_mac(frames * self.fb.nnz() * d);
        ctr.count_add(frames * fm * d);
    }
}

/// Causal convolution along time with kernel `[D, C_in, k]` and `k - 1`
/// frames of history per band.
#[derive(Clone, Debug)]
pub struct TimeSmooth {
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel_size: usize,
    kt: Packed,
    b: Vec<f32>,
}

/// Past input frames of a [`TimeSmooth`], oldest first; zeros at stream start.
#[derive(Clone, Debug, PartialEq)]
pub struct TsbState {
    history: Vec<f32>,
}

impl TsbState {
    pub fn reset(&mut self) {
        self.history.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

impl TimeSmooth {
    pub fn new(k: &Tensor, b: &Tensor) -> Result<Self> {
        let (o, i, ks) = match k.dims() {
            &[o, i, ks] => (o, i, ks),
            d => return shape_err(format!("smoothing kernel {d:?}, expected [out, in, k]")),
        };
        if b.dims() != [o] {
            return shape_err(format!("smoothing bias {:?}, expected [{o}]", b.dims()));
        }
        Ok(Self {
            in_dim: i,
            out_dim: o,
            kernel_size: ks,
            kt: Packed::from_rows(k.data(), o, i * ks),
            b: b.data().to_vec(),
        })
    }

    pub fn new_state(&self, bands: usize) -> TsbState {
        TsbState {
            history: vec![0f32; (self.kernel_size - 1) * bands * self.in_dim],
        }
    }

    /// `x`: `frames × bands × in_dim`; `y`: `frames × bands × out_dim`.
    pub(crate) fn run(
        &self,
        x: &[f32],
        frames: usize,
        bands: usize,
        state: &mut TsbState,
        y: &mut [f32],
        ext: &mut Vec<f32>,
        cols: &mut Vec<f32>,
        ctr: &mut OpCounter,
    ) {
        let (ci, ks) = (self.in_dim, self.kernel_size);
        let past = ks - 1;
        let frame = bands * ci;
        ext.clear();
        ext.extend_from_slice(&state.history);
        ext.extend_from_slice(&x[..frames * frame]);
        let rows = frames * bands;
        cols.resize(rows * ci * ks, 0.0);
        // tap j of frame t reads extended frame t + j; tap k-1 is the current frame
        im2col(rows, ci, ks, ext, cols, |r, j| {
            let (t, f) = (r / bands, r % bands);
            Some((t + j) * bands + f)
        });
        conv_gemm(cols, rows, &self.kt, Some(&self.b), y, ctr);
        let total = past + frames;
        state
            .history
            .copy_from_slice(&ext[(total - past) * frame..total * frame]);
    }

    /// Fresh-state smoothing of `x: [T, F′, C_in]`.
    pub fn forward(&self, x: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
        let (t, f) = frames_bands(x, self.in_dim)?;
        let mut st = self.new_state(f);
        let mut y = vec![0f32; t * f * self.out_dim];
        self.run(
            x.data(),
            t,
            f,
            &mut st,
            &mut y,
            &mut Vec::new(),
            &mut Vec::new(),
            ctr,
        );
        Tensor::new(vec![t, f, self.out_dim], y)
    }
}

#[derive(Clone, Debug)]
struct Branch {
    lin: LinearBlock,
    fcb: Vec<FconvBlock>,
}

#[derive(Clone, Debug)]
struct Exchange {
    after_block: usize,
    p2m: Gate,
    m2p: Option<Gate>,
}

/// Per-stream state of the compression module.
#[derive(Clone, Debug)]
pub struct Stft2MelState {
    pub tsb: Option<TsbState>,
    work: Scratch,
}

impl PartialEq for Stft2MelState {
    fn eq(&self, other: &Self) -> bool {
        self.tsb == other.tsb
    }
}

impl Stft2MelState {
    pub fn reset(&mut self) {
        if let Some(s) = &mut self.tsb {
            s.reset();
        }
    }

    pub fn footprint(&self) -> usize {
        self.tsb.as_ref().map_or(0, |s| s.len() * 4)
    }
}

/// The whole compression stage for one variant.
#[derive(Clone, Debug)]
pub struct Stft2Mel {
    variant: Variant,
    channels: usize,
    bins: usize,
    bands: usize,
    dim: usize,
    fb: MelFilterbank,
    branches: Vec<Branch>,
    exchanges: Vec<Exchange>,
    learn_fb: Option<LearnableFb>,
    trainmel: Option<TrainMel>,
    tsb: Option<TimeSmooth>,
}

/// Reusable buffers; contents never carry over between calls.
#[derive(Clone, Debug, Default)]
struct Scratch {
    a: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
    d: Vec<f32>,
    cols: Vec<f32>,
    ext: Vec<f32>,
    feat_a: Vec<f32>,
    feat_b: Vec<f32>,
    band: Vec<f32>,
    pb: Vec<f32>,
    stacked: Vec<f32>,
}

impl Stft2Mel {
    pub fn new(cfg: &PipelineConfig, w: &Weights) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.s2m;
        let (m, d) = (cfg.channels, s.embed_dim);
        let fb = filterbank(cfg)?;
        let specs: &[(&str, usize, bool)] = if s.variant.is_separate() {
            &[("mag", m, true), ("pha", 2 * m, false)]
        } else {
            &[("joint", 2 * m, true)]
        };
        let mut branches = Vec::new();
        for &(br, inp, relu) in specs {
            let lin = LinearBlock::load(w, &format!("s2m.{br}.lin"), inp, d, relu)?;
            let mut fcb = Vec::new();
            if s.variant.has_conv_blocks() {
                for i in 0..s.conv_blocks {
                    fcb.push(FconvBlock::load(
                        w,
                        &format!("s2m.{br}.fcb.{i}"),
                        d,
                        s.f_kernel,
                        relu,
                    )?);
                }
            }
            branches.push(Branch { lin, fcb });
        }
        let mut exchanges = Vec::new();
        for i in s.comm_blocks() {
            let p2m = Gate::load(w, &format!("s2m.comm.{i}.p2m"), d)?;
            let m2p = match s.comm {
                CommDirection::Both => Some(Gate::load(w, &format!("s2m.comm.{i}.m2p"), d)?),
                CommDirection::MagFromPhase => None,
            };
            exchanges.push(Exchange {
                after_block: i,
                p2m,
                m2p,
            });
        }
        let (f, fm) = (cfg.stft.bins(), cfg.n_mels);
        let learn_fb = if s.variant.is_separate() {
            Some(LearnableFb::new(
                w.require("s2m.pha.fb.W")?,
                w.require("s2m.pha.fb.b")?,
            )?)
        } else {
            None
        };
        if let Some(l) = &learn_fb {
            if (l.bands, l.bins) != (fm, f) {
                return Err(Error::Manifest(format!(
                    "shape s2m.pha.fb.W: expected [{fm}, {f}], found [{}, {}]",
                    l.bands, l.bins
                )));
            }
        }
        let trainmel = if s.variant == Variant::JointTrainMel {
            Some(TrainMel::new(
                fb.clone(),
                w.require("s2m.joint.trainmel.W")?,
                w.require("s2m.joint.trainmel.b")?,
            )?)
        } else {
            None
        };
        let tsb = if s.variant.has_tsb() {
            let cin = if s.variant.is_separate() { 2 * d } else { d };
            Some(TimeSmooth {
                in_dim: cin,
                out_dim: d,
                kernel_size: s.t_kernel,
                kt: Packed::from_rows(
                    &vec_of(w, "s2m.tsb.K", &[d, cin, s.t_kernel])?,
                    d,
                    cin * s.t_kernel,
                ),
                b: vec_of(w, "s2m.tsb.b", &[d])?,
            })
        } else {
            None
        };
        Ok(Self {
            variant: s.variant,
            channels: m,
            bins: f,
            bands: fm,
            dim: d,
            fb,
            branches,
            exchanges,
            learn_fb,
            trainmel,
            tsb,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn new_state(&self) -> Stft2MelState {
        Stft2MelState {
            tsb: self.tsb.as_ref().map(|t| t.new_state(self.bands)),
            work: Scratch::default(),
        }
    }

    /// Branch input features for `frames` frames of `[F][M]` STFT
    /// coefficients. Separate: `|X|` per channel, and `(cos, sin)` of the
    /// phase per channel (`(1, 0)` where `|X| = 0`). Joint: `(re, im)` per
    /// channel.
    fn features(&self, x: &[Complex32], rows: usize, mag: &mut Vec<f32>, pha: &mut Vec<f32>) {
        let m = self.channels;
        if self.variant.is_separate() {
            mag.resize(rows * m, 0.0);
            pha.resize(rows * 2 * m, 0.0);
            for (i, z) in x[..rows * m].iter().enumerate() {
                let a = z.norm();
                mag[i] = a;
                let (c, s) = if a > 0.0 {
                    (z.re / a, z.im / a)
                } else {
                    (1.0, 0.0)
                };
                pha[2 * i] = c;
                pha[2 * i + 1] = s;
            }
        } else {
            mag.resize(rows * 2 * m, 0.0);
            for (i, z) in x[..rows * m].iter().enumerate() {
                mag[2 * i] = z.re;
                mag[2 * i + 1] = z.im;
            }
        }
    }

    /// Compresses `frames` consecutive frames of a normalized `[T][F][M]`
    /// spectrogram slice into `frames × F′ × D`, advancing `state`.
    pub fn run(
        &self,
        x: &[Complex32],
        frames: usize,
        state: &mut Stft2MelState,
        out: &mut Vec<f32>,
        ctr: &mut OpCounter,
    ) {
        let s = &mut state.work;
        let (f, fm, d) = (self.bins, self.bands, self.dim);
        let rows = frames * f;
        let (mut feat_a, mut feat_b) =
            (std::mem::take(&mut s.feat_a), std::mem::take(&mut s.feat_b));
        self.features(x, rows, &mut feat_a, &mut feat_b);

        // branch 0 lives in `a`, branch 1 (separate only) in `b`
        s.a.resize(rows * d, 0.0);
        self.branches[0].lin.run(&feat_a, rows, &mut s.a, ctr);
        if self.branches.len() == 2 {
            s.b.resize(rows * d, 0.0);
            self.branches[1].lin.run(&feat_b, rows, &mut s.b, ctr);
        }
        s.c.resize(rows * d, 0.0);
        s.d.resize(rows * d, 0.0);
        let blocks = self.branches[0].fcb.len();
        for i in 0..blocks {
            self.branches[0].fcb[i].run(&s.a, frames, f, &mut s.c, &mut s.cols, ctr);
            std::mem::swap(&mut s.a, &mut s.c);
            if self.branches.len() == 2 {
                self.branches[1].fcb[i].run(&s.b, frames, f, &mut s.c, &mut s.cols, ctr);
                std::mem::swap(&mut s.b, &mut s.c);
            }
            for ex in self.exchanges.iter().filter(|e| e.after_block == i) {
                ex.p2m.run(&s.a, &s.b, rows, &mut s.c, ctr);
                if let Some(m2p) = &ex.m2p {
                    m2p.run(&s.b, &s.a, rows, &mut s.d, ctr);
                    std::mem::swap(&mut s.b, &mut s.d);
                }
                std::mem::swap(&mut s.a, &mut s.c);
            }
        }

        (s.feat_a, s.feat_b) = (feat_a, feat_b);

        let band = &mut s.band;
        band.resize(frames * fm * d, 0.0);
        if let Some(tm) = &self.trainmel {
            tm.run(&s.a, frames, d, band, ctr);
        } else {
            handcrafted_frames(&self.fb, &s.a, frames, d, band, ctr);
        }
        let stacked = if let Some(lfb) = &self.learn_fb {
            s.pb.resize(frames * fm * d, 0.0);
            s.stacked.resize(frames * fm * 2 * d, 0.0);
            lfb.run(&s.b, frames, d, &mut s.pb, ctr);
            for r in 0..frames * fm {
                s.stacked[r * 2 * d..r * 2 * d + d].copy_from_slice(&band[r * d..(r + 1) * d]);
                s.stacked[r * 2 * d + d..(r + 1) * 2 * d]
                    .copy_from_slice(&s.pb[r * d..(r + 1) * d]);
            }
            &s.stacked
        } else {
            &s.band
        };

        match (&self.tsb, &mut state.tsb) {
            (Some(t), Some(st)) => {
                out.resize(frames * fm * d, 0.0);
                t.run(stacked, frames, fm, st, out, &mut s.ext, &mut s.cols, ctr);
            }
            _ => {
                out.clear();
                out.extend_from_slice(stacked);
            }
        }
    }

    /// Fresh-state compression of a whole spectrogram into `[T, F′, D]`.
    pub fn compress(&self, spec: &Spectrogram, ctr: &mut OpCounter) -> Result<Tensor> {
        if spec.bins() != self.bins || spec.channels() != self.channels {
            return shape_err(format!(
                "spectrogram has {} bins × {} channels, model expects {} × {}",
                spec.bins(),
                spec.channels(),
                self.bins,
                self.channels
            ));
        }
        let t = spec.frames();
        if t == 0 {
            return shape_err("empty spectrogram");
        }
        let mut st = self.new_state();
        let mut out = Vec::new();
        self.run(spec.data(), t, &mut st, &mut out, ctr);
        Tensor::new(vec![t, self.bands, self.dim], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::weights::random_init;

    fn rand_tensor(r: &mut SplitMix64, dims: &[usize]) -> Tensor {
        Tensor::from_fn(dims, |_| r.uniform(1.0))
    }

    fn rand_spec(r: &mut SplitMix64, t: usize, f: usize, m: usize) -> Spectrogram {
        let data = (0..t * f * m)
            .map(|_| Complex32::new(r.gaussian(), r.gaussian()))
            .collect();
        Spectrogram::from_data(t, f, m, data).unwrap()
    }

    fn small_cfg(v: Variant) -> PipelineConfig {
        let mut c = PipelineConfig::mel().with_variant(v);
        c.s2m.embed_dim = 8;
        c.channels = 2;
        c.ref_channel = 1;
        c
    }

    #[test]
    fn linear_block_zero_input_gives_beta() {
        let mut r = SplitMix64::new(1);
        let w = rand_tensor(&mut r, &[4, 3]);
        let beta = rand_tensor(&mut r, &[4]);
        let lb = LinearBlock::new(
            &w,
            &Tensor::zeros(&[4]),
            &Tensor::filled(&[4], 1.0),
            &beta,
            true,
        )
        .unwrap();
        let y = lb
            .forward(&Tensor::zeros(&[2, 5, 3]), &mut OpCounter::new())
            .unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, beta.data());
        }
        assert!(lb
            .forward(&Tensor::zeros(&[2, 4]), &mut OpCounter::new())
            .is_err());
    }

    #[test]
    fn linear_block_without_relu_keeps_sign_pattern() {
        // LN of a row with unit gamma/zero beta preserves the sign of (v - mean)
        let mut r = SplitMix64::new(2);
        let (inp, d) = (5, 6);
        let w = rand_tensor(&mut r, &[d, inp]);
        let b = rand_tensor(&mut r, &[d]);
        let x = rand_tensor(&mut r, &[7, inp]);
        let ones = Tensor::filled(&[d], 1.0);
        let lb = LinearBlock::new(&w, &b, &ones, &Tensor::zeros(&[d]), false).unwrap();
        let y = lb.forward(&x, &mut OpCounter::new()).unwrap();
        let mut negatives = 0;
        for (xr, yr) in x.data().chunks(inp).zip(y.data().chunks(d)) {
            let pre: Vec<f64> = (0..d)
                .map(|o| {
                    b.data()[o] as f64
                        + (0..inp)
                            .map(|i| w.data()[o * inp + i] as f64 * xr[i] as f64)
                            .sum::<f64>()
                })
                .collect();
            let mean = pre.iter().sum::<f64>() / d as f64;
            for o in 0..d {
                let centred = pre[o] - mean;
                if centred.abs() > 1e-4 {
                    assert_eq!(centred < 0.0, yr[o] < 0.0);
                }
                negatives += (pre[o] < 0.0) as usize;
            }
        }
        assert!(negatives > 0);
    }

    #[test]
    fn fconv_identity_tap_and_frame_independence() {
        let d = 4;
        let mut k = Tensor::zeros(&[d, d, 3]);
        for o in 0..d {
            k.data_mut()[(o * d + o) * 3 + 1] = 1.0;
        }
        let mut r = SplitMix64::new(3);
        let x = rand_tensor(&mut r, &[3, 5, d]);
        // with a centre-tap identity kernel the block reduces to its LayerNorm
        let ones = Tensor::filled(&[d], 1.0);
        let blk =
            FconvBlock::new(&k, &Tensor::zeros(&[d]), &ones, &Tensor::zeros(&[d]), false).unwrap();
        let y = blk.forward(&x, &mut OpCounter::new()).unwrap();
        for (a, b) in y.data().iter().zip(layer_norm_tensor(&x).data()) {
            assert!((a - b).abs() < 1e-6);
        }

        let kr = rand_tensor(&mut r, &[d, d, 3]);
        let blk = FconvBlock::new(
            &kr,
            &rand_tensor(&mut r, &[d]),
            &ones,
            &Tensor::zeros(&[d]),
            true,
        )
        .unwrap();
        let y0 = blk.forward(&x, &mut OpCounter::new()).unwrap();
        let mut x2 = x.clone();
        x2.data_mut()[2 * 5 * d + 3] += 1.0;
        let y1 = blk.forward(&x2, &mut OpCounter::new()).unwrap();
        assert_eq!(&y0.data()[..2 * 5 * d], &y1.data()[..2 * 5 * d]);
    }

    fn layer_norm_tensor(x: &Tensor) -> Tensor {
        let d = x.last_dim();
        let mut y = x.clone();
        layer_norm_rows(
            y.data_mut(),
            d,
            &vec![1.0; d],
            &vec![0.0; d],
            LN_EPS,
            &mut OpCounter::new(),
        );
        y
    }

    #[test]
    fn fconv_matches_loop_oracle() {
        let mut r = SplitMix64::new(4);
        let (t, f, d) = (2, 6, 3);
        let x = rand_tensor(&mut r, &[t, f, d]);
        let k = rand_tensor(&mut r, &[d, d, 3]);
        let b = rand_tensor(&mut r, &[d]);
        let blk = FconvBlock::new(
            &k,
            &b,
            &Tensor::filled(&[d], 1.0),
            &Tensor::zeros(&[d]),
            true,
        )
        .unwrap();
        let mut ctr = OpCounter::new();
        let y = blk.forward(&x, &mut ctr).unwrap();
        assert_eq!(ctr.macs as usize, t * f * d * d * 3 + t * f * 2 * d);
        for ti in 0..t {
            for fi in 0..f {
                let mut pre = vec![0f64; d];
                for o in 0..d {
                    pre[o] = b.data()[o] as f64;
                    for c in 0..d {
                        for j in 0..3 {
                            let g = fi as isize + j as isize - 1;
                            if (0..f as isize).contains(&g) {
                                pre[o] += k.data()[(o * d + c) * 3 + j] as f64
                                    * x.data()[(ti * f + g as usize) * d + c] as f64;
                            }
                        }
                    }
                    pre[o] = pre[o].max(0.0);
                }
                let mean = pre.iter().sum::<f64>() / d as f64;
                let var = pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                for o in 0..d {
                    let want = (pre[o] - mean) / (var + LN_EPS as f64).sqrt();
                    let got = y.data()[(ti * f + fi) * d + o] as f64;
                    assert!((got - want).abs() < 1e-4, "{got} {want}");
                }
            }
        }
    }

    #[test]
    fn info_comm_bounds_and_oracle() {
        let mut r = SplitMix64::new(5);
        let d = 5;
        let mag = rand_tensor(&mut r, &[4, 3, d]);
        let pha = rand_tensor(&mut r, &[4, 3, d]);
        let gate = Gate::new(&Tensor::zeros(&[d, d]), &Tensor::zeros(&[d])).unwrap();
        let y = info_comm(&mag, &pha, &gate, &mut OpCounter::new()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let w = rand_tensor(&mut r, &[d, d]);
        let b = rand_tensor(&mut r, &[d]);
        let gate = Gate::new(&w, &b).unwrap();
        let y = info_comm(&mag, &pha, &gate, &mut OpCounter::new()).unwrap();
        for row in 0..12 {
            for o in 0..d {
                let mut z = b.data()[o] as f64;
                for i in 0..d {
                    z += w.data()[o * d + i] as f64 * pha.data()[row * d + i] as f64;
                }
                let want = mag.data()[row * d + o] as f64 * z.tanh();
                let got = y.data()[row * d + o];
                assert!((got as f64 - want).abs() <= 1e-6 * want.abs().max(1.0));
                assert!(got.abs() <= mag.data()[row * d + o].abs());
            }
        }
    }

    #[test]
    fn filterbanks_agree_with_matmul_oracle() {
        let cfg = PipelineConfig::mel();
        let fb = filterbank(&cfg).unwrap();
        let mut r = SplitMix64::new(6);
        let (t, d) = (2, 3);
        let x = rand_tensor(&mut r, &[t, 257, d]);
        let mut ctr = OpCounter::new();
        let hc = apply_handcrafted_fb(&x, &fb, &mut ctr).unwrap();
        assert_eq!(ctr.macs as usize, t * fb.nnz() * d);
        let w = Tensor::new(vec![80, 257], fb.weights().to_vec()).unwrap();
        let lf = apply_learnable_fb(&x, &w, &Tensor::zeros(&[80]), &mut OpCounter::new()).unwrap();
        for ti in 0..t {
            for m in 0..80 {
                for di in 0..d {
                    let want: f64 = (0..257)
                        .map(|k| fb.weight(m, k) as f64 * x.data()[(ti * 257 + k) * d + di] as f64)
                        .sum();
                    let i = (ti * 80 + m) * d + di;
                    assert!((hc.data()[i] as f64 - want).abs() < 1e-5);
                    assert!((lf.data()[i] as f64 - want).abs() < 1e-5);
                }
            }
        }
        let c = apply_handcrafted_fb(&Tensor::filled(&[1, 257, 1], 2.0), &fb, &mut ctr).unwrap();
        for m in 0..80 {
            let rs: f32 = fb.row(m).iter().sum();
            assert!((c.data()[m] - 2.0 * rs).abs() < 1e-5);
        }
        assert!(apply_handcrafted_fb(&Tensor::zeros(&[1, 256, 1]), &fb, &mut ctr).is_err());
    }

    #[test]
    fn tsb_is_causal_and_smooths_constants() {
        let mut r = SplitMix64::new(7);
        let (ci, d, ks) = (4, 2, 6);
        let k = rand_tensor(&mut r, &[d, ci, ks]);
        let b = rand_tensor(&mut r, &[d]);
        let tsb = TimeSmooth::new(&k, &b).unwrap();
        let x = rand_tensor(&mut r, &[12, 3, ci]);
        let y0 = tsb.forward(&x, &mut OpCounter::new()).unwrap();
        let mut x2 = x.clone();
        x2.data_mut()[7 * 3 * ci + 1] -= 3.0;
        let y1 = tsb.forward(&x2, &mut OpCounter::new()).unwrap();
        assert_eq!(&y0.data()[..7 * 3 * d], &y1.data()[..7 * 3 * d]);
        assert_ne!(
            &y0.data()[7 * 3 * d..8 * 3 * d],
            &y1.data()[7 * 3 * d..8 * 3 * d]
        );

        // kernel summing to 1 per (out, in) pair: constant in → constant out after warm-up
        let mut k = Tensor::zeros(&[1, 1, ks]);
        k.data_mut().fill(1.0 / ks as f32);
        let tsb = TimeSmooth::new(&k, &Tensor::zeros(&[1])).unwrap();
        let y = tsb
            .forward(&Tensor::filled(&[10, 2, 1], 3.0), &mut OpCounter::new())
            .unwrap();
        for t in 5..10 {
            assert!((y.data()[t * 2] - 3.0).abs() < 1e-6);
        }
        assert!(y.data()[0] < 1.0);
    }

    #[test]
    fn tsb_streaming_equals_block() {
        let mut r = SplitMix64::new(8);
        let tsb =
            TimeSmooth::new(&rand_tensor(&mut r, &[3, 4, 6]), &rand_tensor(&mut r, &[3])).unwrap();
        let x = rand_tensor(&mut r, &[9, 5, 4]);
        let whole = tsb.forward(&x, &mut OpCounter::new()).unwrap();
        let mut st = tsb.new_state(5);
        let mut y = vec![0f32; 5 * 3];
        for t in 0..9 {
            let xt = &x.data()[t * 20..(t + 1) * 20];
            tsb.run(
                xt,
                1,
                5,
                &mut st,
                &mut y,
                &mut Vec::new(),
                &mut Vec::new(),
                &mut OpCounter::new(),
            );
            assert_eq!(&whole.data()[t * 15..(t + 1) * 15], &y[..]);
        }
    }

    #[test]
    fn all_variants_shape_and_causality() {
        for v in Variant::ALL {
            let cfg = small_cfg(v);
            let w = random_init(&cfg, 11).unwrap();
            let s2m = Stft2Mel::new(&cfg, &w).unwrap();
            let mut r = SplitMix64::new(12);
            let spec = rand_spec(&mut r, 8, 257, 2);
            let y = s2m.compress(&spec, &mut OpCounter::new()).unwrap();
            assert_eq!(y.dims(), &[8, 80, 8], "{}", v.name());
            assert!(y.is_finite());
            let mut spec2 = spec.clone();
            spec2.set(5, 100, 1, Complex32::new(9.0, -9.0));
            let y2 = s2m.compress(&spec2, &mut OpCounter::new()).unwrap();
            let n = 5 * 80 * 8;
            assert_eq!(&y.data()[..n], &y2.data()[..n], "{}", v.name());
            assert_ne!(&y.data()[n..], &y2.data()[n..], "{}", v.name());
        }
    }

    #[test]
    fn frame_by_frame_equals_block() {
        for v in Variant::ALL {
            let cfg = small_cfg(v);
            let w = random_init(&cfg, 21).unwrap();
            let s2m = Stft2Mel::new(&cfg, &w).unwrap();
            let spec = rand_spec(&mut SplitMix64::new(22), 7, 257, 2);
            let whole = s2m.compress(&spec, &mut OpCounter::new()).unwrap();
            let mut st = s2m.new_state();
            let mut out = Vec::new();
            for t in 0..7 {
                s2m.run(spec.frame(t), 1, &mut st, &mut out, &mut OpCounter::new());
                assert_eq!(
                    &whole.data()[t * 640..(t + 1) * 640],
                    &out[..],
                    "{}",
                    v.name()
                );
            }
        }
    }

    #[test]
    fn zeroed_exchange_decouples_branches() {
        let cfg = small_cfg(Variant::SeparateFcbTsb);
        let mut w = random_init(&cfg, 31).unwrap();
        for i in cfg.s2m.comm_blocks() {
            for dir in ["p2m", "m2p"] {
                for p in ["W", "b"] {
                    let name = format!("s2m.comm.{i}.{dir}.{p}");
                    let dims = w.get(&name).unwrap().dims().to_vec();
                    w.set(&name, Tensor::zeros(&dims));
                }
            }
        }
        // zero gates annihilate both branches; the stage output is then the
        // learnable-fb bias passed through the smoother, independent of input
        let s2m = Stft2Mel::new(&cfg, &w).unwrap();
        let mut r = SplitMix64::new(32);
        let a = s2m
            .compress(&rand_spec(&mut r, 4, 257, 2), &mut OpCounter::new())
            .unwrap();
        let b = s2m
            .compress(&rand_spec(&mut r, 4, 257, 2), &mut OpCounter::new())
            .unwrap();
        assert_eq!(a.data(), b.data());
    }
}
