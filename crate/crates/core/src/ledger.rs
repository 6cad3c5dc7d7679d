//! Analytic operation and parameter accounting, and real-time-factor
//! measurement on the streaming path.
//!
//! Counts follow the conventions of [`OpCounter`]: one MAC per fused
//! multiply-accumulate, one add per other elementwise op, one nonlin per
//! activation or normalization reciprocal. The analytic rows reproduce
//! the runtime counters exactly.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::{CommDirection, Frontend, PipelineConfig, Variant};
use crate::engine::{Enhancer, StageTimes};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::OpCounter;
use crate::weights::{filterbank, stage_inputs, stage_is_freq, Manifest, Weights};

/// One layer of a [`FlopsReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub params: usize,
    /// Operations per frame.
    pub ops: OpCounter,
}

/// How a layer's per-frame MACs depend on the number of bands it iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct BandAffine {
    pub name: String,
    pub per_band: u64,
    pub fixed: u64,
}

impl BandAffine {
    pub fn at(&self, bands: usize) -> u64 {
        self.fixed + self.per_band * bands as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsReport {
    pub fingerprint: String,
    pub frames_per_second: f64,
    pub rows: Vec<LayerRow>,
}

impl FlopsReport {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    /// Sum of the per-frame rows.
    pub fn per_frame(&self) -> OpCounter {
        self.rows.iter().fold(OpCounter::new(), |a, r| a + r.ops)
    }

    /// `2·MACs` per second of audio.
    pub fn mac_flops_per_sec(&self) -> f64 {
        self.per_frame().mac_flops() as f64 * self.frames_per_second
    }

    /// `2·MACs + adds + nonlins` per second of audio.
    pub fn flops_per_sec(&self) -> f64 {
        self.per_frame().flops() as f64 * self.frames_per_second
    }

    /// Per-frame ops of rows whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> OpCounter {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .fold(OpCounter::new(), |a, r| a + r.ops)
    }

    /// Tab-separated records: a `#` line with the fingerprint, a header, one
    /// line per layer and a final `total` line.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# fingerprint\t{}\n", self.fingerprint);
        s.push_str("layer\tparams\tmacs_per_frame\tadds_per_frame\tnonlins_per_frame\n");
        let line = |s: &mut String, name: &str, p: usize, o: OpCounter| {
            let _ = writeln!(s, "{name}\t{p}\t{}\t{}\t{}", o.macs, o.adds, o.nonlins);
        };
        for r in &self.rows {
            line(&mut s, &r.name, r.params, r.ops);
        }
        line(&mut s, "total", self.total_params(), self.per_frame());
        s
    }

    /// Parses [`FlopsReport::to_tsv`] output.
    pub fn from_tsv(text: &str, frames_per_second: f64) -> Result<Self> {
        let mut lines = text.lines();
        let fingerprint = lines
            .next()
            .and_then(|l| l.strip_prefix("# fingerprint\t"))
            .ok_or_else(|| Error::Input("report lacks a fingerprint line".into()))?
            .to_string();
        lines.next();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let f: Vec<&str> = l.split('\t').collect();
            let num = |j: usize| -> Result<u64> {
                f.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Input(format!("report line {}: bad field {j}", i + 3)))
            };
            if f.len() != 5 {
                return Err(Error::Input(format!(
                    "report line {}: {} fields",
                    i + 3,
                    f.len()
                )));
            }
            if f[0] == "total" {
                break;
            }
            rows.push(LayerRow {
                name: f[0].to_string(),
                params: num(1)? as usize,
                ops: OpCounter {
                    macs: num(2)?,
                    adds: num(3)?,
                    nonlins: num(4)?,
                },
            });
        }
        Ok(Self {
            fingerprint,
            frames_per_second,
            rows,
        })
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!("config {}\n", self.fingerprint);
        let _ = writeln!(
            s,
            "{:<w$} {:>10} {:>14} {:>12} {:>10}",
            "layer", "params", "MACs/frame", "adds/frame", "nonlin"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$} {:>10} {:>14} {:>12} {:>10}",
                r.name, r.params, r.ops.macs, r.ops.adds, r.ops.nonlins
            );
        }
        let t = self.per_frame();
        let _ = writeln!(
            s,
            "{:<w$} {:>10} {:>14} {:>12} {:>10}",
            "total",
            self.total_params(),
            t.macs,
            t.adds,
            t.nonlins
        );
        let _ = writeln!(
            s,
            "params {:.3} M, {:.3} GFLOPs/s (MACs only), {:.3} GFLOPs/s (all ops)",
            self.total_params() as f64 / 1e6,
            self.mac_flops_per_sec() / 1e9,
            self.flops_per_sec() / 1e9
        );
        s
    }
}

/// Relative cost of configuration `b` against baseline `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub a_flops_per_sec: f64,
    pub b_flops_per_sec: f64,
    pub a_mac_flops_per_sec: f64,
    pub b_mac_flops_per_sec: f64,
}

impl Reduction {
    /// `b / a` on MAC FLOPs.
    pub fn ratio(&self) -> f64 {
        self.b_mac_flops_per_sec / self.a_mac_flops_per_sec
    }

    /// `100·(1 − b/a)` on MAC FLOPs.
    pub fn percent(&self) -> f64 {
        100.0 * (1.0 - self.ratio())
    }

    /// `100·(1 − b/a)` including elementwise and nonlinear ops.
    pub fn percent_all_ops(&self) -> f64 {
        100.0 * (1.0 - self.b_flops_per_sec / self.a_flops_per_sec)
    }
}

pub fn compare(a: &FlopsReport, b: &FlopsReport) -> Reduction {
    Reduction {
        a_flops_per_sec: a.flops_per_sec(),
        b_flops_per_sec: b.flops_per_sec(),
        a_mac_flops_per_sec: a.mac_flops_per_sec(),
        b_mac_flops_per_sec: b.mac_flops_per_sec(),
    }
}

fn ops(macs: usize, adds: usize, nonlins: usize) -> OpCounter {
    OpCounter {
        macs: macs as u64,
        adds: adds as u64,
        nonlins: nonlins as u64,
    }
}

/// Linear layer over `rows` rows with bias.
fn linear(rows: usize, inp: usize, out: usize) -> OpCounter {
    ops(rows * inp * out, rows * out, 0)
}

fn layer_norm(rows: usize, d: usize) -> OpCounter {
    ops(rows * 2 * d, rows * 2 * d, rows)
}

/// Per-frame analytic report for `cfg`.
pub fn count(cfg: &PipelineConfig) -> Result<FlopsReport> {
    let manifest = Manifest::for_config(cfg)?;
    let params = |p: &str| manifest.param_count_prefix(&format!("{p}."));
    let mut rows = Vec::new();
    let mut push = |name: String, ops: OpCounter| {
        let params = params(&name);
        rows.push(LayerRow { name, params, ops });
    };
    if cfg.frontend == Frontend::Mel {
        for (name, o) in stft2mel_rows(cfg)? {
            push(name, o);
        }
    }
    for (name, o) in backbone_rows(cfg, cfg.bands()) {
        push(name, o);
    }
    Ok(FlopsReport {
        fingerprint: cfg.fingerprint(),
        frames_per_second: cfg.stft.frames_per_second(),
        rows,
    })
}

fn stft2mel_rows(cfg: &PipelineConfig) -> Result<Vec<(String, OpCounter)>> {
    let s = &cfg.s2m;
    let (m, d, f, fm) = (cfg.channels, s.embed_dim, cfg.stft.bins(), cfg.n_mels);
    let nnz = filterbank(cfg)?.nnz();
    let mut rows = Vec::new();
    let branches: &[(&str, usize, bool)] = if s.variant.is_separate() {
        &[("mag", m, true), ("pha", 2 * m, false)]
    } else {
        &[("joint", 2 * m, true)]
    };
    let relu = |on: bool, n: usize| ops(0, 0, if on { n } else { 0 });
    let blocks = if s.variant.has_conv_blocks() {
        s.conv_blocks
    } else {
        0
    };
    for &(br, inp, r) in branches {
        rows.push((
            format!("s2m.{br}.lin"),
            linear(f, inp, d) + relu(r, f * d) + layer_norm(f, d),
        ));
        for i in 0..blocks {
            rows.push((
                format!("s2m.{br}.fcb.{i}"),
                linear(f, d * s.f_kernel, d) + relu(r, f * d) + layer_norm(f, d),
            ));
        }
    }
    for i in s.comm_blocks() {
        let gate = linear(f, d, d) + ops(0, f * d, f * d);
        rows.push((format!("s2m.comm.{i}.p2m"), gate));
        if s.comm == CommDirection::Both {
            rows.push((format!("s2m.comm.{i}.m2p"), gate));
        }
    }
    match s.variant {
        Variant::JointTrainMel => rows.push(("s2m.joint.trainmel".into(), ops(nnz * d, fm * d, 0))),
        _ => rows.push(("s2m.melfb".into(), ops(nnz * d, 0, 0))),
    }
    if s.variant.is_separate() {
        rows.push(("s2m.pha.fb".into(), linear(fm * d, f, 1)));
    }
    if s.variant.has_tsb() {
        let cin = if s.variant.is_separate() { 2 * d } else { d };
        rows.push(("s2m.tsb".into(), linear(fm, cin * s.t_kernel, d)));
    }
    Ok(rows)
}

/// Backbone rows for an arbitrary band count.
fn backbone_rows(cfg: &PipelineConfig, bands: usize) -> Vec<(String, OpCounter)> {
    let bb = &cfg.backbone;
    let inputs = stage_inputs(cfg);
    let mut rows = Vec::new();
    for k in 0..4 {
        if bb.skip[k] {
            continue;
        }
        let (h, o, inp) = (bb.hidden[k], bb.out_dims[k], inputs[k]);
        let g = 4 * h;
        let dirs = if stage_is_freq(k) { 2 } else { 1 };
        let cells = dirs * bands;
        // input projection, recurrent projection, gate update per cell
        let lstm = linear(cells, inp, g) + linear(cells, h, g) + ops(0, cells * g, cells * 5 * h);
        rows.push((format!("bb.m{}.lstm", k + 1), lstm));
        rows.push((format!("bb.m{}.lin", k + 1), linear(bands, dirs * h, o)));
    }
    rows.push((
        "bb.out".into(),
        linear(bands, bb.out_dims[3], 1) + ops(0, 0, bands),
    ));
    rows
}

/// Backbone MACs per frame as `fixed + per_band·bands`, one entry per layer.
pub fn band_affine(cfg: &PipelineConfig) -> Vec<BandAffine> {
    let one = backbone_rows(cfg, 1);
    let two = backbone_rows(cfg, 2);
    one.into_iter()
        .zip(two)
        .map(|((name, a), (_, b))| BandAffine {
            name,
            per_band: b.macs - a.macs,
            fixed: 2 * a.macs - b.macs,
        })
        .collect()
}

/// Wall-clock measurement of the streaming path.
#[derive(Clone, Debug, PartialEq)]
pub struct RtfResult {
    pub audio_secs: f64,
    pub wall_secs: f64,
    pub stages: StageTimes,
}

impl RtfResult {
    pub fn rtf(&self) -> f64 {
        self.wall_secs / self.audio_secs
    }

    /// Per-stage real-time factors: frontend, compression, backbone.
    pub fn stage_rtf(&self) -> [f64; 3] {
        [
            self.stages.frontend,
            self.stages.compress,
            self.stages.backbone,
        ]
        .map(|d| d.as_secs_f64() / self.audio_secs)
    }
}

/// Streams `seconds` of seeded noise through a fresh state, one hop per call.
pub fn bench_rtf(cfg: &PipelineConfig, w: &Weights, seconds: f64, seed: u64) -> Result<RtfResult> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::Input(format!(
            "benchmark duration must be positive, got {seconds}"
        )));
    }
    let e = Enhancer::new(cfg, w)?;
    let (m, hop) = (cfg.channels, cfg.stft.hop);
    let blocks = ((seconds * cfg.stft.sample_rate as f64) / hop as f64)
        .ceil()
        .max(1.0) as usize;
    let mut r = SplitMix64::new(seed);
    let block_pool: Vec<Vec<f32>> = (0..64).map(|_| r.uniform_vec(hop * m, 0.3)).collect();
    let mut st = e.open_stream();
    let t0 = Instant::now();
    for i in 0..blocks {
        e.push_block(&mut st, &block_pool[(i * 7 + i / 64) % 64])?;
    }
    let wall_secs = t0.elapsed().as_secs_f64();
    Ok(RtfResult {
        audio_secs: (blocks * hop) as f64 / cfg.stft.sample_rate as f64,
        wall_secs,
        stages: st.times,
    })
}
