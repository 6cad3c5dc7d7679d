//! Named-tensor archive ("MMNT"), the expected-weights manifest of a
//! pipeline configuration, and seeded random initialization.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"MMNT"
//! version u32 (= 1)
//! count   u32
//! count × {
//!     name_len u32, name [u8; name_len] (UTF-8)
//!     rank u32, dims [u32; rank]
//!     dtype u32 (0 = float32)
//!     payload [f32; prod(dims)] row-major
//! }
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::config::{CommDirection, Frontend, PipelineConfig, Variant};
use crate::dsp::MelFilterbank;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMNT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
/// Names under this prefix carry metadata and are ignored by [`Manifest::diff`].
pub const META_PREFIX: &str = "meta.";
const FINGERPRINT_PREFIX: &str = "meta.fingerprint.";

/// An ordered set of uniquely named tensors.
#[derive(Clone, Default, PartialEq)]
pub struct Weights {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(n, t)| (n, t.dims())))
            .finish()
    }
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Input(format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    /// Replaces an existing tensor or appends a new one.
    pub fn set(&mut self, name: &str, t: Tensor) {
        match self.index.get(name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), t));
            }
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.index.remove(name)?;
        let (_, t) = self.entries.remove(i);
        for v in self.index.values_mut() {
            if *v > i {
                *v -= 1;
            }
        }
        Some(t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    /// Like [`Weights::get`] but errors when absent.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Manifest(format!("missing {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Tags the archive with a config fingerprint as a one-element `meta.` tensor,
    /// replacing any previous tag.
    pub fn set_fingerprint(&mut self, fp: &str) {
        let old: Vec<String> = self
            .names()
            .filter(|n| n.starts_with(FINGERPRINT_PREFIX))
            .map(String::from)
            .collect();
        for n in old {
            self.remove(&n);
        }
        self.set(&format!("{FINGERPRINT_PREFIX}{fp}"), Tensor::zeros(&[1]));
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.names()
            .find_map(|n| n.strip_prefix(FINGERPRINT_PREFIX))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .iter()
            .map(|(n, t)| 16 + n.len() + 4 * t.rank() + 4 * t.numel())
            .sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&DTYPE_F32.to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.err_at(0, format!("bad magic {magic:02x?}, expected \"MMNT\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut w = Weights::new();
        for i in 0..count {
            let start = r.pos;
            let ctx = format!("tensor #{i}");
            let len = r.u32(&format!("{ctx} name length"))? as usize;
            let raw = r.take(len, &format!("{ctx} name"))?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| r.err_at(start + 4, format!("{ctx} name is not UTF-8")))?
                .to_string();
            let ctx = format!("tensor `{name}`");
            let rank = r.u32(&format!("{ctx} rank"))? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&format!("{ctx} dims"))? as usize);
            }
            let dtype_at = r.pos;
            let dtype = r.u32(&format!("{ctx} dtype"))?;
            if dtype != DTYPE_F32 {
                return Err(r.err_at(dtype_at, format!("{ctx}: unsupported dtype code {dtype}")));
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| r.err_at(dtype_at, format!("{ctx}: dims {dims:?} overflow")))?;
            let payload_at = r.pos;
            let raw = r.take(4 * numel, &format!("{ctx} payload ({numel} floats)"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t =
                Tensor::new(dims, data).map_err(|e| r.err_at(payload_at, format!("{ctx}: {e}")))?;
            if w.get(&name).is_some() {
                return Err(r.err_at(start, format!("duplicate tensor name `{name}`")));
            }
            w.insert(name, t)?;
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, msg: String) -> Error {
        Error::Parse {
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(self.err_at(
                self.pos,
                format!("truncated {what}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// How a manifest entry is filled by [`random_init`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f32),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Expected tensors of a configuration, in archive order.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

struct Builder(Vec<ManifestEntry>);

impl Builder {
    fn push(&mut self, name: String, dims: Vec<usize>, init: Init) {
        self.0.push(ManifestEntry { name, dims, init });
    }

    fn fan(fan_in: usize) -> Init {
        Init::Uniform(1.0 / (fan_in as f32).sqrt())
    }

    fn linear(&mut self, p: &str, out: usize, inp: usize) {
        self.push(format!("{p}.W"), vec![out, inp], Self::fan(inp));
        self.push(format!("{p}.b"), vec![out], Self::fan(inp));
    }

    fn ln(&mut self, p: &str, d: usize) {
        self.push(format!("{p}.ln.gamma"), vec![d], Init::Ones);
        self.push(format!("{p}.ln.beta"), vec![d], Init::Zeros);
    }

    fn conv(&mut self, p: &str, out: usize, inp: usize, k: usize) {
        self.push(format!("{p}.K"), vec![out, inp, k], Self::fan(inp * k));
        self.push(format!("{p}.b"), vec![out], Self::fan(inp * k));
    }

    fn lstm(&mut self, p: &str, dirs: usize, inp: usize, h: usize) {
        let init = Self::fan(h);
        self.push(format!("{p}.Wx"), vec![dirs, 4 * h, inp], init);
        self.push(format!("{p}.Wh"), vec![dirs, 4 * h, h], init);
        self.push(format!("{p}.b"), vec![dirs, 4 * h], init);
    }
}

/// Mel filterbank of a configuration.
pub fn filterbank(cfg: &PipelineConfig) -> Result<MelFilterbank> {
    MelFilterbank::new(&cfg.stft, cfg.n_mels, cfg.fmin, cfg.fmax)
}

impl Manifest {
    pub fn for_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder(Vec::new());
        if cfg.frontend == Frontend::Mel {
            stft2mel_entries(cfg, &mut b)?;
        }
        backbone_entries(cfg, &mut b);
        Ok(Manifest { entries: b.0 })
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(ManifestEntry::numel).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn param_count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(ManifestEntry::numel)
            .sum()
    }

    /// One line per entry: `name<TAB>d0xd1x...<TAB>numel`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let dims: Vec<String> = e.dims.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{}\t{}\t{}\n", e.name, dims.join("x"), e.numel()));
        }
        s
    }

    /// Differences between `w` and this manifest, one line each; empty if they match.
    pub fn diff(&self, w: &Weights) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.entries {
            match w.get(&e.name) {
                None => out.push(format!("missing {} {:?}", e.name, e.dims)),
                Some(t) if t.dims() != e.dims.as_slice() => out.push(format!(
                    "shape {}: expected {:?}, found {:?}",
                    e.name,
                    e.dims,
                    t.dims()
                )),
                _ => {}
            }
        }
        for (name, t) in w.iter() {
            if !name.starts_with(META_PREFIX) && !self.entries.iter().any(|e| e.name == name) {
                out.push(format!("extra {name} {:?}", t.dims()));
            }
        }
        out
    }

    pub fn validate(&self, w: &Weights) -> Result<()> {
        let d = self.diff(w);
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(d.join("\n")))
        }
    }
}

fn stft2mel_entries(cfg: &PipelineConfig, b: &mut Builder) -> Result<()> {
    let s = &cfg.s2m;
    let (m, d, f, fm) = (cfg.channels, s.embed_dim, cfg.stft.bins(), cfg.n_mels);
    let branches: &[(&str, usize)] = if s.variant.is_separate() {
        &[("mag", m), ("pha", 2 * m)]
    } else {
        &[("joint", 2 * m)]
    };
    for &(br, inp) in branches {
        b.linear(&format!("s2m.{br}.lin"), d, inp);
        b.ln(&format!("s2m.{br}.lin"), d);
        if s.variant.has_conv_blocks() {
            for i in 0..s.conv_blocks {
                let p = format!("s2m.{br}.fcb.{i}");
                b.conv(&p, d, d, s.f_kernel);
                b.ln(&p, d);
            }
        }
    }
    for i in s.comm_blocks() {
        b.linear(&format!("s2m.comm.{i}.p2m"), d, d);
        if s.comm == CommDirection::Both {
            b.linear(&format!("s2m.comm.{i}.m2p"), d, d);
        }
    }
    match s.variant {
        Variant::SeparateFcbTsb => {
            b.linear("s2m.pha.fb", fm, f);
            b.conv("s2m.tsb", d, 2 * d, s.t_kernel);
        }
        Variant::JointFcbTsb => b.conv("s2m.tsb", d, d, s.t_kernel),
        Variant::JointTrainMel => {
            let fb = filterbank(cfg)?;
            let avg = (fb.nnz() / fm).max(1);
            b.push(
                "s2m.joint.trainmel.W".into(),
                vec![fb.nnz()],
                Builder::fan(avg),
            );
            b.push("s2m.joint.trainmel.b".into(), vec![fm], Builder::fan(avg));
        }
        Variant::JointFcb | Variant::JointHandcrafted => {}
    }
    Ok(())
}

/// Input width of each backbone stage's LSTM.
pub(crate) fn stage_inputs(cfg: &PipelineConfig) -> [usize; 4] {
    let bb = &cfg.backbone;
    let din = cfg.backbone_input_dim();
    [
        din,
        bb.out_dims[0],
        bb.out_dims[1] + bb.n_below + bb.n_above + 1,
        bb.out_dims[2] + bb.context + 1,
    ]
}

/// Whether stage `k` (0-based) runs along frequency (bidirectional).
pub(crate) fn stage_is_freq(k: usize) -> bool {
    k == 0 || k == 3
}

fn backbone_entries(cfg: &PipelineConfig, b: &mut Builder) {
    let bb = &cfg.backbone;
    let inputs = stage_inputs(cfg);
    for k in 0..4 {
        if bb.skip[k] {
            continue;
        }
        let dirs = if stage_is_freq(k) { 2 } else { 1 };
        let h = bb.hidden[k];
        b.lstm(&format!("bb.m{}.lstm", k + 1), dirs, inputs[k], h);
        b.linear(&format!("bb.m{}.lin", k + 1), bb.out_dims[k], dirs * h);
    }
    b.linear("bb.out", 1, bb.out_dims[3]);
}

/// Deterministic weights for `cfg`: one SplitMix64 stream consumed in
/// manifest order; uniform entries draw one value per element.
pub fn random_init(cfg: &PipelineConfig, seed: u64) -> Result<Weights> {
    let manifest = Manifest::for_config(cfg)?;
    let mut rng = SplitMix64::new(seed);
    let mut w = Weights::new();
    for e in &manifest.entries {
        let data = match e.init {
            Init::Uniform(bound) => rng.uniform_vec(e.numel(), bound),
            Init::Ones => vec![1.0; e.numel()],
            Init::Zeros => vec![0.0; e.numel()],
        };
        w.insert(e.name.clone(), Tensor::new(e.dims.clone(), data)?)?;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Weights {
        let mut w = Weights::new();
        w.insert("a", Tensor::new(vec![2], vec![1.0, -2.5]).unwrap())
            .unwrap();
        w.insert(
            "bb",
            Tensor::new(vec![1, 2, 1], vec![f32::MIN_POSITIVE, 3.0e38]).unwrap(),
        )
        .unwrap();
        w
    }

    #[test]
    fn round_trip_and_layout() {
        let w = two();
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..4], b"MMNT");
        assert_eq!(
            bytes.len(),
            12 + (4 + 1 + 4 + 4 + 4 + 8) + (4 + 2 + 4 + 12 + 4 + 8)
        );
        let back = Weights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn empty_archive() {
        let w = Weights::from_bytes(&Weights::new().to_bytes()).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn truncation_names_tensor_and_offset() {
        let bytes = two().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 9] {
            let e = Weights::from_bytes(&bytes[..cut]).unwrap_err();
            match &e {
                Error::Parse { offset, msg } => {
                    assert!(msg.contains("`bb`"), "{msg}");
                    assert!((*offset as usize) <= cut);
                }
                other => panic!("{other}"),
            }
        }
        let e = Weights::from_bytes(b"MMNX\x01\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 0, .. }));
        let e = Weights::from_bytes(b"MMNT\x02\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 4, .. }));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut w = two();
        assert!(w.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn init_is_seeded_and_matches_manifest() {
        for cfg in [PipelineConfig::mel(), PipelineConfig::linear()] {
            let a = random_init(&cfg, 7).unwrap();
            let b = random_init(&cfg, 7).unwrap();
            let c = random_init(&cfg, 8).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
            assert_ne!(a.to_bytes(), c.to_bytes());
            let m = Manifest::for_config(&cfg).unwrap();
            assert!(m.diff(&a).is_empty());
            assert_eq!(m.param_count(), a.param_count());
        }
    }

    #[test]
    fn fingerprint_tag_is_ignored_by_manifest() {
        let cfg = PipelineConfig::mel();
        let mut w = random_init(&cfg, 2).unwrap();
        w.set_fingerprint("abc");
        w.set_fingerprint(&cfg.fingerprint());
        assert_eq!(w.fingerprint(), Some(cfg.fingerprint().as_str()));
        assert_eq!(w.names().filter(|n| n.starts_with(META_PREFIX)).count(), 1);
        Manifest::for_config(&cfg).unwrap().validate(&w).unwrap();
        let back = Weights::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.get("bb.out.b"), w.get("bb.out.b"));
    }

    #[test]
    fn diff_reports_each_problem() {
        let cfg = PipelineConfig::mel();
        let m = Manifest::for_config(&cfg).unwrap();
        let mut w = random_init(&cfg, 1).unwrap();
        let t = w.get("bb.out.b").unwrap().clone();
        let mut renamed = Weights::new();
        for (n, t) in w.iter() {
            let n = if n == "bb.out.b" { "bb.out.bias" } else { n };
            renamed.insert(n, t.clone()).unwrap();
        }
        let d = m.diff(&renamed);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].starts_with("missing bb.out.b"));
        assert!(d[1].starts_with("extra bb.out.bias"));

        w.set("bb.out.W", Tensor::zeros(&[2, 128]));
        let d = m.diff(&w);
        assert_eq!(
            d,
            vec!["shape bb.out.W: expected [1, 128], found [2, 128]".to_string()]
        );
        drop(t);
    }

    #[test]
    fn variant_manifests_differ_as_expected() {
        let base = PipelineConfig::mel();
        let names = |v: Variant| -> Vec<String> {
            Manifest::for_config(&base.clone().with_variant(v))
                .unwrap()
                .entries
                .into_iter()
                .map(|e| e.name)
                .collect()
        };
        let sep = names(Variant::SeparateFcbTsb);
        assert!(sep.iter().any(|n| n == "s2m.comm.2.m2p.W"));
        assert!(sep.iter().any(|n| n == "s2m.pha.fb.W"));
        let jh = names(Variant::JointHandcrafted);
        assert!(!jh.iter().any(|n| n.contains("fcb") || n.contains("tsb")));
        let jt = names(Variant::JointTrainMel);
        assert!(jt.iter().any(|n| n == "s2m.joint.trainmel.W"));
        assert!(names(Variant::JointFcbTsb).iter().any(|n| n == "s2m.tsb.K"));
        assert!(!names(Variant::JointFcb).iter().any(|n| n == "s2m.tsb.K"));
    }
}
