//! Pipeline configuration and its plain-text `key = value` form.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dsp::{StftConfig, NORM_DECAY};
use crate::error::{config_err, Error, Result};

/// STFT-to-Mel compression variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Magnitude and phase branches, frequency conv blocks, time smoothing.
    SeparateFcbTsb,
    /// Real/imag stacked in one branch, conv blocks, time smoothing.
    JointFcbTsb,
    /// As [`Variant::JointFcbTsb`] without time smoothing.
    JointFcb,
    /// Linear block followed directly by the triangular filterbank.
    JointHandcrafted,
    /// Linear block followed by one small FC per Mel band over its bins.
    JointTrainMel,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SeparateFcbTsb,
        Variant::JointFcbTsb,
        Variant::JointFcb,
        Variant::JointHandcrafted,
        Variant::JointTrainMel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SeparateFcbTsb => "separate-fcb-tsb",
            Variant::JointFcbTsb => "joint-fcb-tsb",
            Variant::JointFcb => "joint-fcb",
            Variant::JointHandcrafted => "joint-handcrafted",
            Variant::JointTrainMel => "joint-trainmel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn is_separate(self) -> bool {
        self == Variant::SeparateFcbTsb
    }

    pub fn has_conv_blocks(self) -> bool {
        matches!(
            self,
            Variant::SeparateFcbTsb | Variant::JointFcbTsb | Variant::JointFcb
        )
    }

    pub fn has_tsb(self) -> bool {
        matches!(self, Variant::SeparateFcbTsb | Variant::JointFcbTsb)
    }
}

/// Which way the branch gating runs in the separate variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommDirection {
    /// Magnitude gated by phase and phase gated by magnitude.
    Both,
    /// Only magnitude gated by phase.
    MagFromPhase,
}

impl CommDirection {
    fn name(self) -> &'static str {
        match self {
            CommDirection::Both => "both",
            CommDirection::MagFromPhase => "mag-from-phase",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stft2MelConfig {
    pub embed_dim: usize,
    pub conv_blocks: usize,
    pub f_kernel: usize,
    pub t_kernel: usize,
    pub t_past_pad: usize,
    pub variant: Variant,
    pub comm: CommDirection,
    /// Exchange after every conv block (`true`) or only after the last.
    pub comm_every_block: bool,
}

impl Default for Stft2MelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            conv_blocks: 3,
            f_kernel: 3,
            t_kernel: 6,
            t_past_pad: 5,
            variant: Variant::SeparateFcbTsb,
            comm: CommDirection::Both,
            comm_every_block: true,
        }
    }
}

impl Stft2MelConfig {
    /// Conv-block indices followed by a branch exchange.
    pub fn comm_blocks(&self) -> Vec<usize> {
        if !self.variant.is_separate() || self.conv_blocks == 0 {
            Vec::new()
        } else if self.comm_every_block {
            (0..self.conv_blocks).collect()
        } else {
            vec![self.conv_blocks - 1]
        }
    }
}

/// Four cascaded backbone stages: full-band spatial (along frequency),
/// narrow-band spatial (along time), sub-band spectral (along time),
/// full-band spectral (along frequency).
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// LSTM hidden size per stage (per direction for the frequency stages).
    pub hidden: [usize; 4],
    /// Output width of each stage's linear layer.
    pub out_dims: [usize; 4],
    /// Neighbouring bands below/above fed to the sub-band stage.
    pub n_below: usize,
    pub n_above: usize,
    /// Past frames of supplementary power fed to the last stage.
    pub context: usize,
    /// Stages replaced by identity.
    pub skip: [bool; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: [128, 256, 384, 128],
            out_dims: [128, 128, 128, 128],
            n_below: 3,
            n_above: 3,
            context: 1,
            skip: [false; 4],
        }
    }
}

/// What the backbone runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frontend {
    /// STFT-to-Mel compression, backbone on Mel bands.
    Mel,
    /// Backbone directly on linear STFT bins (reference configuration).
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub channels: usize,
    /// 1-based reference microphone.
    pub ref_channel: usize,
    pub frontend: Frontend,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub norm_decay: f32,
    pub s2m: Stft2MelConfig,
    pub backbone: BackboneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::mel()
    }
}

const KEYS: &[&str] = &[
    "sample_rate",
    "fft_size",
    "hop",
    "channels",
    "ref_channel",
    "frontend",
    "n_mels",
    "fmin",
    "fmax",
    "norm_decay",
    "embed_dim",
    "conv_blocks",
    "f_kernel",
    "t_kernel",
    "t_past_pad",
    "variant",
    "comm",
    "comm_every_block",
    "hidden",
    "out_dims",
    "n_below",
    "n_above",
    "context",
    "skip",
];

impl PipelineConfig {
    /// Six microphones, reference 5, 80 Mel bands, separate FCB+TSB.
    pub fn mel() -> Self {
        Self {
            stft: StftConfig::default(),
            channels: 6,
            ref_channel: 5,
            frontend: Frontend::Mel,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            norm_decay: NORM_DECAY,
            s2m: Stft2MelConfig::default(),
            backbone: BackboneConfig::default(),
        }
    }

    /// Same backbone on the 257 linear STFT bins.
    pub fn linear() -> Self {
        Self {
            frontend: Frontend::Linear,
            ..Self::mel()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.s2m.variant = v;
        self
    }

    /// Number of frequency bands the backbone iterates over.
    pub fn bands(&self) -> usize {
        match self.frontend {
            Frontend::Mel => self.n_mels,
            Frontend::Linear => self.stft.bins(),
        }
    }

    /// Per-band feature width entering the backbone.
    pub fn backbone_input_dim(&self) -> usize {
        match self.frontend {
            Frontend::Mel => self.s2m.embed_dim,
            Frontend::Linear => 2 * self.channels,
        }
    }

    pub fn ref_index(&self) -> usize {
        self.ref_channel - 1
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.channels == 0 {
            return config_err("channels must be >= 1");
        }
        if self.ref_channel == 0 || self.ref_channel > self.channels {
            return config_err(format!(
                "ref_channel {} out of range 1..={}",
                self.ref_channel, self.channels
            ));
        }
        if !(0.0..1.0).contains(&self.norm_decay) {
            return config_err("norm_decay must be in [0, 1)");
        }
        let s = &self.s2m;
        if self.frontend == Frontend::Mel {
            if s.embed_dim == 0 {
                return config_err("embed_dim must be >= 1");
            }
            if s.f_kernel == 0 || s.f_kernel % 2 == 0 {
                return config_err("f_kernel must be odd");
            }
            if s.t_kernel == 0 || s.t_past_pad != s.t_kernel - 1 {
                return config_err(format!(
                    "t_past_pad ({}) must equal t_kernel - 1 ({})",
                    s.t_past_pad,
                    s.t_kernel.saturating_sub(1)
                ));
            }
            if s.variant.has_conv_blocks() && s.conv_blocks == 0 {
                return config_err(format!(
                    "variant {} needs conv_blocks >= 1",
                    s.variant.name()
                ));
            }
        }
        let b = &self.backbone;
        if b.hidden.iter().chain(&b.out_dims).any(|&d| d == 0) {
            return config_err("backbone hidden/out_dims must be >= 1");
        }
        let mut width = self.backbone_input_dim();
        for k in 0..4 {
            if b.skip[k] && width != b.out_dims[k] {
                return config_err(format!(
                    "stage {} can only be skipped when its input width {width} equals out_dims {}",
                    k + 1,
                    b.out_dims[k]
                ));
            }
            width = b.out_dims[k];
        }
        Ok(())
    }

    /// Canonical text form; also the input to [`PipelineConfig::fingerprint`].
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let skip: Vec<usize> = (0..4)
            .filter(|&k| self.backbone.skip[k])
            .map(|k| k + 1)
            .collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("sample_rate", self.stft.sample_rate.to_string());
        kv("fft_size", self.stft.fft_size.to_string());
        kv("hop", self.stft.hop.to_string());
        kv("channels", self.channels.to_string());
        kv("ref_channel", self.ref_channel.to_string());
        kv(
            "frontend",
            match self.frontend {
                Frontend::Mel => "mel",
                Frontend::Linear => "linear",
            }
            .into(),
        );
        kv("n_mels", self.n_mels.to_string());
        kv("fmin", format!("{}", self.fmin));
        kv("fmax", format!("{}", self.fmax));
        kv("norm_decay", format!("{}", self.norm_decay));
        kv("embed_dim", self.s2m.embed_dim.to_string());
        kv("conv_blocks", self.s2m.conv_blocks.to_string());
        kv("f_kernel", self.s2m.f_kernel.to_string());
        kv("t_kernel", self.s2m.t_kernel.to_string());
        kv("t_past_pad", self.s2m.t_past_pad.to_string());
        kv("variant", self.s2m.variant.name().into());
        kv("comm", self.s2m.comm.name().into());
        kv("comm_every_block", self.s2m.comm_every_block.to_string());
        kv("hidden", list(&self.backbone.hidden));
        kv("out_dims", list(&self.backbone.out_dims));
        kv("n_below", self.backbone.n_below.to_string());
        kv("n_above", self.backbone.n_above.to_string());
        kv("context", self.backbone.context.to_string());
        kv(
            "skip",
            if skip.is_empty() {
                "none".into()
            } else {
                list(&skip)
            },
        );
        s
    }

    /// First 16 hex digits of the SHA-256 of [`PipelineConfig::to_text`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses `key = value` lines over the defaults of `base`.
    pub fn parse_onto(mut base: PipelineConfig, text: &str) -> Result<Self> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            base.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(Self::mel(), text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. Does not re-validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn four(key: &str, v: &str) -> Result<[usize; 4]> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| num(key, p.trim()))
                .collect::<Result<_>>()?;
            parts
                .try_into()
                .map_err(|_| Error::Config(format!("`{key}` needs 4 comma-separated values")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => config_err(format!("`{key}`: expected true/false, got `{v}`")),
            }
        }
        match key {
            "sample_rate" => self.stft.sample_rate = num(key, value)?,
            "fft_size" => self.stft.fft_size = num(key, value)?,
            "hop" => self.stft.hop = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "ref_channel" => self.ref_channel = num(key, value)?,
            "frontend" => {
                self.frontend = match value {
                    "mel" => Frontend::Mel,
                    "linear" => Frontend::Linear,
                    _ => {
                        return config_err(format!(
                            "`frontend`: expected mel|linear, got `{value}`"
                        ))
                    }
                }
            }
            "n_mels" => self.n_mels = num(key, value)?,
            "fmin" => self.fmin = num(key, value)?,
            "fmax" => self.fmax = num(key, value)?,
            "norm_decay" => self.norm_decay = num(key, value)?,
            "embed_dim" => self.s2m.embed_dim = num(key, value)?,
            "conv_blocks" => self.s2m.conv_blocks = num(key, value)?,
            "f_kernel" => self.s2m.f_kernel = num(key, value)?,
            "t_kernel" => self.s2m.t_kernel = num(key, value)?,
            "t_past_pad" => self.s2m.t_past_pad = num(key, value)?,
            "variant" => self.s2m.variant = Variant::parse(value)?,
            "comm" => {
                self.s2m.comm = match value {
                    "both" => CommDirection::Both,
                    "mag-from-phase" => CommDirection::MagFromPhase,
                    _ => {
                        return config_err(format!(
                            "`comm`: expected both|mag-from-phase, got `{value}`"
                        ))
                    }
                }
            }
            "comm_every_block" => self.s2m.comm_every_block = flag(key, value)?,
            "hidden" => self.backbone.hidden = four(key, value)?,
            "out_dims" => self.backbone.out_dims = four(key, value)?,
            "n_below" => self.backbone.n_below = num(key, value)?,
            "n_above" => self.backbone.n_above = num(key, value)?,
            "context" => self.backbone.context = num(key, value)?,
            "skip" => {
                let mut skip = [false; 4];
                if value != "none" {
                    for p in value.split(',') {
                        let k: usize = num(key, p.trim())?;
                        if !(1..=4).contains(&k) {
                            return config_err(format!("`skip`: stage {k} not in 1..=4"));
                        }
                        skip[k - 1] = true;
                    }
                }
                self.backbone.skip = skip;
            }
            _ => return config_err(format!("unknown key `{key}` (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [PipelineConfig::mel(), PipelineConfig::linear()] {
            let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.fingerprint(), cfg.fingerprint());
        }
        assert_ne!(
            PipelineConfig::mel().fingerprint(),
            PipelineConfig::linear().fingerprint()
        );
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let cfg = PipelineConfig::parse(
            "# header\n\nvariant = joint-fcb  # ablation\nhidden = 8, 16, 16, 8\nskip = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.s2m.variant, Variant::JointFcb);
        assert_eq!(cfg.backbone.hidden, [8, 16, 16, 8]);
        assert_eq!(cfg.backbone.skip, [false, true, false, false]);
    }

    #[test]
    fn errors_name_the_key() {
        let e = PipelineConfig::parse("frobnicate = 3")
            .unwrap_err()
            .to_string();
        assert!(e.contains("frobnicate") && e.contains("line 1"), "{e}");
        let e = PipelineConfig::parse("hop = lots").unwrap_err().to_string();
        assert!(e.contains("hop"), "{e}");
        let e = PipelineConfig::parse("variant = fancy")
            .unwrap_err()
            .to_string();
        assert!(e.contains("fancy"), "{e}");
        assert!(PipelineConfig::parse("no equals sign").is_err());
        assert!(PipelineConfig::parse("ref_channel = 7").is_err());
        assert!(PipelineConfig::parse("t_past_pad = 4").is_err());
        assert!(PipelineConfig::parse("skip = 1").is_err());
    }

    #[test]
    fn dims() {
        let m = PipelineConfig::mel();
        assert_eq!(
            (m.bands(), m.backbone_input_dim(), m.ref_index()),
            (80, 64, 4)
        );
        let l = PipelineConfig::linear();
        assert_eq!((l.bands(), l.backbone_input_dim()), (257, 12));
    }
}
