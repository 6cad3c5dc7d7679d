//! Command-line front end. Exit status: 0 success, 2 usage or configuration
//! error, 3 I/O error, 4 validation error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{read_wav, write_wav, Audio};
use crate::dsp::{mel_power, mel_prm, TfGrid};
use crate::engine::Enhancer;
use crate::error::{Error, Result};
use crate::ledger::{bench_rtf, compare, count};
use crate::tensor::Tensor;
use crate::weights::{filterbank, random_init, Manifest, Weights};
use crate::PipelineConfig;

#[derive(Parser, Debug)]
#[command(
    name = "mel-enhance",
    version,
    about = "Causal multichannel speech enhancement in the Mel domain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` config file; `mel` and `linear` name the built-in defaults.
    #[arg(long)]
    pub config: Option<String>,
    /// Override one config key, e.g. `--set n_mels=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Enhance a multichannel WAV into LogMel and mask archives.
    ///
    /// The input is mirror-padded by fft_size/2 samples at the start, so the
    /// first frame appears once that many samples have arrived (16 ms at the
    /// defaults); each further hop of 128 samples (8 ms) yields one frame.
    /// Algorithmic latency is one 512-sample window (32 ms) plus one hop.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out_logmel: PathBuf,
        /// Also write the mask to its own archive.
        #[arg(long)]
        out_mask: Option<PathBuf>,
        /// Masked reference channel, resynthesized by pseudo-inverse lifting.
        #[arg(long)]
        out_wav: Option<PathBuf>,
        /// 1-based reference microphone.
        #[arg(long)]
        ref_ch: Option<usize>,
        /// Frame-by-frame processing (the default).
        #[arg(long, conflicts_with = "offline")]
        streaming: bool,
        /// Whole-utterance batch processing.
        #[arg(long)]
        offline: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rectified Mel power-ratio mask of a clean/noisy pair.
    Target {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 1-based channel to compare; defaults to the config's reference.
        #[arg(long)]
        ref_ch: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-layer parameters and operations; with a second config, the reduction.
    Flops {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        compare_config: Option<String>,
        /// Tab-separated per-layer records.
        #[arg(long)]
        out_tsv: Option<PathBuf>,
    },
    /// Real-time factor of the streaming path on synthetic input.
    Bench {
        #[arg(long, default_value_t = 30.0)]
        seconds: f64,
        /// Weights archive; seeded random weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Seeded random weights matching the config's manifest.
    InitWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Mel filterbank as CSV, one row per band.
    DumpFilterbank {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Expected tensor names and shapes.
    DumpManifest {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Builds the effective config: file or built-in, then `--set` overrides.
pub fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = named_config(args.config.as_deref().unwrap_or("mel"))?;
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn named_config(name: &str) -> Result<PipelineConfig> {
    match name {
        "mel" => Ok(PipelineConfig::mel()),
        "linear" => Ok(PipelineConfig::linear()),
        path => PipelineConfig::load(path),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Enhance {
            input,
            weights,
            out_logmel,
            out_mask,
            out_wav,
            ref_ch,
            streaming: _,
            offline,
            cfg,
        } => {
            let mut cfg = load_config(&cfg)?;
            let audio = read_wav(&input)?;
            if let Some(r) = ref_ch {
                cfg.ref_channel = r;
            }
            if cfg.ref_channel == 0 || cfg.ref_channel > audio.num_channels() {
                return Err(Error::Input(format!(
                    "reference channel {} does not exist in {}-channel input",
                    cfg.ref_channel,
                    audio.num_channels()
                )));
            }
            cfg.channels = audio.num_channels();
            cfg.validate()?;
            let w = Weights::load(&weights)?;
            let e = Enhancer::new(&cfg, &w)?;
            let (logmel, mask, wave) = if offline {
                let out = e.offline(&audio, out_wav.is_some())?;
                (out.logmel, out.mask, out.wave)
            } else {
                let (logmel, mask, _) = e.stream(&audio)?;
                let wave = match &out_wav {
                    Some(_) => Some(e.reconstruct(&e.stft().analyze(&audio)?, &mask)?),
                    None => None,
                };
                (logmel, mask, wave)
            };
            let fp = cfg.fingerprint();
            let mut arc = grid_archive(&[("logmel", &logmel), ("mask", &mask)], &fp)?;
            arc.save(&out_logmel)?;
            if let Some(p) = out_mask {
                arc = grid_archive(&[("mask", &mask)], &fp)?;
                arc.save(p)?;
            }
            if let (Some(p), Some(mut wave)) = (out_wav, wave) {
                // samples past the last full frame are not resynthesized
                wave.resize(audio.len(), 0.0);
                write_wav(p, &Audio::new(cfg.stft.sample_rate, vec![wave])?)?;
            }
            println!(
                "config {fp}: {} frames x {} bands",
                logmel.frames(),
                logmel.bands()
            );
            Ok(())
        }
        Command::Target {
            clean,
            noisy,
            out,
            ref_ch,
            cfg,
        } => {
            let cfg = load_config(&cfg)?;
            let (c, n) = (read_wav(&clean)?, read_wav(&noisy)?);
            let r = ref_ch.unwrap_or(cfg.ref_channel);
            let mask = target_mask(&cfg, &c, &n, r)?;
            grid_archive(&[("mask", &mask)], &cfg.fingerprint())?.save(&out)?;
            println!(
                "config {}: {} frames x {} bands",
                cfg.fingerprint(),
                mask.frames(),
                mask.bands()
            );
            Ok(())
        }
        Command::Flops {
            cfg,
            compare_config,
            out_tsv,
        } => {
            let a = count(&load_config(&cfg)?)?;
            print!("{}", a.to_table());
            if let Some(p) = &out_tsv {
                std::fs::write(p, a.to_tsv())?;
            }
            if let Some(b) = compare_config {
                let args = ConfigArgs {
                    config: Some(b),
                    set: cfg.set.clone(),
                };
                let b = count(&load_config(&args)?)?;
                println!();
                print!("{}", b.to_table());
                // reported from the costlier configuration to the cheaper one
                let (hi, lo) = if b.mac_flops_per_sec() > a.mac_flops_per_sec() {
                    (&b, &a)
                } else {
                    (&a, &b)
                };
                let r = compare(hi, lo);
                println!();
                println!(
                    "reduction {} -> {}: {:.1}% (MAC FLOPs), {:.1}% (all ops), ratio {:.4}",
                    hi.fingerprint,
                    lo.fingerprint,
                    r.percent(),
                    r.percent_all_ops(),
                    r.ratio()
                );
            }
            Ok(())
        }
        Command::Bench {
            seconds,
            weights,
            seed,
            cfg,
        } => {
            let cfg = load_config(&cfg)?;
            let w = match weights {
                Some(p) => Weights::load(p)?,
                None => random_init(&cfg, seed)?,
            };
            let r = bench_rtf(&cfg, &w, seconds, seed)?;
            let [fe, s2m, bb] = r.stage_rtf();
            println!(
                "config {}: {:.1} s audio in {:.2} s, RTF {:.3} (frontend {:.3}, compress {:.3}, backbone {:.3})",
                cfg.fingerprint(),
                r.audio_secs,
                r.wall_secs,
                r.rtf(),
                fe,
                s2m,
                bb
            );
            Ok(())
        }
        Command::InitWeights { seed, out, cfg } => {
            let cfg = load_config(&cfg)?;
            let mut w = random_init(&cfg, seed)?;
            w.set_fingerprint(&cfg.fingerprint());
            w.save(&out)?;
            println!(
                "config {}: {} parameters in {} tensors",
                cfg.fingerprint(),
                w.param_count() - 1,
                w.len() - 1
            );
            Ok(())
        }
        Command::DumpFilterbank { out, cfg } => {
            let cfg = load_config(&cfg)?;
            let fb = filterbank(&cfg)?;
            std::fs::write(
                &out,
                format!("# config {}\n{}", cfg.fingerprint(), fb.to_csv()),
            )?;
            println!(
                "config {}: {} x {} filterbank",
                cfg.fingerprint(),
                fb.n_mels(),
                fb.n_bins()
            );
            Ok(())
        }
        Command::DumpManifest { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let text = format!(
                "# config {}\n{}",
                cfg.fingerprint(),
                Manifest::for_config(&cfg)?.to_text()
            );
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

/// Mel PRM between channel `ref_ch` (1-based) of `clean` and `noisy`.
pub fn target_mask(
    cfg: &PipelineConfig,
    clean: &Audio,
    noisy: &Audio,
    ref_ch: usize,
) -> Result<TfGrid> {
    for (name, a) in [("clean", clean), ("noisy", noisy)] {
        if ref_ch == 0 || ref_ch > a.num_channels() {
            return Err(Error::Input(format!(
                "{name} input has {} channels; channel {ref_ch} requested (see --ref-ch)",
                a.num_channels()
            )));
        }
        if a.sample_rate != cfg.stft.sample_rate {
            return Err(Error::Input(format!(
                "{name} input is sampled at {} Hz, config expects {} Hz",
                a.sample_rate, cfg.stft.sample_rate
            )));
        }
    }
    if clean.len() != noisy.len() {
        return Err(Error::Input(format!(
            "clean has {} samples, noisy {}",
            clean.len(),
            noisy.len()
        )));
    }
    let stft = crate::dsp::Stft::new(cfg.stft)?;
    let fb = filterbank(cfg)?;
    let s = mel_power(&stft.analyze(clean)?, &fb, ref_ch - 1)?;
    let x = mel_power(&stft.analyze(noisy)?, &fb, ref_ch - 1)?;
    mel_prm(&s, &x)
}

/// Archive of `frames × bands` grids, tagged with `fingerprint`.
pub fn grid_archive(grids: &[(&str, &TfGrid)], fingerprint: &str) -> Result<Weights> {
    let mut w = Weights::new();
    for (name, g) in grids {
        w.insert(
            *name,
            Tensor::new(vec![g.frames(), g.bands()], g.values().to_vec())?,
        )?;
    }
    w.set_fingerprint(fingerprint);
    Ok(w)
}

/// Reads a grid written by [`grid_archive`].
pub fn read_grid(path: impl AsRef<Path>, name: &str) -> Result<TfGrid> {
    let w = Weights::load(path)?;
    let t = w.require(name)?;
    match t.dims() {
        &[f, b] => TfGrid::new(f, b, t.data().to_vec()),
        d => Err(Error::Shape(format!(
            "`{name}` has dims {d:?}, expected [frames, bands]"
        ))),
    }
}
