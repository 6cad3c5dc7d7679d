//! Offline enhancement of a synthetic 6-microphone scene with resynthesis of
//! the masked reference channel to a WAV file.
//!
//!     cargo run --example reconstruct [out.wav]

use std::path::PathBuf;

use mel_enhance::audio::{synthetic_scene, write_wav, Audio};
use mel_enhance::engine::Enhancer;
use mel_enhance::weights::random_init;
use mel_enhance::PipelineConfig;

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn main() -> mel_enhance::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mel-enhance-reconstruct.wav"));
    let cfg = PipelineConfig::mel();
    let (_, noisy) = synthetic_scene(cfg.stft.sample_rate, cfg.channels, 32000, 5.0, 11)?;
    let e = Enhancer::new(&cfg, &random_init(&cfg, 2)?)?;
    let res = e.offline(&noisy, true)?;
    let wave = res.wave.expect("requested");
    let reference = noisy.channel(cfg.ref_index());
    let mean_mask = res.mask.values().iter().sum::<f32>() / res.mask.values().len() as f32;
    println!("{} frames, mean mask {mean_mask:.3}", res.mask.frames());
    println!("rms in {:.4}, rms out {:.4}", rms(reference), rms(&wave));
    write_wav(&out, &Audio::new(cfg.stft.sample_rate, vec![wave])?)?;
    println!("wrote {}", out.display());
    Ok(())
}
