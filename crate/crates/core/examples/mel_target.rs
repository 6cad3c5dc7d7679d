//! Rectified Mel power-ratio mask of a synthetic noisy recording, and how
//! much of the clean LogMel it recovers when applied as an oracle.
//!
//!     cargo run --example mel_target

use mel_enhance::audio::synthetic_scene;
use mel_enhance::dsp::{apply_mask, mel_power, mel_prm, MelFilterbank, Stft, StftConfig};

fn main() -> mel_enhance::Result<()> {
    let cfg = StftConfig::default();
    let stft = Stft::new(cfg)?;
    let fb = MelFilterbank::new(&cfg, 80, 0.0, 8000.0)?;
    let (clean, noisy) = synthetic_scene(16000, 1, 2 * 16000, 0.0, 11)?;

    let s = mel_power(&stft.analyze(&clean)?, &fb, 0)?;
    let x = mel_power(&stft.analyze(&noisy)?, &fb, 0)?;
    let mask = mel_prm(&s, &x)?;
    let v = mask.values();
    let mean = v.iter().sum::<f32>() / v.len() as f32;
    let ones = v.iter().filter(|&&m| m == 1.0).count();
    println!(
        "{} frames x {} bands, mean mask {mean:.3}, {ones} cells rectified to 1",
        mask.frames(),
        mask.bands()
    );

    let target = apply_mask(&s, &mel_prm(&s, &s)?)?;
    let before = apply_mask(&x, &mel_prm(&x, &x)?)?;
    let after = apply_mask(&x, &mask)?;
    let rms = |a: &[f32], b: &[f32]| {
        (a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f32>() / a.len() as f32).sqrt()
    };
    println!(
        "LogMel RMS error to clean: noisy {:.3}, oracle-masked {:.3}",
        rms(before.values(), target.values()),
        rms(after.values(), target.values())
    );
    Ok(())
}
