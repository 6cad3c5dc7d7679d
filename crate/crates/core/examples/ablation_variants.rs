//! The five STFT-to-Mel variants side by side: parameters, operations per
//! frame, and a short causal run through each.
//!
//!     cargo run --example ablation_variants

use mel_enhance::audio::synthetic_scene;
use mel_enhance::engine::Enhancer;
use mel_enhance::ledger::count;
use mel_enhance::weights::random_init;
use mel_enhance::{PipelineConfig, Variant};

fn main() -> mel_enhance::Result<()> {
    let (_, noisy) = synthetic_scene(16000, 6, 4000, 5.0, 3)?;
    println!(
        "{:<18} {:>9} {:>12} {:>12} {:>7}",
        "variant", "params", "s2m MACs", "total MACs", "frames"
    );
    for v in Variant::ALL {
        let cfg = PipelineConfig::mel().with_variant(v);
        let report = count(&cfg)?;
        let s2m = report.subtotal("s2m.");
        let e = Enhancer::new(&cfg, &random_init(&cfg, 4)?)?;
        let out = e.offline(&noisy, false)?;
        assert!(out.mask.values().iter().all(|m| (0.0..=1.0).contains(m)));
        println!(
            "{:<18} {:>9} {:>12} {:>12} {:>7}",
            v.name(),
            report.total_params(),
            s2m.macs,
            report.per_frame().macs,
            out.mask.frames()
        );
    }
    Ok(())
}
