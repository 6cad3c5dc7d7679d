//! Writes seeded random weights to an archive, reads them back, and shows
//! how manifest validation reports a mismatch.
//!
//!     cargo run --example weights_archive

use mel_enhance::weights::random_init;
use mel_enhance::{Manifest, PipelineConfig, Tensor, Weights};

fn main() -> mel_enhance::Result<()> {
    let cfg = PipelineConfig::mel();
    let manifest = Manifest::for_config(&cfg)?;
    let mut w = random_init(&cfg, 7)?;
    w.set_fingerprint(&cfg.fingerprint());

    let path = std::env::temp_dir().join("mel-enhance-example.mmnt");
    w.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!(
        "{} tensors, {} parameters, {} bytes at {}",
        w.len(),
        manifest.param_count(),
        bytes.len(),
        path.display()
    );
    let head: Vec<String> = bytes[..12].iter().map(|b| format!("{b:02x}")).collect();
    println!("header: {}", head.join(" "));

    let back = Weights::load(&path)?;
    assert_eq!(back, w);
    manifest.validate(&back)?;
    println!(
        "round trip exact, manifest satisfied, fingerprint {}",
        back.fingerprint().unwrap_or("-")
    );

    let mut broken = back.clone();
    broken.set("bb.out.W", Tensor::zeros(&[2, 128]));
    broken.remove("bb.m2.lin.b");
    for line in manifest.diff(&broken) {
        println!("  {line}");
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
