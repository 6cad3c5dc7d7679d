//! Frame-by-frame enhancement of a six-microphone recording with seeded
//! random weights, checked against the whole-utterance path.
//!
//!     cargo run --example stream_enhance

use mel_enhance::audio::synthetic_scene;
use mel_enhance::engine::Enhancer;
use mel_enhance::weights::random_init;
use mel_enhance::PipelineConfig;

fn main() -> mel_enhance::Result<()> {
    let cfg = PipelineConfig::mel();
    let weights = random_init(&cfg, 1)?;
    let enhancer = Enhancer::new(&cfg, &weights)?;
    let (_, noisy) = synthetic_scene(16000, cfg.channels, 16000, 5.0, 2)?;

    let mut state = enhancer.open_stream();
    println!("stream state: {} bytes", state.footprint());
    let block_len = cfg.stft.hop * cfg.channels;
    let samples = noisy.interleaved();
    let mut frames = Vec::new();
    for (i, block) in samples.chunks_exact(block_len).enumerate() {
        match enhancer.push_block(&mut state, block)? {
            None => println!("block {i}: filling the first window"),
            Some(f) => {
                if f.index % 25 == 0 {
                    let mean = f.mask.iter().sum::<f32>() / f.mask.len() as f32;
                    println!(
                        "block {i}: frame {:3}, mean mask {mean:.3}, LogMel[0..3] {:.2?}",
                        f.index,
                        &f.logmel[..3]
                    );
                }
                frames.push(f);
            }
        }
    }
    println!(
        "stream state: {} bytes after {} frames",
        state.footprint(),
        state.frames()
    );

    let offline = enhancer.offline(&noisy, false)?;
    let worst = frames
        .iter()
        .flat_map(|f| f.logmel.iter().zip(offline.logmel.frame(f.index as usize)))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    println!(
        "{} frames, max |streaming - offline| = {worst:e}",
        frames.len()
    );
    println!(
        "{:.1} M MACs per frame",
        state.ops.macs as f64 / frames.len() as f64 / 1e6
    );
    Ok(())
}
