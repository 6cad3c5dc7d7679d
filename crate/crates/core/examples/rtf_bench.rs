//! Real-time factor of the streaming path, split by stage.
//!
//!     cargo run --release --example rtf_bench [seconds]

use mel_enhance::ledger::bench_rtf;
use mel_enhance::weights::random_init;
use mel_enhance::PipelineConfig;

fn main() -> mel_enhance::Result<()> {
    let seconds: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5.0);
    for cfg in [PipelineConfig::mel(), PipelineConfig::linear()] {
        let w = random_init(&cfg, 1)?;
        let r = bench_rtf(&cfg, &w, seconds, 1)?;
        let [fe, s2m, bb] = r.stage_rtf();
        println!(
            "{:<7} RTF {:.3}  (frontend {fe:.3}, compression {s2m:.3}, backbone {bb:.3}) over {:.1} s",
            format!("{:?}", cfg.frontend).to_lowercase(),
            r.rtf(),
            r.audio_secs
        );
    }
    Ok(())
}
