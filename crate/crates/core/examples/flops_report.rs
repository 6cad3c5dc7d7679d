//! Per-layer operation counts for the Mel and linear-frequency pipelines,
//! and the relative saving of the Mel front end.

use mel_enhance::ledger::{band_affine, compare, count};
use mel_enhance::PipelineConfig;

fn main() -> mel_enhance::Result<()> {
    let mel = count(&PipelineConfig::mel())?;
    let linear = count(&PipelineConfig::linear())?;
    print!("{}", mel.to_table());
    println!();
    print!("{}", linear.to_table());
    let r = compare(&linear, &mel);
    println!();
    println!(
        "mel / linear = {:.3} ({:.1}% fewer MAC FLOPs, {:.1}% fewer counting all ops)",
        r.ratio(),
        r.percent(),
        r.percent_all_ops()
    );
    println!();
    println!("backbone MACs per frame as fixed + per_band x bands:");
    for c in band_affine(&PipelineConfig::mel()) {
        println!("  {:<12} {} + {} x bands", c.name, c.fixed, c.per_band);
    }
    Ok(())
}
