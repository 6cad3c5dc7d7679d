//! Builds the 80-band HTK-scale filterbank and checks its shape: every row
//! is a single non-negative triangle and interior bins sum to one.
//!
//!     cargo run --example filterbank [out.csv]

use mel_enhance::dsp::{MelFilterbank, StftConfig};

fn main() -> mel_enhance::Result<()> {
    let stft = StftConfig::default();
    let fb = MelFilterbank::new(&stft, 80, 0.0, 8000.0)?;
    println!(
        "{} bands x {} bins, {} non-zero weights",
        fb.n_mels(),
        fb.n_bins(),
        fb.nnz()
    );

    for m in [0, 1, 40, 79] {
        let s = fb.support(m);
        let peak = s
            .clone()
            .max_by(|&a, &b| fb.weight(m, a).total_cmp(&fb.weight(m, b)))
            .unwrap();
        println!(
            "band {m:2}: bins {:3}..{:3}, peak at bin {peak} ({:.0} Hz)",
            s.start,
            s.end,
            peak as f64 * 16000.0 / 512.0
        );
    }

    // between the first and last band centres every bin is covered by two
    // overlapping triangles that sum to one
    let bin_hz = 16000.0 / 512.0;
    let (c0, c1) = (fb.band_edges()[1], fb.band_edges()[80]);
    let worst = fb
        .column_sums()
        .iter()
        .enumerate()
        .filter(|&(f, _)| f as f64 * bin_hz > c0 && (f as f64 * bin_hz) < c1)
        .map(|(_, s)| (s - 1.0).abs())
        .fold(0.0, f32::max);
    println!("interior column sums deviate from 1 by at most {worst:.2e}");

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, fb.to_csv())?;
        println!("wrote {path}");
    }
    Ok(())
}
