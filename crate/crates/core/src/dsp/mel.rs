//! HTK-scale triangular Mel filterbank.

use std::ops::Range;

use rustfft::num_complex::Complex32;

use super::stft::{Spectrogram, StftConfig};
use super::TfGrid;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels × n_bins` unit-peak triangles, equally spaced on the HTK Mel scale.
///
/// Adjacent triangles share edges, so column sums are exactly 1 (up to `f32`
/// rounding) between the first and last filter centres.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f32>,
    band_edges: Vec<f64>,
    support: Vec<Range<usize>>,
}

impl MelFilterbank {
    pub fn new(cfg: &StftConfig, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = cfg.sample_rate as f64 / 2.0;
        if n_mels < 2 {
            return Err(Error::Config(format!("n_mels = {n_mels}; need at least 2")));
        }
        if !(0.0..fmax).contains(&fmin) || fmax > nyquist {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist} Hz, got {fmin}..{fmax}"
            )));
        }
        let n_bins = cfg.bins();
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let mut band_edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        band_edges[0] = fmin;
        band_edges[n_mels + 1] = fmax;
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;

        let mut weights = vec![0f32; n_mels * n_bins];
        let mut support = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, centre, hi) = (band_edges[m], band_edges[m + 1], band_edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let v = ((f - lo) / (centre - lo)).min((hi - f) / (hi - centre));
                if v > 0.0 {
                    *w = v as f32;
                }
            }
            let first = row.iter().position(|&w| w > 0.0);
            let last = row.iter().rposition(|&w| w > 0.0);
            match (first, last) {
                (Some(a), Some(b)) => support.push(a..b + 1),
                _ => {
                    return Err(Error::Config(format!(
                        "{n_mels} Mel bands are too many for {n_bins} FFT bins: band {m} \
                         ({lo:.1}..{hi:.1} Hz) covers no bin"
                    )))
                }
            }
        }
        Ok(Self {
            n_mels,
            n_bins,
            weights,
            band_edges,
            support,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Row-major `n_mels × n_bins` weights.
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn weight(&self, m: usize, f: usize) -> f32 {
        self.weights[m * self.n_bins + f]
    }

    /// `n_mels + 2` frequencies in Hz: lower edge, the centres, upper edge.
    pub fn band_edges(&self) -> &[f64] {
        &self.band_edges
    }

    /// Bins with nonzero weight in band `m` (contiguous).
    pub fn support(&self, m: usize) -> Range<usize> {
        self.support[m].clone()
    }

    /// Total count of nonzero weights.
    pub fn nnz(&self) -> usize {
        self.support.iter().map(|r| r.len()).sum()
    }

    pub fn column_sums(&self) -> Vec<f32> {
        let mut sums = vec![0f32; self.n_bins];
        for m in 0..self.n_mels {
            for f in self.support(m) {
                sums[f] += self.weight(m, f);
            }
        }
        sums
    }

    /// Mel power of one channel of one `bins × channels` frame.
    pub(crate) fn power_frame(
        &self,
        frame: &[Complex32],
        channels: usize,
        ch: usize,
        out: &mut [f32],
    ) {
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let mut acc = 0f32;
            for f in self.support(m) {
                let c = frame[f * channels + ch];
                acc += self.weights[m * self.n_bins + f] * (c.re * c.re + c.im * c.im);
            }
            *o = acc;
        }
    }

    /// CSV text: one row per band, `n_bins` comma-separated weights.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for m in 0..self.n_mels {
            let row: Vec<String> = self.row(m).iter().map(|w| format!("{w:e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// `|X(t, f, ch)|²` filtered into Mel bands.
pub fn mel_power(spec: &Spectrogram, fb: &MelFilterbank, ch: usize) -> Result<TfGrid> {
    if ch >= spec.channels() {
        return Err(Error::Input(format!(
            "channel {ch} out of range for {} channels",
            spec.channels()
        )));
    }
    if spec.bins() != fb.n_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank {}",
            spec.bins(),
            fb.n_bins()
        )));
    }
    let mut out = TfGrid::zeros(spec.frames(), fb.n_mels());
    for t in 0..spec.frames() {
        fb.power_frame(spec.frame(t), spec.channels(), ch, out.frame_mut(t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fb80() -> MelFilterbank {
        MelFilterbank::new(&StftConfig::default(), 80, 0.0, 8000.0).unwrap()
    }

    #[test]
    fn htk_formula() {
        assert!((hz_to_mel(700.0) - 781.172_84).abs() < 1e-3);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn edges_map_to_fmin_and_fmax() {
        let fb = fb80();
        assert_eq!(fb.band_edges().len(), 82);
        assert_eq!(fb.band_edges()[0], 0.0);
        assert_eq!(fb.band_edges()[81], 8000.0);
        // edge bins carry zero weight: they sit exactly on the outer triangle feet
        assert_eq!(fb.weight(0, 0), 0.0);
        assert_eq!(fb.weight(79, 256), 0.0);
        assert!(fb.support(0).start >= 1 && fb.support(79).end <= 256);
    }

    #[test]
    fn partition_of_unity_in_interior() {
        let fb = fb80();
        let bin_hz = 16000.0 / 512.0;
        let (c0, c1) = (fb.band_edges()[1], fb.band_edges()[80]);
        for (f, s) in fb.column_sums().into_iter().enumerate() {
            let hz = f as f64 * bin_hz;
            assert!(s <= 1.0 + 1e-6 && s >= 0.0);
            if hz > c0 && hz < c1 {
                assert!((s - 1.0).abs() <= 1e-6, "bin {f}: {s}");
            }
        }
    }

    #[test]
    fn too_many_bands_is_an_error() {
        let r = MelFilterbank::new(&StftConfig::default(), 200, 0.0, 8000.0);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(MelFilterbank::new(&StftConfig::default(), 1, 0.0, 8000.0).is_err());
        assert!(MelFilterbank::new(&StftConfig::default(), 40, 0.0, 9000.0).is_err());
    }

    #[test]
    fn single_bin_linearity() {
        let fb = fb80();
        let mut spec = Spectrogram::zeros(1, 257, 1);
        let f0 = 37;
        spec.set(0, f0, 0, Complex32::new(3.0, 4.0));
        let p = mel_power(&spec, &fb, 0).unwrap();
        for m in 0..80 {
            assert_eq!(p.at(0, m), fb.weight(m, f0) * 25.0);
        }
        let z = mel_power(&Spectrogram::zeros(3, 257, 2), &fb, 1).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }
}
