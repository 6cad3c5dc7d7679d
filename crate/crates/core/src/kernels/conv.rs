use super::gemm::{gemm_packed, Packed};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{OpCounter, Tensor};

/// Padding contract of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// `(k-1)/2` zeros before, the rest after; used along frequency.
    SameCentered,
    /// `past_pad` zeros before position 0 and none after. Must equal `k-1`.
    CausalPast { past_pad: usize },
}

impl ConvMode {
    fn left_pad(self, k: usize) -> Result<usize> {
        match self {
            ConvMode::SameCentered => Ok((k - 1) / 2),
            ConvMode::CausalPast { past_pad } if past_pad == k - 1 => Ok(past_pad),
            ConvMode::CausalPast { past_pad } => config_err(format!(
                "causal kernel of size {k} needs {} past frames of padding, configured {past_pad}",
                k - 1
            )),
        }
    }
}

/// Cross-correlation of `x` (`L × in`) with `kernel` (`out × in × k`).
///
/// Tap `j` of output `t` reads input position `t + j - left_pad`; positions
/// outside `[0, L)` read zero.
pub fn conv1d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    mode: ConvMode,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    if x.rank() != 2 || kernel.rank() != 3 {
        return shape_err(format!(
            "conv1d expects x [L,in] and kernel [out,in,k], got {:?} and {:?}",
            x.dims(),
            kernel.dims()
        ));
    }
    let (len, inp) = (x.dims()[0], x.dims()[1]);
    let (out, kin, k) = (kernel.dims()[0], kernel.dims()[1], kernel.dims()[2]);
    if kin != inp {
        return shape_err(format!(
            "conv1d kernel expects {kin} input channels, x has {inp}"
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [out] {
            return shape_err(format!("conv1d bias {:?}, expected [{out}]", b.dims()));
        }
    }
    let pad = mode.left_pad(k)?;
    let mut cols = vec![0f32; len * inp * k];
    im2col(len, inp, k, x.data(), &mut cols, |t, j| {
        (t + j).checked_sub(pad).filter(|&p| p < len)
    });
    let mut y = vec![0f32; len * out];
    let kp = Packed::from_rows(kernel.data(), out, inp * k);
    conv_gemm(&cols, len, &kp, bias.map(|b| b.data()), &mut y, ctr);
    Tensor::new(vec![len, out], y)
}

/// Gathers `k`-tap windows into rows of `in_ch * k` columns, laid out so that
/// column `c * k + j` matches kernel element `[o, c, j]`.
///
/// `source(row, tap)` names the input row feeding that tap, or `None` for a
/// zero pad.
pub(crate) fn im2col(
    rows: usize,
    in_ch: usize,
    k: usize,
    src: &[f32],
    cols: &mut [f32],
    source: impl Fn(usize, usize) -> Option<usize>,
) {
    let width = in_ch * k;
    for r in 0..rows {
        let dst = &mut cols[r * width..(r + 1) * width];
        for j in 0..k {
            match source(r, j) {
                Some(s) => {
                    let srow = &src[s * in_ch..(s + 1) * in_ch];
                    for (c, &v) in srow.iter().enumerate() {
                        dst[c * k + j] = v;
                    }
                }
                None => {
                    for c in 0..in_ch {
                        dst[c * k + j] = 0.0;
                    }
                }
            }
        }
    }
}

/// `y = cols · kernel (+ bias)`, with `kernel` packed as `kdim × out`.
pub(crate) fn conv_gemm(
    cols: &[f32],
    rows: usize,
    kernel: &Packed,
    bias: Option<&[f32]>,
    y: &mut [f32],
    ctr: &mut OpCounter,
) {
    let (kdim, out) = (kernel.k(), kernel.n());
    gemm_packed(cols, rows, kernel, y);
    ctr.count_mac(rows * out * kdim);
    if let Some(b) = bias {
        for row in y[..rows * out].chunks_exact_mut(out) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        ctr.count_add(rows * out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn causal_impulse_response() {
        let k = 4;
        let mut x = Tensor::zeros(&[6, 1]);
        x.data_mut()[0] = 1.0;
        let kern = Tensor::new(vec![1, 1, k], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut c = OpCounter::new();
        let y = conv1d(
            &x,
            &kern,
            None,
            ConvMode::CausalPast { past_pad: 3 },
            &mut c,
        )
        .unwrap();
        // the newest tap (j = k-1) sees the impulse first
        assert_eq!(y.data(), &[0.4, 0.3, 0.2, 0.1, 0.0, 0.0]);
        assert_eq!(c.macs, 6 * 4);
    }

    #[test]
    fn identity_kernel() {
        let mut r = SplitMix64::new(4);
        let x = Tensor::new(vec![5, 3], r.uniform_vec(15, 1.0)).unwrap();
        let mut eye = Tensor::zeros(&[3, 3, 1]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let mut c = OpCounter::new();
        for mode in [ConvMode::SameCentered, ConvMode::CausalPast { past_pad: 0 }] {
            let y = conv1d(&x, &eye, None, mode, &mut c).unwrap();
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn padding_contract_is_enforced() {
        let x = Tensor::zeros(&[4, 1]);
        let kern = Tensor::zeros(&[1, 1, 6]);
        let mut c = OpCounter::new();
        let r = conv1d(
            &x,
            &kern,
            None,
            ConvMode::CausalPast { past_pad: 4 },
            &mut c,
        );
        assert!(matches!(r, Err(crate::Error::Config(_))));
        assert!(conv1d(
            &x,
            &kern,
            None,
            ConvMode::CausalPast { past_pad: 5 },
            &mut c
        )
        .is_ok());
    }

    #[test]
    fn causal_outputs_ignore_later_inputs() {
        let mut r = SplitMix64::new(8);
        let (len, inp, out, k) = (40, 5, 7, 6);
        let x = Tensor::new(vec![len, inp], r.uniform_vec(len * inp, 1.0)).unwrap();
        let kern = Tensor::new(vec![out, inp, k], r.uniform_vec(out * inp * k, 0.5)).unwrap();
        let mode = ConvMode::CausalPast { past_pad: k - 1 };
        let mut c = OpCounter::new();
        let y = conv1d(&x, &kern, None, mode, &mut c).unwrap();
        let t0 = 17;
        let mut xp = x.clone();
        for v in &mut xp.data_mut()[t0 * inp..] {
            *v += 3.0;
        }
        let yp = conv1d(&xp, &kern, None, mode, &mut c).unwrap();
        assert_eq!(&y.data()[..t0 * out], &yp.data()[..t0 * out]);
        assert_ne!(&y.data()[t0 * out..], &yp.data()[t0 * out..]);
    }
}
