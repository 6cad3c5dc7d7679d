use super::gemm::{gemm_packed, Packed};
use crate::error::{shape_err, Result};
use crate::tensor::{OpCounter, Tensor};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f32 = 1e-5;

/// `y = x·Wᵀ + b` over the last axis of `x`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
    if w.rank() != 2 {
        return shape_err(format!("linear weight must be rank 2, got {:?}", w.dims()));
    }
    let (out, inp) = (w.dims()[0], w.dims()[1]);
    if x.last_dim() != inp || x.rank() == 0 {
        return shape_err(format!("linear input {:?} does not end in {inp}", x.dims()));
    }
    if b.dims() != [out] {
        return shape_err(format!("linear bias {:?}, expected [{out}]", b.dims()));
    }
    let rows = x.rows();
    let mut y = vec![0f32; rows * out];
    let w = Packed::from_rows(w.data(), out, inp);
    linear_rows(x.data(), rows, &w, Some(b.data()), &mut y, ctr);
    let mut dims = x.dims().to_vec();
    *dims.last_mut().unwrap() = out;
    Tensor::new(dims, y)
}

/// Slice form of [`linear`]: `x` is `rows × inp`, `w` is `inp × out`.
pub(crate) fn linear_rows(
    x: &[f32],
    rows: usize,
    w: &Packed,
    b: Option<&[f32]>,
    y: &mut [f32],
    ctr: &mut OpCounter,
) {
    let (inp, out) = (w.k(), w.n());
    gemm_packed(x, rows, w, y);
    ctr.count_mac(rows * inp * out);
    if let Some(b) = b {
        for row in y[..rows * out].chunks_exact_mut(out) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        ctr.count_add(rows * out);
    }
}

/// Normalizes each row of the last axis to zero mean and unit variance, then
/// applies `gamma`/`beta`.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    let d = x.last_dim();
    if x.rank() == 0 || d == 0 {
        return shape_err("layer_norm needs a non-empty last axis");
    }
    if gamma.dims() != [d] || beta.dims() != [d] {
        return shape_err(format!(
            "layer_norm affine {:?}/{:?}, expected [{d}]",
            gamma.dims(),
            beta.dims()
        ));
    }
    let mut y = x.clone();
    layer_norm_rows(y.data_mut(), d, gamma.data(), beta.data(), eps, ctr);
    Ok(y)
}

pub(crate) fn layer_norm_rows(
    x: &mut [f32],
    d: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    ctr: &mut OpCounter,
) {
    let rows = x.len() / d;
    let inv_d = 1.0 / d as f32;
    for row in x.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() * inv_d;
        let mut var = 0f32;
        for v in row.iter_mut() {
            *v -= mean;
            var += *v * *v;
        }
        let inv = 1.0 / (var * inv_d + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = *v * inv * g + b;
        }
    }
    ctr.count_mac(rows * 2 * d);
    ctr.count_add(rows * 2 * d);
    ctr.count_nonlin(rows);
}
