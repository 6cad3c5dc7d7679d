//! Standard LSTM cell (gate order i, f, g, o; no peepholes) and sequence
//! drivers.

use super::activation::{sigmoid_inplace, tanh_inplace};
use super::gemm::{gemm_packed, matvec, matvec_pair, Packed};
use crate::error::{shape_err, Result};
use crate::tensor::{OpCounter, Tensor};

/// Weights of one LSTM direction: `wx` is `4h × in`, `wh` is `4h × h`, `b` is `4h`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn new(wx: Tensor, wh: Tensor, b: Tensor) -> Result<Self> {
        if wx.rank() != 2 || wh.rank() != 2 || b.rank() != 1 {
            return shape_err("lstm params must be Wx [4h,in], Wh [4h,h], b [4h]");
        }
        let g = wx.dims()[0];
        if g % 4 != 0 || wh.dims() != [g, g / 4] || b.dims() != [g] {
            return shape_err(format!(
                "inconsistent lstm params Wx {:?}, Wh {:?}, b {:?}",
                wx.dims(),
                wh.dims(),
                b.dims()
            ));
        }
        Ok(Self { wx, wh, b })
    }

    pub fn input_size(&self) -> usize {
        self.wx.dims()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.dims()[1]
    }
}

/// Hidden and cell state of one LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One cell update. Returns the output (equal to the new hidden state) and the
/// new state.
pub fn lstm_step(
    x: &[f32],
    state: &LstmState,
    params: &LstmParams,
    ctr: &mut OpCounter,
) -> Result<(Vec<f32>, LstmState)> {
    let hid = params.hidden_size();
    if x.len() != params.input_size() || state.h.len() != hid || state.c.len() != hid {
        return shape_err(format!(
            "lstm_step: x {} / state {}+{} vs params in {} hid {hid}",
            x.len(),
            state.h.len(),
            state.c.len(),
            params.input_size()
        ));
    }
    let p = PreparedLstm::from_params(params);
    let mut gates = vec![0f32; 4 * hid];
    p.input_gates(x, 1, &mut gates, ctr);
    p.recur_one(&state.h, &mut gates, ctr);
    let mut next = state.clone();
    p.cell(&mut gates, &mut next.c, &mut next.h, 1, ctr);
    Ok((next.h.clone(), next))
}

/// Runs an LSTM over `x` (`L × in`) from a zero state.
///
/// With `bwd` present the layer is bidirectional and each output row is
/// `[h_fwd(t), h_bwd(t)]`. Forward outputs at `t` depend only on `x[..=t]`.
pub fn lstm_seq(
    x: &Tensor,
    fwd: &LstmParams,
    bwd: Option<&LstmParams>,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    if x.rank() != 2 || x.dims()[1] != fwd.input_size() {
        return shape_err(format!(
            "lstm_seq input {:?}, expected [L,{}]",
            x.dims(),
            fwd.input_size()
        ));
    }
    if let Some(b) = bwd {
        if b.input_size() != fwd.input_size() || b.hidden_size() != fwd.hidden_size() {
            return shape_err("lstm_seq: backward params differ in shape from forward");
        }
    }
    let len = x.dims()[0];
    let hid = fwd.hidden_size();
    let dirs = if bwd.is_some() { 2 } else { 1 };
    let mut y = vec![0f32; len * dirs * hid];
    let mut run = |p: &LstmParams, reverse: bool, offset: usize| {
        let p = PreparedLstm::from_params(p);
        let mut gx = vec![0f32; len * 4 * hid];
        p.input_gates(x.data(), len, &mut gx, ctr);
        let mut st = LstmState::zeros(hid);
        for s in 0..len {
            let t = if reverse { len - 1 - s } else { s };
            let g = &mut gx[t * 4 * hid..(t + 1) * 4 * hid];
            p.recur_one(&st.h, g, ctr);
            p.cell(g, &mut st.c, &mut st.h, 1, ctr);
            let row = t * dirs * hid + offset;
            y[row..row + hid].copy_from_slice(&st.h);
        }
    };
    run(fwd, false, 0);
    if let Some(b) = bwd {
        run(b, true, hid);
    }
    Tensor::new(vec![len, dirs * hid], y)
}

/// LSTM weights laid out for the batched and single-row paths.
#[derive(Clone, Debug)]
pub(crate) struct PreparedLstm {
    pub input: usize,
    pub hidden: usize,
    /// `in × 4h`.
    wx: Packed,
    /// `h × 4h`.
    wh: Packed,
    b: Vec<f32>,
}

impl PreparedLstm {
    pub fn new(input: usize, hidden: usize, wx: &[f32], wh: &[f32], b: &[f32]) -> Self {
        assert_eq!(wx.len(), 4 * hidden * input);
        assert_eq!(wh.len(), 4 * hidden * hidden);
        assert_eq!(b.len(), 4 * hidden);
        Self {
            input,
            hidden,
            wx: Packed::from_rows(wx, 4 * hidden, input),
            wh: Packed::from_rows(wh, 4 * hidden, hidden),
            b: b.to_vec(),
        }
    }

    pub fn from_params(p: &LstmParams) -> Self {
        Self::new(
            p.input_size(),
            p.hidden_size(),
            p.wx.data(),
            p.wh.data(),
            p.b.data(),
        )
    }

    /// `gates[r] = Wx·x[r] + b` for `rows` input rows.
    pub fn input_gates(&self, x: &[f32], rows: usize, gates: &mut [f32], ctr: &mut OpCounter) {
        let g = 4 * self.hidden;
        gemm_packed(x, rows, &self.wx, gates);
        for row in gates[..rows * g].chunks_exact_mut(g) {
            for (v, &bb) in row.iter_mut().zip(&self.b) {
                *v += bb;
            }
        }
        ctr.count_mac(rows * g * self.input);
        ctr.count_add(rows * g);
    }

    /// `gates += Wh·h` for a single row.
    pub fn recur_one(&self, h: &[f32], gates: &mut [f32], ctr: &mut OpCounter) {
        let g = 4 * self.hidden;
        let mut gh = [0f32; 4096];
        let gh = if g <= gh.len() {
            &mut gh[..g]
        } else {
            return self.recur_one_heap(h, gates, ctr);
        };
        matvec(h, &self.wh, gh);
        for (v, &r) in gates.iter_mut().zip(gh.iter()) {
            *v += r;
        }
        ctr.count_mac(g * self.hidden);
        ctr.count_add(g);
    }

    fn recur_one_heap(&self, h: &[f32], gates: &mut [f32], ctr: &mut OpCounter) {
        let g = 4 * self.hidden;
        let mut gh = vec![0f32; g];
        matvec(h, &self.wh, &mut gh);
        for (v, &r) in gates.iter_mut().zip(&gh) {
            *v += r;
        }
        ctr.count_mac(g * self.hidden);
        ctr.count_add(g);
    }

    /// [`Self::recur_one`] for two same-shaped cells at once.
    pub fn recur_pair(
        cells: [&Self; 2],
        h: [&[f32]; 2],
        gates: [&mut [f32]; 2],
        scratch: &mut Vec<f32>,
        ctr: &mut OpCounter,
    ) {
        let (hid, g) = (cells[0].hidden, 4 * cells[0].hidden);
        assert_eq!(cells[1].hidden, hid);
        scratch.resize(2 * g, 0.0);
        let (r0, r1) = scratch.split_at_mut(g);
        matvec_pair(h, [&cells[0].wh, &cells[1].wh], [r0, &mut r1[..g]]);
        for (gt, r) in gates.into_iter().zip([&*r0, &r1[..g]]) {
            for (v, &x) in gt.iter_mut().zip(r) {
                *v += x;
            }
        }
        ctr.count_mac(2 * g * hid);
        ctr.count_add(2 * g);
    }

    /// `gates[r] += Wh·h[r]` for `rows` independent recurrences.
    pub fn recur_rows(
        &self,
        h: &[f32],
        rows: usize,
        gates: &mut [f32],
        scratch: &mut Vec<f32>,
        ctr: &mut OpCounter,
    ) {
        let g = 4 * self.hidden;
        scratch.resize(rows * g, 0.0);
        gemm_packed(h, rows, &self.wh, scratch);
        for (v, &r) in gates[..rows * g].iter_mut().zip(scratch.iter()) {
            *v += r;
        }
        ctr.count_mac(rows * g * self.hidden);
        ctr.count_add(rows * g);
    }

    /// Applies the gate nonlinearities and advances `c` and `h` in place.
    pub fn cell(
        &self,
        gates: &mut [f32],
        c: &mut [f32],
        h: &mut [f32],
        rows: usize,
        ctr: &mut OpCounter,
    ) {
        let hid = self.hidden;
        for r in 0..rows {
            let g = &mut gates[r * 4 * hid..(r + 1) * 4 * hid];
            let (ifg, o) = g.split_at_mut(3 * hid);
            let (if_, gg) = ifg.split_at_mut(2 * hid);
            sigmoid_inplace(if_);
            tanh_inplace(gg);
            sigmoid_inplace(o);
            let (ig, fg) = if_.split_at(hid);
            let cr = &mut c[r * hid..(r + 1) * hid];
            let hr = &mut h[r * hid..(r + 1) * hid];
            for j in 0..hid {
                cr[j] = fg[j] * cr[j] + ig[j] * gg[j];
            }
            hr.copy_from_slice(cr);
            tanh_inplace(hr);
            for (v, &og) in hr.iter_mut().zip(o.iter()) {
                *v *= og;
            }
        }
        ctr.count_add(rows * 4 * hid);
        ctr.count_nonlin(rows * 5 * hid);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_params(r: &mut SplitMix64, inp: usize, hid: usize) -> LstmParams {
        LstmParams::new(
            Tensor::new(vec![4 * hid, inp], r.uniform_vec(4 * hid * inp, 0.4)).unwrap(),
            Tensor::new(vec![4 * hid, hid], r.uniform_vec(4 * hid * hid, 0.4)).unwrap(),
            Tensor::new(vec![4 * hid], r.uniform_vec(4 * hid, 0.4)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_state() {
        let p = LstmParams::new(
            Tensor::zeros(&[8, 3]),
            Tensor::zeros(&[8, 2]),
            Tensor::zeros(&[8]),
        )
        .unwrap();
        let mut c = OpCounter::new();
        let (y, st) = lstm_step(&[0.3, -1.0, 2.0], &LstmState::zeros(2), &p, &mut c).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        assert_eq!(st.c, vec![0.0, 0.0]);
        assert_eq!(c.macs, 4 * 2 * (3 + 2));
    }

    #[test]
    fn pure_memory_limit() {
        let hid = 3;
        let mut b = vec![0f32; 4 * hid];
        b[..hid].fill(-40.0); // input gate closed
        b[hid..2 * hid].fill(40.0); // forget gate open
        let p = LstmParams::new(
            Tensor::zeros(&[4 * hid, 2]),
            Tensor::zeros(&[4 * hid, hid]),
            Tensor::new(vec![4 * hid], b).unwrap(),
        )
        .unwrap();
        let st = LstmState {
            h: vec![0.0; hid],
            c: vec![0.7, -1.5, 3.0],
        };
        let mut c = OpCounter::new();
        let (_, next) = lstm_step(&[1.0, -1.0], &st, &p, &mut c).unwrap();
        for (a, b) in next.c.iter().zip(&st.c) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn seq_of_one_equals_step() {
        let mut r = SplitMix64::new(21);
        let p = random_params(&mut r, 5, 4);
        let x = r.uniform_vec(5, 1.0);
        let mut c = OpCounter::new();
        let (y, _) = lstm_step(&x, &LstmState::zeros(4), &p, &mut c).unwrap();
        let ys = lstm_seq(&Tensor::new(vec![1, 5], x).unwrap(), &p, None, &mut c).unwrap();
        assert_eq!(ys.data(), &y[..]);
    }

    #[test]
    fn forward_prefix_determinism() {
        let mut r = SplitMix64::new(22);
        let p = random_params(&mut r, 6, 8);
        let (len, t0) = (30, 11);
        let x = Tensor::new(vec![len, 6], r.uniform_vec(len * 6, 1.0)).unwrap();
        let mut c = OpCounter::new();
        let full = lstm_seq(&x, &p, None, &mut c).unwrap();
        let head = Tensor::new(vec![t0, 6], x.data()[..t0 * 6].to_vec()).unwrap();
        let part = lstm_seq(&head, &p, None, &mut c).unwrap();
        assert_eq!(part.data(), &full.data()[..t0 * 8]);
        let mut xp = x.clone();
        xp.data_mut()[t0 * 6] += 1.0;
        let pert = lstm_seq(&xp, &p, None, &mut c).unwrap();
        assert_eq!(&pert.data()[..t0 * 8], &full.data()[..t0 * 8]);
    }

    #[test]
    fn counts_do_not_depend_on_values() {
        let mut r = SplitMix64::new(23);
        let p = random_params(&mut r, 4, 5);
        let q = random_params(&mut r, 4, 5);
        let mut c1 = OpCounter::new();
        let mut c2 = OpCounter::new();
        let x1 = Tensor::new(vec![9, 4], r.uniform_vec(36, 1.0)).unwrap();
        let x2 = Tensor::new(vec![9, 4], r.uniform_vec(36, 5.0)).unwrap();
        lstm_seq(&x1, &p, Some(&q), &mut c1).unwrap();
        lstm_seq(&x2, &q, Some(&p), &mut c2).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.macs, 2 * 9 * 4 * 5 * (4 + 5));
    }
}
