//! Matrix products used by the higher-level kernels.
//!
//! The right-hand operand is `k × n` (input × output), either plain row-major
//! or [`Packed`]. Every output element is a single fused multiply-add chain
//! over `k` in ascending order starting from zero, whatever the number of
//! rows, the row's position, the layout or the code path (AVX-512 or
//! portable). A block of frames and the same frames processed one at a time
//! therefore agree bit for bit.

/// Columns per panel.
const NR: usize = 64;

/// A `k × n` weight matrix cut into 64-column panels. Each panel is stored
/// row-major with its own row stride, so streaming it down `k` is sequential.
/// The last panel is zero-padded to a multiple of 16 columns.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Packed {
    k: usize,
    n: usize,
    data: Vec<f32>,
}

impl Packed {
    /// From `w: [n × k]`, one row per output.
    pub fn from_rows(w: &[f32], n: usize, k: usize) -> Self {
        assert_eq!(w.len(), n * k);
        Self::build(k, n, |kk, j| w[j * k + kk])
    }

    /// From `wt: [k × n]`.
    #[cfg(test)]
    pub fn from_t(wt: &[f32], k: usize, n: usize) -> Self {
        assert_eq!(wt.len(), k * n);
        Self::build(k, n, |kk, j| wt[kk * n + j])
    }

    fn build(k: usize, n: usize, at: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(k * n.next_multiple_of(16));
        for j0 in (0..n).step_by(NR) {
            let (w, ld) = ((n - j0).min(NR), Self::ld_for(n, j0));
            for kk in 0..k {
                data.extend((0..w).map(|j| at(kk, j0 + j)));
                data.resize(data.len() + ld - w, 0.0);
            }
        }
        Self { k, n, data }
    }

    fn ld_for(n: usize, j0: usize) -> usize {
        (n - j0).min(NR).next_multiple_of(16)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row `kk`, columns `j0..j0 + w`, within one panel.
    fn row(&self, kk: usize, j0: usize, w: usize) -> &[f32] {
        let p0 = j0 - j0 % NR;
        let off = p0 * self.k + kk * Self::ld_for(self.n, p0) + j0 % NR;
        &self.data[off..][..w]
    }
}

#[derive(Clone, Copy)]
enum Rhs<'a> {
    Plain(&'a [f32], usize),
    Packed(&'a Packed),
}

impl Rhs<'_> {
    fn n(&self) -> usize {
        match self {
            Rhs::Plain(_, n) => *n,
            Rhs::Packed(p) => p.n,
        }
    }

    /// Row `kk`, columns `j0..j0 + w` with `j0 % 16 == 0` and no panel crossing.
    fn row(&self, kk: usize, j0: usize, w: usize) -> &[f32] {
        match self {
            Rhs::Plain(wt, n) => &wt[kk * n + j0..][..w],
            Rhs::Packed(p) => p.row(kk, j0, w),
        }
    }
}

/// `y[m×n] = x[m×k] · wt[k×n]`, all row-major; `y` is overwritten.
pub(crate) fn gemm(x: &[f32], m: usize, k: usize, wt: &[f32], n: usize, y: &mut [f32]) {
    assert!(wt.len() >= k * n);
    run(x, m, k, Rhs::Plain(wt, n), y);
}

/// `y[m×n] = x[m×k] · b`.
pub(crate) fn gemm_packed(x: &[f32], m: usize, b: &Packed, y: &mut [f32]) {
    run(x, m, b.k, Rhs::Packed(b), y);
}

/// `y[n] = x[k] · b`.
pub(crate) fn matvec(x: &[f32], b: &Packed, y: &mut [f32]) {
    assert!(x.len() == b.k && y.len() == b.n);
    run(x, 1, b.k, Rhs::Packed(b), y);
}

fn run(x: &[f32], m: usize, k: usize, b: Rhs, y: &mut [f32]) {
    let n = b.n();
    assert!(x.len() >= m * k && y.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: feature checked above; extents asserted above.
        unsafe { avx512::gemm(x, m, k, b, y) };
        return;
    }
    portable(x, m, k, b, y);
}

fn portable(x: &[f32], m: usize, k: usize, b: Rhs, y: &mut [f32]) {
    const B: usize = 16;
    let n = b.n();
    for r in 0..m {
        let xr = &x[r * k..(r + 1) * k];
        let yr = &mut y[r * n..(r + 1) * n];
        for j0 in (0..n).step_by(B) {
            let w = B.min(n - j0);
            let mut acc = [0f32; B];
            for (kk, &s) in xr.iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(b.row(kk, j0, w)) {
                    *a = s.mul_add(v, *a);
                }
            }
            yr[j0..j0 + w].copy_from_slice(&acc[..w]);
        }
    }
}

/// Two matvecs at once; each result equals its own [`matvec`] exactly.
pub(crate) fn matvec_pair(x: [&[f32]; 2], b: [&Packed; 2], y: [&mut [f32]; 2]) {
    let (k, n) = (b[0].k, b[0].n);
    assert!(b[1].k == k && b[1].n == n);
    assert!(x.iter().all(|v| v.len() == k) && y.iter().all(|v| v.len() == n));
    #[cfg(target_arch = "x86_64")]
    if k > 0 && n > 0 && std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: feature checked above; extents asserted above.
        unsafe { avx512::matvec_pair(x, b, y) };
        return;
    }
    let [y0, y1] = y;
    matvec(x[0], b[0], y0);
    matvec(x[1], b[1], y1);
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{Packed, Rhs, NR};
    use std::arch::x86_64::*;

    /// Depth of one pass over `k`; keeps a weight panel in L1.
    const KC: usize = 128;
    const FULL: __mmask16 = 0xFFFF;

    /// Weight operand of one block: element `(kk, 16v + i)` sits at
    /// `p + (v / 4)·ps + kk·ld + 16·(v % 4) + i`.
    #[derive(Clone, Copy)]
    struct W {
        p: *const f32,
        ld: usize,
        ps: usize,
    }

    impl W {
        #[inline(always)]
        unsafe fn at(self, kk: usize, v: usize) -> *const f32 {
            self.p.add((v / 4) * self.ps + kk * self.ld + 16 * (v % 4))
        }
    }

    /// Weights for columns from `j0` (a multiple of 64), rows from `k0`.
    unsafe fn rhs_at(b: Rhs, k0: usize, j0: usize) -> W {
        match b {
            Rhs::Plain(wt, n) => W {
                p: wt.as_ptr().add(k0 * n + j0),
                ld: n,
                ps: NR,
            },
            Rhs::Packed(p) => {
                let ld = Packed::ld_for(p.n, j0);
                W {
                    p: p.data.as_ptr().add(j0 * p.k + k0 * ld),
                    ld,
                    ps: NR * p.k,
                }
            }
        }
    }

    #[inline(always)]
    unsafe fn load<const V: usize>(p: *const f32, v: usize, tail: __mmask16) -> __m512 {
        if v + 1 == V {
            _mm512_maskz_loadu_ps(tail, p)
        } else {
            _mm512_loadu_ps(p)
        }
    }

    #[inline(always)]
    unsafe fn store<const V: usize>(p: *mut f32, v: usize, tail: __mmask16, a: __m512) {
        if v + 1 == V {
            _mm512_mask_storeu_ps(p, tail, a);
        } else {
            _mm512_storeu_ps(p, a);
        }
    }

    /// `R` rows × `V` vectors of 16 columns; the last vector is masked by
    /// `tail`. `x` rows are `ldx` apart, `y` rows `n` apart. Continues the
    /// partial sums in `y` unless `first`.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn block<const R: usize, const V: usize>(
        x: *const f32,
        ldx: usize,
        k: usize,
        w: W,
        n: usize,
        y: *mut f32,
        tail: __mmask16,
        first: bool,
    ) {
        let mut acc = [[_mm512_setzero_ps(); V]; R];
        if !first {
            for (r, ar) in acc.iter_mut().enumerate() {
                for (v, a) in ar.iter_mut().enumerate() {
                    *a = load::<V>(y.add(r * n + 16 * v), v, tail);
                }
            }
        }
        for kk in 0..k {
            let mut wv = [_mm512_setzero_ps(); V];
            for (v, slot) in wv.iter_mut().enumerate() {
                *slot = load::<V>(w.at(kk, v), v, tail);
            }
            for (r, ar) in acc.iter_mut().enumerate() {
                let s = _mm512_set1_ps(*x.add(r * ldx + kk));
                for v in 0..V {
                    ar[v] = _mm512_fmadd_ps(s, wv[v], ar[v]);
                }
            }
        }
        for (r, ar) in acc.iter().enumerate() {
            for (v, &a) in ar.iter().enumerate() {
                store::<V>(y.add(r * n + 16 * v), v, tail, a);
            }
        }
    }

    struct Pass {
        x: *const f32,
        ldx: usize,
        k: usize,
        n: usize,
        y: *mut f32,
        first: bool,
    }

    #[target_feature(enable = "avx512f")]
    unsafe fn rows<const V: usize>(p: &Pass, m: usize, w: W, j0: usize, tail: __mmask16) {
        let yp = p.y.add(j0);
        let mut r = 0;
        while r + 6 <= m {
            block::<6, V>(
                p.x.add(r * p.ldx),
                p.ldx,
                p.k,
                w,
                p.n,
                yp.add(r * p.n),
                tail,
                p.first,
            );
            r += 6;
        }
        while r < m {
            block::<1, V>(
                p.x.add(r * p.ldx),
                p.ldx,
                p.k,
                w,
                p.n,
                yp.add(r * p.n),
                tail,
                p.first,
            );
            r += 1;
        }
    }

    fn tail_of(cols: usize) -> __mmask16 {
        match cols % 16 {
            0 => FULL,
            w => (1u16 << w) - 1,
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gemm(x: &[f32], m: usize, k: usize, b: Rhs, y: &mut [f32]) {
        let n = b.n();
        let mut k0 = 0;
        loop {
            let p = Pass {
                x: x.as_ptr().add(k0),
                ldx: k,
                k: KC.min(k - k0),
                n,
                y: y.as_mut_ptr(),
                first: k0 == 0,
            };
            let mut j0 = 0;
            if m == 1 {
                while j0 + 2 * NR <= n {
                    block::<1, 8>(
                        p.x,
                        k,
                        p.k,
                        rhs_at(b, k0, j0),
                        n,
                        p.y.add(j0),
                        FULL,
                        p.first,
                    );
                    j0 += 2 * NR;
                }
            }
            while j0 < n {
                let cols = (n - j0).min(NR);
                let (w, tail) = (rhs_at(b, k0, j0), tail_of(cols));
                match cols.div_ceil(16) {
                    4 => rows::<4>(&p, m, w, j0, tail),
                    3 => rows::<3>(&p, m, w, j0, tail),
                    2 => rows::<2>(&p, m, w, j0, tail),
                    _ => rows::<1>(&p, m, w, j0, tail),
                }
                j0 += cols;
            }
            k0 += p.k;
            if k0 >= k {
                break;
            }
        }
    }

    /// Two independent `1 × k` products, interleaved so that each chain hides
    /// the other's latency.
    #[target_feature(enable = "avx512f")]
    unsafe fn pair_block<const V: usize>(
        x: [*const f32; 2],
        k: usize,
        w: [W; 2],
        y: [*mut f32; 2],
        tail: __mmask16,
        first: bool,
    ) {
        let mut acc = [[_mm512_setzero_ps(); V]; 2];
        if !first {
            for d in 0..2 {
                for v in 0..V {
                    acc[d][v] = load::<V>(y[d].add(16 * v), v, tail);
                }
            }
        }
        for kk in 0..k {
            for d in 0..2 {
                let s = _mm512_set1_ps(*x[d].add(kk));
                for v in 0..V {
                    acc[d][v] = _mm512_fmadd_ps(s, load::<V>(w[d].at(kk, v), v, tail), acc[d][v]);
                }
            }
        }
        for d in 0..2 {
            for v in 0..V {
                store::<V>(y[d].add(16 * v), v, tail, acc[d][v]);
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn matvec_pair(x: [&[f32]; 2], b: [&Packed; 2], y: [&mut [f32]; 2]) {
        let (k, n) = (b[0].k, b[0].n);
        let yp = [y[0].as_mut_ptr(), y[1].as_mut_ptr()];
        let mut k0 = 0;
        loop {
            let kc = KC.min(k - k0);
            let xp = [x[0].as_ptr().add(k0), x[1].as_ptr().add(k0)];
            let first = k0 == 0;
            let mut j0 = 0;
            while j0 < n {
                let cols = (n - j0).min(NR);
                let w = [
                    rhs_at(Rhs::Packed(b[0]), k0, j0),
                    rhs_at(Rhs::Packed(b[1]), k0, j0),
                ];
                let (ys, tail) = ([yp[0].add(j0), yp[1].add(j0)], tail_of(cols));
                match cols.div_ceil(16) {
                    4 => pair_block::<4>(xp, kc, w, ys, tail, first),
                    3 => pair_block::<3>(xp, kc, w, ys, tail, first),
                    2 => pair_block::<2>(xp, kc, w, ys, tail, first),
                    _ => pair_block::<1>(xp, kc, w, ys, tail, first),
                }
                j0 += cols;
            }
            k0 += kc;
            if k0 >= k {
                break;
            }
        }
    }
}
