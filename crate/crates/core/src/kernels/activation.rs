//! Elementwise nonlinearities.
//!
//! `exp` uses a Cephes-style range reduction with a degree-5 polynomial. The
//! scalar and AVX-512 forms perform the same fused operations in the same
//! order, so slice results do not depend on length or alignment.

const LOG2E: f32 = std::f32::consts::LOG2_E;
const LN2_HI: f32 = 0.693_359_4;
const LN2_LO: f32 = -2.121_944_4e-4;
const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
const EXP_P: [f32; 6] = [
    1.987_569_2e-4,
    1.398_199_9e-3,
    8.333_452e-3,
    4.166_579_6e-2,
    1.666_666_5e-1,
    5.000_000_1e-1,
];
const TANH_P: [f32; 5] = [
    -5.704_988_7e-3,
    2.063_908_9e-2,
    -5.373_971_6e-2,
    1.333_144_2e-1,
    -3.333_328_2e-1,
];
const TANH_SMALL: f32 = 0.625;

#[inline(always)]
fn exp_fast(x: f32) -> f32 {
    let x = x.max(-87.3).min(88.3);
    // round-to-nearest: the integer lands in the low mantissa bits
    let t = x.mul_add(LOG2E, ROUND);
    let n = t - ROUND;
    let ni = (t.to_bits() as i32).wrapping_sub(ROUND.to_bits() as i32);
    let r = (-n).mul_add(LN2_HI, x);
    let r = (-n).mul_add(LN2_LO, r);
    let mut p = EXP_P[0];
    for &c in &EXP_P[1..] {
        p = p.mul_add(r, c);
    }
    let y = p.mul_add(r * r, r) + 1.0;
    y * f32::from_bits((ni.wrapping_add(127) as u32) << 23)
}

#[inline(always)]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + exp_fast(-x))
}

#[inline(always)]
pub fn tanh(x: f32) -> f32 {
    let a = x.abs();
    let z = x * x;
    let mut p = TANH_P[0];
    for &c in &TANH_P[1..] {
        p = p.mul_add(z, c);
    }
    let small = (p * z).mul_add(x, x);
    let e = exp_fast(a + a);
    let big = (1.0 - 2.0 / (e + 1.0)).copysign(x);
    if a < TANH_SMALL {
        small
    } else {
        big
    }
}

#[inline(always)]
pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

pub fn sigmoid_inplace(xs: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: feature checked above.
        let done = unsafe { avx512::sigmoid(xs) };
        return xs[done..].iter_mut().for_each(|x| *x = sigmoid(*x));
    }
    xs.iter_mut().for_each(|x| *x = sigmoid(*x));
}

pub fn tanh_inplace(xs: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: feature checked above.
        let done = unsafe { avx512::tanh(xs) };
        return xs[done..].iter_mut().for_each(|x| *x = tanh(*x));
    }
    xs.iter_mut().for_each(|x| *x = tanh(*x));
}

pub fn relu_inplace(xs: &mut [f32]) {
    for x in xs {
        *x = relu(*x);
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::*;
    use std::arch::x86_64::*;

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn exp(x: __m512) -> __m512 {
        let x = _mm512_min_ps(
            _mm512_max_ps(x, _mm512_set1_ps(-87.3)),
            _mm512_set1_ps(88.3),
        );
        let round = _mm512_set1_ps(ROUND);
        let t = _mm512_fmadd_ps(x, _mm512_set1_ps(LOG2E), round);
        let n = _mm512_sub_ps(t, round);
        let ni = _mm512_sub_epi32(_mm512_castps_si512(t), _mm512_castps_si512(round));
        let r = _mm512_fnmadd_ps(n, _mm512_set1_ps(LN2_HI), x);
        let r = _mm512_fnmadd_ps(n, _mm512_set1_ps(LN2_LO), r);
        let mut p = _mm512_set1_ps(EXP_P[0]);
        for &c in &EXP_P[1..] {
            p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(c));
        }
        let y = _mm512_add_ps(
            _mm512_fmadd_ps(p, _mm512_mul_ps(r, r), r),
            _mm512_set1_ps(1.0),
        );
        let bias = _mm512_add_epi32(ni, _mm512_set1_epi32(127));
        _mm512_mul_ps(y, _mm512_castsi512_ps(_mm512_slli_epi32::<23>(bias)))
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn sigmoid16(x: __m512) -> __m512 {
        let one = _mm512_set1_ps(1.0);
        let e = exp(_mm512_sub_ps(_mm512_setzero_ps(), x));
        _mm512_div_ps(one, _mm512_add_ps(one, e))
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn tanh16(x: __m512) -> __m512 {
        let sign = _mm512_set1_epi32(i32::MIN);
        let xi = _mm512_castps_si512(x);
        let a = _mm512_castsi512_ps(_mm512_andnot_si512(sign, xi));
        let z = _mm512_mul_ps(x, x);
        let mut p = _mm512_set1_ps(TANH_P[0]);
        for &c in &TANH_P[1..] {
            p = _mm512_fmadd_ps(p, z, _mm512_set1_ps(c));
        }
        let small = _mm512_fmadd_ps(_mm512_mul_ps(p, z), x, x);
        let e = exp(_mm512_add_ps(a, a));
        let one = _mm512_set1_ps(1.0);
        let q = _mm512_sub_ps(
            one,
            _mm512_div_ps(_mm512_set1_ps(2.0), _mm512_add_ps(e, one)),
        );
        let big = _mm512_castsi512_ps(_mm512_or_si512(
            _mm512_andnot_si512(sign, _mm512_castps_si512(q)),
            _mm512_and_si512(sign, xi),
        ));
        let is_small = _mm512_cmp_ps_mask::<_CMP_LT_OQ>(a, _mm512_set1_ps(TANH_SMALL));
        _mm512_mask_blend_ps(is_small, big, small)
    }

    /// Returns the number of leading elements processed.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn sigmoid(xs: &mut [f32]) -> usize {
        let n = xs.len() / 16 * 16;
        let p = xs.as_mut_ptr();
        for i in (0..n).step_by(16) {
            _mm512_storeu_ps(p.add(i), sigmoid16(_mm512_loadu_ps(p.add(i))));
        }
        n
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn tanh(xs: &mut [f32]) -> usize {
        let n = xs.len() / 16 * 16;
        let p = xs.as_mut_ptr();
        for i in (0..n).step_by(16) {
            _mm512_storeu_ps(p.add(i), tanh16(_mm512_loadu_ps(p.add(i))));
        }
        n
    }
}
