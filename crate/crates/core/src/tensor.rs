//! Dense row-major `f32` tensors and the operation counter every kernel reports to.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use crate::error::{shape_err, Result};

/// A dense row-major tensor of 32-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return shape_err(format!("zero extent in dims {dims:?}"));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "dims {dims:?} need {numel} values, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        let numel = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Extent of the innermost axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    /// Number of innermost rows, i.e. `numel / last_dim`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn get(&self, index: &[usize]) -> Option<f32> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data[..8]", &preview)
            .finish()
    }
}

/// Running totals of arithmetic performed by the kernels.
///
/// `macs` counts fused multiply-accumulates, `adds` every other elementwise
/// arithmetic op (bias adds, residual sums, gating products), and `nonlins`
/// transcendental or piecewise evaluations (sigmoid, tanh, relu, rsqrt).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct OpCounter {
    pub macs: u64,
    pub adds: u64,
    pub nonlins: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// FLOPs counting only the multiply-accumulates (2 per MAC).
    pub fn mac_flops(&self) -> u64 {
        2 * self.macs
    }

    /// FLOPs including elementwise and nonlinear work.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.adds + self.nonlins
    }

    #[inline]
    pub(crate) fn count_mac(&mut self, n: usize) {
        self.macs += n as u64;
    }

    #[inline]
    pub(crate) fn count_add(&mut self, n: usize) {
        self.adds += n as u64;
    }

    #[inline]
    pub(crate) fn count_nonlin(&mut self, n: usize) {
        self.nonlins += n as u64;
    }
}

impl Add for OpCounter {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            macs: self.macs + rhs.macs,
            adds: self.adds + rhs.adds,
            nonlins: self.nonlins + rhs.nonlins,
        }
    }
}

impl AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for OpCounter {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            macs: self.macs - rhs.macs,
            adds: self.adds - rhs.adds,
            nonlins: self.nonlins - rhs.nonlins,
        }
    }
}

impl Mul<u64> for OpCounter {
    type Output = Self;
    fn mul(self, k: u64) -> Self {
        Self {
            macs: self.macs * k,
            adds: self.adds * k,
            nonlins: self.nonlins * k,
        }
    }
}
