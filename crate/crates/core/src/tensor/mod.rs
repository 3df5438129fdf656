//! Dense 4-D tensors in (n, c, h, w) row-major layout and the handful of
//! differentiable kernels the network is built from.
//!
//! Every kernel here is a pure function of its inputs. Work is split into
//! fixed-size pieces that never depend on the thread count, so results are
//! bitwise identical however many threads rayon runs.

mod conv;
mod ops;
pub mod reference;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use conv::{
    conv2d, conv2d_backward, conv_chunk_columns, deconv2d, deconv2d_backward, ConvGrads,
    WORKSPACE_ELEMS,
};
pub use ops::{add_assign, add_channels, relu, relu_backward, relu_inplace, relu_mask_inplace};

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    Float + NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    const BYTES: usize;

    /// `C <- alpha * A * B + beta * C` for an `m x k` by `k x n` product with
    /// arbitrary element strides.
    ///
    /// # Safety
    /// All three pointers must be valid for every element addressed by the
    /// given dimensions and strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Tensor extents in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one (h, w) plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Compare against `other`, naming the first axis that differs.
    pub(crate) fn expect(&self, op: &'static str, other: Dims) -> Result<()> {
        let names = ["n", "c", "h", "w"];
        for ((name, want), got) in names.iter().zip(other.as_array()).zip(self.as_array()) {
            if want != got {
                return Err(Error::shape(op, *name, want, got));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape("tensor", "data length", dims.len(), data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(dims: Dims, std: f64, rng: &mut R) -> Self {
        let data = (0..dims.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Tensor { dims, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(dims: Dims, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..dims.len())
            .map(|_| T::of(rng.random_range(lo..hi)))
            .collect();
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous data of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.dims.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.dims.plane();
        let start = (n * self.dims.c + c) * len;
        &self.data[start..start + len]
    }

    /// Same data under new extents of equal element count.
    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        other.dims.expect("dot", self.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        other.dims.expect("max_abs_diff", self.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Copy out batch item `n` as a single-item tensor.
    pub fn select(&self, n: usize) -> Self {
        Tensor {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.item(n).to_vec(),
        }
    }

    /// Concatenate single-item tensors of equal extents along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::invalid("stack: no tensors"));
        };
        let d = first.dims;
        let mut data = Vec::with_capacity(d.len() * items.len());
        for t in items {
            t.dims.expect("stack", d)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            dims: Dims::new(d.n * items.len(), d.c, d.h, d.w),
            data,
        })
    }
}

/// Geometry of one convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel must be odd and positive, got {kernel}")));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(ConvSpec {
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
        })
    }

    /// Stride 1 with pad `(k - 1) / 2`: spatial extents are preserved.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(kernel, 1, kernel.saturating_sub(1) / 2, in_channels, out_channels)
    }

    /// 3x3, stride 2, pad 1. Halves (rounding up) on convolution, doubles on
    /// transposed convolution.
    pub fn resample(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(3, 2, 1, in_channels, out_channels)
    }

    /// `floor((x + 2p - k) / s) + 1`, or `None` when that would be empty.
    pub fn conv_extent(&self, x: usize) -> Option<usize> {
        let span = (x + 2 * self.pad).checked_sub(self.kernel)?;
        Some(span / self.stride + 1)
    }

    /// Transposed extent `s * x + k - 2p - 1`: the largest input whose
    /// convolution has extent `x`, exactly `s * x` when `k = 2p + 1`.
    pub fn deconv_extent(&self, x: usize) -> Option<usize> {
        if x == 0 {
            return None;
        }
        let out = (self.stride * x + self.kernel).checked_sub(2 * self.pad + 1)?;
        (out > 0).then_some(out)
    }

    pub fn conv_weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn deconv_weight_dims(&self) -> Dims {
        Dims::new(self.in_channels, self.out_channels, self.kernel, self.kernel)
    }
}

/// Raw pointer that may be shared across rayon tasks writing disjoint regions.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut<T>(pub *mut T);

unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}
