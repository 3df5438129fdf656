//! Convolution and transposed convolution via patch-gather + GEMM.
//!
//! A convolution relates an *image side* (C x H x W) to a *column side*
//! (M x Ho x Wo). Three primitives cover every pass of both layer types:
//!
//! * gather: `col = W * im2col(img)` (conv forward, deconv input-gradient)
//! * weight gradient: `dW = col * im2col(img)^T`
//! * scatter: `img += col2im(W^T * col)` (deconv forward, conv input-gradient)
//!
//! Column ranges are processed in chunks whose width depends only on the
//! layer geometry, and every output element is accumulated in a fixed order.

use rayon::prelude::*;

use super::{ConvSpec, Dims, Scalar, SharedMut, Tensor};
use crate::error::{Error, Result};

/// Target size (in elements) of one patch-matrix chunk.
pub const WORKSPACE_ELEMS: usize = 1 << 21;

/// Chunks whose GEMMs run concurrently before being scattered in order.
const SCATTER_GROUP: usize = 4;

/// Column-chunk width used for a patch matrix with `rows` rows.
pub fn conv_chunk_columns(rows: usize, cols: usize) -> usize {
    (WORKSPACE_ELEMS / rows.max(1)).max(64).min(cols).max(1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn image_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        let cols = self.cols();
        let step = conv_chunk_columns(self.rows(), cols);
        (0..cols)
            .step_by(step)
            .map(|start| (start, step.min(cols - start)))
            .collect()
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the image row.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.p {
            0
        } else {
            (self.p - kx).div_ceil(self.s)
        };
        let hi = if self.w + self.p > kx {
            ((self.w - 1 + self.p - kx) / self.s + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi)
    }
}

/// Visit the row segments `(oy, ox0, ox1, offset)` covering columns
/// `[start, start + len)`.
#[inline]
fn for_each_segment(ow: usize, start: usize, len: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let end = start + len;
    let mut col = start;
    while col < end {
        let oy = col / ow;
        let ox0 = col % ow;
        let ox1 = ow.min(ox0 + (end - col));
        f(oy, ox0, ox1, col - start);
        col += ox1 - ox0;
    }
}

/// Fill `cols` (rows x len) with the receptive fields of columns
/// `[start, start + len)`, zero outside the image.
fn im2col<T: Scalar>(g: &Geometry, img: &[T], start: usize, len: usize, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.s, g.p);
    let zero = T::zero();
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * len..(row + 1) * len];
                let (lo, hi) = g.valid_columns(kx);
                for_each_segment(g.ow, start, len, |oy, ox0, ox1, off| {
                    let seg = &mut dst[off..off + (ox1 - ox0)];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(zero);
                        return;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let a = lo.clamp(ox0, ox1);
                    let b = hi.clamp(ox0, ox1).max(a);
                    seg[..a - ox0].fill(zero);
                    seg[b - ox0..].fill(zero);
                    if a < b {
                        let ix0 = a * s + kx - p;
                        let inner = &mut seg[a - ox0..b - ox0];
                        if s == 1 {
                            inner.copy_from_slice(&src[ix0..ix0 + (b - a)]);
                        } else {
                            for (i, d) in inner.iter_mut().enumerate() {
                                *d = src[ix0 + i * s];
                            }
                        }
                    }
                });
            }
        }
    }
}

/// Accumulate the rows of channel `c` in `cols` back onto that channel's plane.
fn col2im_channel<T: Scalar>(
    g: &Geometry,
    c: usize,
    cols: &[T],
    start: usize,
    len: usize,
    plane: &mut [T],
) {
    let (k, s, p) = (g.k, g.s, g.p);
    for ky in 0..k {
        for kx in 0..k {
            let row = (c * k + ky) * k + kx;
            let src = &cols[row * len..(row + 1) * len];
            let (lo, hi) = g.valid_columns(kx);
            for_each_segment(g.ow, start, len, |oy, ox0, ox1, off| {
                let iy = (oy * s + ky) as isize - p as isize;
                if iy < 0 || iy >= g.h as isize {
                    return;
                }
                let a = lo.clamp(ox0, ox1);
                let b = hi.clamp(ox0, ox1);
                if a >= b {
                    return;
                }
                let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                let seg = &src[off + (a - ox0)..off + (b - ox0)];
                let ix0 = a * s + kx - p;
                if s == 1 {
                    for (d, &v) in dst[ix0..ix0 + (b - a)].iter_mut().zip(seg) {
                        *d += v;
                    }
                } else {
                    for (i, &v) in seg.iter().enumerate() {
                        dst[ix0 + i * s] += v;
                    }
                }
            });
        }
    }
}

/// `col[n] += wmat (m x rows) * im2col(img[n])` for every batch item.
fn gather_matmul<T: Scalar>(g: &Geometry, img: &[T], items: usize, wmat: &[T], m: usize, col: &mut [T]) {
    let rows = g.rows();
    let cols = g.cols();
    let img_len = g.image_len();
    debug_assert_eq!(wmat.len(), m * rows);
    debug_assert_eq!(col.len(), items * m * cols);
    let chunks = g.chunks();
    let tasks: Vec<(usize, usize, usize)> = (0..items)
        .flat_map(|n| chunks.iter().map(move |&(start, len)| (n, start, len)))
        .collect();
    let out = SharedMut(col.as_mut_ptr());
    tasks
        .par_iter()
        .for_each_init(Vec::new, |buf: &mut Vec<T>, &(n, start, len)| {
            buf.resize(rows * len, T::zero());
            im2col(g, &img[n * img_len..(n + 1) * img_len], start, len, buf);
            // SAFETY: each task writes columns [start, start + len) of item n
            // only; tasks never overlap and `col` outlives the parallel loop.
            unsafe {
                T::gemm(
                    m,
                    rows,
                    len,
                    T::one(),
                    wmat.as_ptr(),
                    rows as isize,
                    1,
                    buf.as_ptr(),
                    len as isize,
                    1,
                    T::one(),
                    out.get().add(n * m * cols + start),
                    cols as isize,
                    1,
                );
            }
        });
}

/// `gw (m x rows) = sum_n col[n] * im2col(img[n])^T`, summed in batch order.
fn weight_grad<T: Scalar>(g: &Geometry, img: &[T], items: usize, col: &[T], m: usize) -> Vec<T> {
    let rows = g.rows();
    let cols = g.cols();
    let img_len = g.image_len();
    let chunks = g.chunks();
    let partials: Vec<Vec<T>> = (0..items)
        .into_par_iter()
        .map(|n| {
            let mut acc = vec![T::zero(); m * rows];
            let mut buf = Vec::new();
            for &(start, len) in &chunks {
                buf.resize(rows * len, T::zero());
                im2col(g, &img[n * img_len..(n + 1) * img_len], start, len, &mut buf);
                // SAFETY: all operands are local, correctly sized buffers.
                unsafe {
                    T::gemm(
                        m,
                        len,
                        rows,
                        T::one(),
                        col.as_ptr().add(n * m * cols + start),
                        cols as isize,
                        1,
                        buf.as_ptr(),
                        1,
                        len as isize,
                        T::one(),
                        acc.as_mut_ptr(),
                        rows as isize,
                        1,
                    );
                }
            }
            acc
        })
        .collect();
    let mut partials = partials.into_iter();
    let mut total = partials.next().unwrap_or_else(|| vec![T::zero(); m * rows]);
    for p in partials {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

/// `img[n] += col2im(wmat^T * col[n])` for every batch item.
fn scatter_matmul<T: Scalar>(g: &Geometry, col: &[T], items: usize, wmat: &[T], m: usize, img: &mut [T]) {
    let rows = g.rows();
    let cols = g.cols();
    let img_len = g.image_len();
    let plane_len = g.h * g.w;
    debug_assert_eq!(img.len(), items * img_len);
    let chunks = g.chunks();
    img.par_chunks_mut(img_len).enumerate().for_each(|(n, out_item)| {
        let col_item = &col[n * m * cols..(n + 1) * m * cols];
        for group in chunks.chunks(SCATTER_GROUP) {
            let bufs: Vec<Vec<T>> = group
                .par_iter()
                .map(|&(start, len)| {
                    let mut buf = vec![T::zero(); rows * len];
                    // SAFETY: reads stay inside `wmat` and `col_item`; `buf`
                    // is a fresh rows x len buffer.
                    unsafe {
                        T::gemm(
                            rows,
                            m,
                            len,
                            T::one(),
                            wmat.as_ptr(),
                            1,
                            rows as isize,
                            col_item.as_ptr().add(start),
                            cols as isize,
                            1,
                            T::zero(),
                            buf.as_mut_ptr(),
                            len as isize,
                            1,
                        );
                    }
                    buf
                })
                .collect();
            out_item
                .par_chunks_mut(plane_len)
                .enumerate()
                .for_each(|(c, plane)| {
                    for (&(start, len), buf) in group.iter().zip(&bufs) {
                        col2im_channel(g, c, buf, start, len, plane);
                    }
                });
        }
    });
}

impl<T> SharedMut<T> {
    #[inline]
    fn get(&self) -> *mut T {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_operands<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    weight_dims: Dims,
    in_channels: usize,
) -> Result<()> {
    if input.dims().c != in_channels {
        return Err(Error::shape(op, "input channels", in_channels, input.dims().c));
    }
    weight.dims().expect(op, weight_dims)
}

fn conv_geometry(op: &'static str, input: Dims, spec: &ConvSpec) -> Result<Geometry> {
    let extent = |x: usize, axis: &str| {
        spec.conv_extent(x).ok_or_else(|| {
            Error::invalid(format!(
                "{op}: output {axis} would be empty (input {x}, kernel {}, pad {})",
                spec.kernel, spec.pad
            ))
        })
    };
    Ok(Geometry {
        channels: input.c,
        h: input.h,
        w: input.w,
        k: spec.kernel,
        s: spec.stride,
        p: spec.pad,
        oh: extent(input.h, "height")?,
        ow: extent(input.w, "width")?,
    })
}

fn deconv_geometry(op: &'static str, input: Dims, spec: &ConvSpec) -> Result<Geometry> {
    let extent = |x: usize, axis: &str| {
        spec.deconv_extent(x).ok_or_else(|| {
            Error::invalid(format!("{op}: output {axis} would be empty (input {x})"))
        })
    };
    Ok(Geometry {
        channels: spec.out_channels,
        h: extent(input.h, "height")?,
        w: extent(input.w, "width")?,
        k: spec.kernel,
        s: spec.stride,
        p: spec.pad,
        oh: input.h,
        ow: input.w,
    })
}

fn broadcast_bias<T: Scalar>(dims: Dims, bias: &[T]) -> Tensor<T> {
    let mut out = Tensor::zeros(dims);
    let plane = dims.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        chunk.fill(bias[i % dims.c]);
    }
    out
}

fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let d = t.dims();
    (0..d.c)
        .map(|c| (0..d.n).map(|n| t.plane(n, c).iter().copied().sum::<T>()).sum())
        .collect()
}

/// Cross-correlation with zero padding plus a per-channel bias.
///
/// `weight` is `(out, in, k, k)`; the output is
/// `(n, out, floor((h + 2p - k) / s) + 1, floor((w + 2p - k) / s) + 1)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands("conv2d", input, weight, spec.conv_weight_dims(), spec.in_channels)?;
    if bias.len() != spec.out_channels {
        return Err(Error::shape("conv2d", "bias length", spec.out_channels, bias.len()));
    }
    let d = input.dims();
    let g = conv_geometry("conv2d", d, spec)?;
    let mut out = broadcast_bias(Dims::new(d.n, spec.out_channels, g.oh, g.ow), bias);
    gather_matmul(&g, input.data(), d.n, weight.data(), spec.out_channels, out.data_mut());
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_operands("conv2d_backward", input, weight, spec.conv_weight_dims(), spec.in_channels)?;
    let d = input.dims();
    let g = conv_geometry("conv2d_backward", d, spec)?;
    grad_out
        .dims()
        .expect("conv2d_backward grad_out", Dims::new(d.n, spec.out_channels, g.oh, g.ow))?;
    let m = spec.out_channels;
    let gw = weight_grad(&g, input.data(), d.n, grad_out.data(), m);
    let mut gx = Tensor::zeros(d);
    scatter_matmul(&g, grad_out.data(), d.n, weight.data(), m, gx.data_mut());
    Ok(ConvGrads {
        input: gx,
        weight: Tensor::from_vec(weight.dims(), gw)?,
        bias: channel_sums(grad_out),
    })
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same weight.
///
/// `weight` is `(in, out, k, k)`. Output extents are `s * x + k - 2p - 1`,
/// which for `k = 3, s = 2, p = 1` is exactly twice the input.
pub fn deconv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands("deconv2d", input, weight, spec.deconv_weight_dims(), spec.in_channels)?;
    if bias.len() != spec.out_channels {
        return Err(Error::shape("deconv2d", "bias length", spec.out_channels, bias.len()));
    }
    let d = input.dims();
    let g = deconv_geometry("deconv2d", d, spec)?;
    let mut out = broadcast_bias(Dims::new(d.n, spec.out_channels, g.h, g.w), bias);
    scatter_matmul(&g, input.data(), d.n, weight.data(), spec.in_channels, out.data_mut());
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_operands("deconv2d_backward", input, weight, spec.deconv_weight_dims(), spec.in_channels)?;
    let d = input.dims();
    let g = deconv_geometry("deconv2d_backward", d, spec)?;
    grad_out
        .dims()
        .expect("deconv2d_backward grad_out", Dims::new(d.n, spec.out_channels, g.h, g.w))?;
    let m = spec.in_channels;
    let mut gx = Tensor::zeros(d);
    gather_matmul(&g, grad_out.data(), d.n, weight.data(), m, gx.data_mut());
    let gw = weight_grad(&g, grad_out.data(), d.n, input.data(), m);
    Ok(ConvGrads {
        input: gx,
        weight: Tensor::from_vec(weight.dims(), gw)?,
        bias: channel_sums(grad_out),
    })
}
