//! Direct nested-loop convolutions. Slow, obviously correct, and sharing no
//! code with the GEMM path, so they serve as oracles in tests and benchmarks.

use super::{ConvSpec, Dims, Scalar, Tensor};

pub fn conv2d_naive<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T], spec: &ConvSpec) -> Tensor<T> {
    let d = input.dims();
    let oh = spec.conv_extent(d.h).expect("empty output");
    let ow = spec.conv_extent(d.w).expect("empty output");
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, spec.pad as isize);
    let mut out = Tensor::zeros(Dims::new(d.n, spec.out_channels, oh, ow));
    for n in 0..d.n {
        for co in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..spec.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize * s + ky - p;
                                let ix = ox as isize * s + kx - p;
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                acc += input.at(n, ci, iy as usize, ix as usize)
                                    * weight.at(co, ci, ky as usize, kx as usize);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution by scattering each input element through the kernel.
pub fn deconv2d_naive<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T], spec: &ConvSpec) -> Tensor<T> {
    let d = input.dims();
    let oh = spec.deconv_extent(d.h).expect("empty output");
    let ow = spec.deconv_extent(d.w).expect("empty output");
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, spec.pad as isize);
    let mut out = Tensor::from_fn(Dims::new(d.n, spec.out_channels, oh, ow), |_, c, _, _| bias[c]);
    for n in 0..d.n {
        for ci in 0..spec.in_channels {
            for iy in 0..d.h as isize {
                for ix in 0..d.w as isize {
                    let v = input.at(n, ci, iy as usize, ix as usize);
                    for co in 0..spec.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = iy * s + ky - p;
                                let ox = ix * s + kx - p;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let (oy, ox) = (oy as usize, ox as usize);
                                let cur = out.at(n, co, oy, ox);
                                out.set(n, co, oy, ox, cur + v * weight.at(ci, co, ky as usize, kx as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
