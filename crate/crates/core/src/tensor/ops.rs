use super::{Scalar, Tensor};
use crate::error::Result;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    t.map_inplace(|v| v.max(T::zero()));
}

/// Pass `grad_out` where `input > 0`; the gradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.dims().expect("relu_backward", input.dims())?;
    let mut g = grad_out.clone();
    relu_mask_inplace(&mut g, input)?;
    Ok(g)
}

/// Zero `grad` wherever `gate <= 0`. `gate` may be the pre- or
/// post-activation value since both share the same sign pattern.
pub fn relu_mask_inplace<T: Scalar>(grad: &mut Tensor<T>, gate: &Tensor<T>) -> Result<()> {
    gate.dims().expect("relu_mask", grad.dims())?;
    for (g, &x) in grad.data_mut().iter_mut().zip(gate.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(())
}

/// Elementwise sum of two tensors with identical extents (no broadcasting).
pub fn add_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.dims().expect("add_channels", a.dims())?;
    let mut out = a.clone();
    add_assign(&mut out, b)?;
    Ok(out)
}

pub fn add_assign<T: Scalar>(acc: &mut Tensor<T>, other: &Tensor<T>) -> Result<()> {
    other.dims().expect("add_channels", acc.dims())?;
    acc.data_mut()
        .iter_mut()
        .zip(other.data())
        .for_each(|(a, &b)| *a += b);
    Ok(())
}
