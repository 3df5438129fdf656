use crate::error::Result;
use crate::tensor::{add_assign, conv2d, conv2d_backward, relu_inplace, relu_mask_inplace, ConvSpec, Scalar, Tensor};

/// Weights of one `conv3x3 -> ReLU -> conv3x3` residual block.
#[derive(Clone, Copy)]
pub struct BlockWeights<'a, T> {
    pub w1: &'a Tensor<T>,
    pub b1: &'a [T],
    pub w2: &'a Tensor<T>,
    pub b2: &'a [T],
}

#[derive(Clone, Debug)]
pub struct BlockGrads<T> {
    pub input: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Vec<T>,
    pub w2: Tensor<T>,
    pub b2: Vec<T>,
}

/// Returns the block output `x + conv2(relu(conv1(x)))` and the hidden
/// activation `relu(conv1(x))` needed for the backward pass.
pub fn residual_block<T: Scalar>(
    x: &Tensor<T>,
    w: BlockWeights<'_, T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut hidden = conv2d(x, w.w1, w.b1, spec)?;
    relu_inplace(&mut hidden);
    let mut out = conv2d(&hidden, w.w2, w.b2, spec)?;
    add_assign(&mut out, x)?;
    Ok((out, hidden))
}

pub fn residual_block_backward<T: Scalar>(
    x: &Tensor<T>,
    hidden: &Tensor<T>,
    w: BlockWeights<'_, T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<BlockGrads<T>> {
    let g2 = conv2d_backward(hidden, w.w2, spec, grad_out)?;
    let mut g_hidden = g2.input;
    relu_mask_inplace(&mut g_hidden, hidden)?;
    let g1 = conv2d_backward(x, w.w1, spec, &g_hidden)?;
    let mut g_in = g1.input;
    add_assign(&mut g_in, grad_out)?;
    Ok(BlockGrads {
        input: g_in,
        w1: g1.weight,
        b1: g1.bias,
        w2: g2.weight,
        b2: g2.bias,
    })
}
