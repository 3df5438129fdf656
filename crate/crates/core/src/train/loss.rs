use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Mean squared error and its gradient `2 (prediction - target) / N`.
///
/// The loss is accumulated in 64-bit regardless of `T`.
pub fn mse_loss<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    prediction.dims().expect("mse_loss", target.dims())?;
    let n = prediction.len().max(1);
    let scale = T::of(2.0 / n as f64);
    let mut sum = 0.0f64;
    let grad: Vec<T> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((sum / n as f64, Tensor::from_vec(prediction.dims(), grad)?))
}
