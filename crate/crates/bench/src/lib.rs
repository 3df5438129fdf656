//! Fixtures shared by the benchmarks.

use pffnet::{ConvSpec, Dims, PFFNetConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random(dims: Dims, seed: u64) -> Tensor<f32> {
    Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Input, weight and bias for a convolution layer on `n x c x h x w` input.
pub fn conv_case(spec: &ConvSpec, n: usize, side: usize) -> (Tensor<f32>, Tensor<f32>, Vec<f32>) {
    let x = random(Dims::new(n, spec.in_channels, side, side), 1);
    let w = random(spec.conv_weight_dims(), 2);
    (x, w, vec![0.1; spec.out_channels])
}

pub fn model(config: &PFFNetConfig) -> ParamStore<f32> {
    ParamStore::init(config, 0).expect("valid config")
}
