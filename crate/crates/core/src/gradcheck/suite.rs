//! Randomised finite-difference checks of every differentiable operation
//! and of whole networks, all in 64-bit.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, grad_check_piecewise, GradCheckReport};
use crate::error::Result;
use crate::model::{
    backward, forward, residual_block, residual_block_backward, BlockWeights, PFFNetConfig,
    ParamStore,
};
use crate::tensor::{
    add_channels, conv2d, conv2d_backward, deconv2d, deconv2d_backward, relu, relu_backward, ConvSpec, Dims,
    Tensor,
};
use crate::train::mse_loss;

/// Tolerance on the relative error for every check in the suite.
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Outcome of one operation over all seeds.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub seeds: usize,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

fn random_dims<R: Rng>(rng: &mut R, c: usize, min_side: usize) -> Dims {
    let lo = min_side.clamp(1, 8);
    Dims::new(rng.random_range(1..=3), c, rng.random_range(lo..=8), rng.random_range(lo..=8))
}

/// Random geometry with every extent in `[1, 8]`.
fn random_spec<R: Rng>(rng: &mut R) -> ConvSpec {
    let kernel = [1, 3, 5][rng.random_range(0..3)];
    let pad = rng.random_range(0..=(kernel - 1) / 2);
    ConvSpec::new(
        kernel,
        rng.random_range(1..=2),
        pad,
        rng.random_range(1..=8),
        rng.random_range(1..=8),
    )
    .expect("valid by construction")
}

fn randn(dims: Dims, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(dims, 1.0, rng)
}

/// Check `x -> <op(x), probe>` where `grad` is the claimed gradient.
fn linear_probe_check(
    x: &Tensor<f64>,
    grad: &[f64],
    mut op: impl FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
    probe: &Tensor<f64>,
) -> Result<GradCheckReport> {
    let dims = x.dims();
    grad_check(x.data(), grad, None, SUITE_TOLERANCE, |v| {
        op(&Tensor::from_vec(dims, v.to_vec())?)?.dot(probe)
    })
}

pub fn check_conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 1);
    let spec = random_spec(&mut rng);
    let x = randn(random_dims(&mut rng, spec.in_channels, spec.kernel - 2 * spec.pad), &mut rng);
    let w = randn(spec.conv_weight_dims(), &mut rng);
    let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = conv2d(&x, &w, &b, &spec)?;
    let probe = randn(out.dims(), &mut rng);
    let g = conv2d_backward(&x, &w, &spec, &probe)?;
    let bias = Tensor::from_vec(Dims::new(1, 1, 1, b.len()), b.clone())?;

    let rx = linear_probe_check(&x, g.input.data(), |x| conv2d(x, &w, &b, &spec), &probe)?;
    let rw = linear_probe_check(&w, g.weight.data(), |w| conv2d(&x, w, &b, &spec), &probe)?;
    let rb = linear_probe_check(&bias, &g.bias, |b| conv2d(&x, &w, b.data(), &spec), &probe)?;
    Ok(rx.merge(&rw).merge(&rb))
}

pub fn check_deconv2d(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 2);
    let spec = random_spec(&mut rng);
    let x = randn(random_dims(&mut rng, spec.in_channels, 1), &mut rng);
    let w = randn(spec.deconv_weight_dims(), &mut rng);
    let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = deconv2d(&x, &w, &b, &spec)?;
    let probe = randn(out.dims(), &mut rng);
    let g = deconv2d_backward(&x, &w, &spec, &probe)?;
    let bias = Tensor::from_vec(Dims::new(1, 1, 1, b.len()), b.clone())?;

    let rx = linear_probe_check(&x, g.input.data(), |x| deconv2d(x, &w, &b, &spec), &probe)?;
    let rw = linear_probe_check(&w, g.weight.data(), |w| deconv2d(&x, w, &b, &spec), &probe)?;
    let rb = linear_probe_check(&bias, &g.bias, |b| deconv2d(&x, &w, b.data(), &spec), &probe)?;
    Ok(rx.merge(&rw).merge(&rb))
}

fn sign_signature(t: &Tensor<f64>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in t.data() {
        (*v > 0.0).hash(&mut h);
    }
    h.finish()
}

pub fn check_relu(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 3);
    let c = rng.random_range(1..=8);
    let dims = random_dims(&mut rng, c, 1);
    let x = randn(dims, &mut rng);
    let probe = randn(dims, &mut rng);
    let g = relu_backward(&x, &probe)?;
    grad_check_piecewise(x.data(), g.data(), None, SUITE_TOLERANCE, |v| {
        let x = Tensor::from_vec(dims, v.to_vec())?;
        Ok((relu(&x).dot(&probe)?, sign_signature(&x)))
    })
}

pub fn check_add(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 4);
    let c = rng.random_range(1..=8);
    let dims = random_dims(&mut rng, c, 1);
    let (a, b) = (randn(dims, &mut rng), randn(dims, &mut rng));
    let probe = randn(dims, &mut rng);
    // d<a + b, p>/da = d<a + b, p>/db = p
    let ra = linear_probe_check(&a, probe.data(), |a| add_channels(a, &b), &probe)?;
    let rb = linear_probe_check(&b, probe.data(), |b| add_channels(&a, b), &probe)?;
    Ok(ra.merge(&rb))
}

pub fn check_mse(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 5);
    let c = rng.random_range(1..=8);
    let dims = random_dims(&mut rng, c, 1);
    let (pred, target) = (randn(dims, &mut rng), randn(dims, &mut rng));
    let (_, g) = mse_loss(&pred, &target)?;
    grad_check(pred.data(), g.data(), None, SUITE_TOLERANCE, |v| {
        Ok(mse_loss(&Tensor::from_vec(dims, v.to_vec())?, &target)?.0)
    })
}

pub fn check_residual_block(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 6);
    let c = rng.random_range(1..=8);
    let spec = ConvSpec::same(3, c, c)?;
    let x = randn(random_dims(&mut rng, c, 1), &mut rng);
    let std = (2.0 / (9 * c) as f64).sqrt();
    let mut params: Vec<Tensor<f64>> = vec![
        Tensor::randn(spec.conv_weight_dims(), std, &mut rng),
        Tensor::randn(Dims::new(1, 1, 1, c), 0.1, &mut rng),
        Tensor::randn(spec.conv_weight_dims(), std, &mut rng),
        Tensor::randn(Dims::new(1, 1, 1, c), 0.1, &mut rng),
    ];
    params.insert(0, x);
    let probe = randn(params[0].dims(), &mut rng);

    let run = |p: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let w = BlockWeights { w1: &p[1], b1: p[2].data(), w2: &p[3], b2: p[4].data() };
        let (out, hidden) = residual_block(&p[0], w, &spec)?;
        Ok((out.dot(&probe)?, sign_signature(&hidden)))
    };
    let (_, hidden) = residual_block(
        &params[0],
        BlockWeights { w1: &params[1], b1: params[2].data(), w2: &params[3], b2: params[4].data() },
        &spec,
    )?;
    let g = residual_block_backward(
        &params[0],
        &hidden,
        BlockWeights { w1: &params[1], b1: params[2].data(), w2: &params[3], b2: params[4].data() },
        &spec,
        &probe,
    )?;
    let grads: [&[f64]; 5] = [g.input.data(), g.w1.data(), &g.b1, g.w2.data(), &g.b2];

    let mut total: Option<GradCheckReport> = None;
    for (i, grad) in grads.iter().enumerate() {
        let dims = params[i].dims();
        let base = params.clone();
        let r = grad_check_piecewise(params[i].data(), grad, None, SUITE_TOLERANCE, |v| {
            let mut p = base.clone();
            p[i] = Tensor::from_vec(dims, v.to_vec())?;
            run(&p)
        })?;
        total = Some(match total {
            Some(t) => t.merge(&r),
            None => r,
        });
    }
    Ok(total.expect("five operands"))
}

/// Spot-check `samples` random parameter coordinates of a whole network
/// plus one coordinate of every tensor. The objective is `<forward(x), r>`
/// for a random image `x` and random probe `r`.
pub fn check_network(config: &PFFNetConfig, side: usize, samples: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 7);
    let mut params: ParamStore<f64> = ParamStore::<f32>::init(config, seed)?.cast();
    // nonzero biases so that bias gradients are exercised away from zero
    for (key, t) in params.iter_mut() {
        if key.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.05..0.05);
            }
        }
    }
    let dims = Dims::new(1, config.image_channels, side, side);
    let x = Tensor::uniform(dims, 0.0, 1.0, &mut rng);
    let (out, trace) = forward(&x, &params, config)?;
    let probe = randn(out.dims(), &mut rng);
    let grads = backward(&trace, &probe, &params, config)?;

    // (key, flat index) for every sampled coordinate
    let keys: Vec<String> = params.keys().cloned().collect();
    let sizes: Vec<usize> = keys.iter().map(|k| params.get(k).map(|t| t.len())).collect::<Result<_>>()?;
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| (k, rng.random_range(0..n)))
        .collect();
    for flat in sample(&mut rng, total, samples.min(total)) {
        let (mut k, mut i) = (0, flat);
        while i >= sizes[k] {
            i -= sizes[k];
            k += 1;
        }
        coords.push((k, i));
    }
    coords.sort_unstable();
    coords.dedup();

    let values: Vec<f64> = coords.iter().map(|&(k, i)| params.get(&keys[k]).map(|t| t.data()[i])).collect::<Result<_>>()?;
    let analytic: Vec<f64> = coords.iter().map(|&(k, i)| grads.get(&keys[k]).map(|t| t.data()[i])).collect::<Result<_>>()?;
    grad_check_piecewise(&values, &analytic, None, SUITE_TOLERANCE, |v| {
        for (&(k, i), &value) in coords.iter().zip(v) {
            params.get_mut(&keys[k])?.data_mut()[i] = value;
        }
        let (out, trace) = forward(&x, &params, config)?;
        Ok((out.dot(&probe)?, trace.activation_signature()))
    })
}

/// Run every check over `seeds` seeds. The network check uses the tiny
/// profile on a 16x16 image.
pub fn run_suite(seeds: usize, network_samples: usize) -> Result<Vec<OpCheck>> {
    type Check = fn(u64) -> Result<GradCheckReport>;
    let tiny = PFFNetConfig::tiny();
    let network: Box<dyn Fn(u64) -> Result<GradCheckReport>> =
        Box::new(move |s| check_network(&tiny, 16, network_samples, s));
    let mut checks: Vec<(&'static str, Box<dyn Fn(u64) -> Result<GradCheckReport>>)> = vec![
        ("conv2d", Box::new(check_conv2d as Check)),
        ("deconv2d", Box::new(check_deconv2d as Check)),
        ("relu", Box::new(check_relu as Check)),
        ("channel_add", Box::new(check_add as Check)),
        ("mse_loss", Box::new(check_mse as Check)),
        ("residual_block", Box::new(check_residual_block as Check)),
    ];
    checks.push(("tiny_network", network));
    checks
        .into_iter()
        .map(|(op, check)| {
            let mut report: Option<GradCheckReport> = None;
            for seed in 0..seeds as u64 {
                let r = check(seed)?;
                report = Some(match report {
                    Some(acc) => acc.merge(&r),
                    None => r,
                });
            }
            Ok(OpCheck {
                op,
                seeds,
                report: report.unwrap_or_else(|| GradCheckReport::empty(SUITE_TOLERANCE)),
            })
        })
        .collect()
}
