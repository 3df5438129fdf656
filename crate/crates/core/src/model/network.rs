//! Encoder, residual transformation and fusing decoder.
//!
//! ```text
//! D_0 = relu(conv_11x11(I))
//! D_i = relu(conv_3x3/2(D_{i-1}))                 i = 1..L
//! U_L = D_L + blocks(D_L)
//! F_{j-1} = deconv_3x3/2(relu(U_j))               j = L..1
//! U_{j-1} = D_{j-1} + F_{j-1}   (F_{j-1} without skips)
//! J = conv_3x3(relu(U_0))
//! ```

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::block::{residual_block, residual_block_backward, BlockWeights};
use super::params::block_name;
use super::{PFFNetConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{
    add_assign, conv2d, conv2d_backward, deconv2d, deconv2d_backward, relu, relu_inplace,
    relu_mask_inplace, Dims, Scalar, Tensor,
};

/// Activations retained by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    config: PFFNetConfig,
    store_id: u64,
    generation: u64,
    input: Tensor<T>,
    /// `D_0 ..= D_L`.
    encoder: Vec<Tensor<T>>,
    /// `(input, relu(conv1(input)))` per residual block.
    blocks: Vec<(Tensor<T>, Tensor<T>)>,
    /// `U_0 ..= U_L`.
    fused: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn skip(&self, level: usize) -> &Tensor<T> {
        &self.encoder[level]
    }

    pub fn skips(&self) -> &[Tensor<T>] {
        &self.encoder
    }

    pub fn fused(&self, level: usize) -> &Tensor<T> {
        &self.fused[level]
    }

    pub fn bottleneck(&self) -> &Tensor<T> {
        &self.fused[self.config.encoder_levels]
    }

    /// Hash of every ReLU gate's sign. Two inputs with equal signatures lie
    /// in the same linear region of the network.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let gates = self
            .encoder
            .iter()
            .chain(self.blocks.iter().map(|(_, hidden)| hidden))
            .chain(self.fused.iter());
        for t in gates {
            let mut word = 0u64;
            for (i, v) in t.data().iter().enumerate() {
                word = (word << 1) | (*v > T::zero()) as u64;
                if i % 64 == 63 {
                    h.write_u64(word);
                    word = 0;
                }
            }
            h.write_u64(word);
        }
        h.finish()
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, config: &PFFNetConfig) -> Result<()> {
    config.validate()?;
    let d = input.dims();
    if d.c != config.image_channels {
        return Err(Error::shape("forward", "input channels", config.image_channels, d.c));
    }
    let m = config.size_multiple();
    if !d.h.is_multiple_of(m) || !d.w.is_multiple_of(m) || d.h == 0 || d.w == 0 {
        return Err(Error::invalid(format!(
            "input {}x{} is not a multiple of {m}; pad it first (inference::pad_to_multiple)",
            d.h, d.w
        )));
    }
    Ok(())
}

fn encoder_layer<T: Scalar>(
    x: &Tensor<T>,
    level: usize,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<Tensor<T>> {
    let spec = if level == 0 {
        config.stem_spec()
    } else {
        config.down_spec(level)
    };
    let (w, b) = params.layer(&format!("enc.{level}"))?;
    let mut d = conv2d(x, w, b, &spec)?;
    relu_inplace(&mut d);
    Ok(d)
}

fn block_weights<'a, T: Scalar>(params: &'a ParamStore<T>, index: usize) -> Result<BlockWeights<'a, T>> {
    let (w1, b1) = params.layer(&block_name(index, 1))?;
    let (w2, b2) = params.layer(&block_name(index, 2))?;
    Ok(BlockWeights { w1, b1, w2, b2 })
}

fn upsample<T: Scalar>(
    u: &Tensor<T>,
    level: usize,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<Tensor<T>> {
    let (w, b) = params.layer(&format!("dec.{level}"))?;
    deconv2d(&relu(u), w, b, &config.up_spec(level))
}

fn fuse<T: Scalar>(f: &mut Tensor<T>, skip: &Tensor<T>, level: usize) -> Result<()> {
    if f.dims() != skip.dims() {
        return Err(Error::invalid(format!(
            "decoder level {level}: skip map is {} but upsampled map is {}",
            skip.dims(),
            f.dims()
        )));
    }
    add_assign(f, skip)
}

fn output_layer<T: Scalar>(u0: &Tensor<T>, params: &ParamStore<T>, config: &PFFNetConfig) -> Result<Tensor<T>> {
    let (w, b) = params.layer("out")?;
    conv2d(&relu(u0), w, b, &config.output_spec())
}

/// `D_0 ..= D_L` for an input whose extents are multiples of `2^L`.
pub fn encoder_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<Vec<Tensor<T>>> {
    check_input(input, config)?;
    let mut maps: Vec<Tensor<T>> = Vec::with_capacity(config.encoder_levels + 1);
    for level in 0..=config.encoder_levels {
        let d = encoder_layer(maps.last().unwrap_or(input), level, params, config)?;
        maps.push(d);
    }
    Ok(maps)
}

fn transform<T: Scalar>(
    d_top: &Tensor<T>,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
    mut trace: Option<&mut Vec<(Tensor<T>, Tensor<T>)>>,
) -> Result<Tensor<T>> {
    let c = config.bottleneck_channels();
    if d_top.dims().c != c {
        return Err(Error::shape("transform", "channels", c, d_top.dims().c));
    }
    let spec = config.block_spec();
    let mut cur: Option<Tensor<T>> = None;
    for b in 0..config.res_blocks {
        let x = cur.as_ref().unwrap_or(d_top);
        let (out, hidden) = residual_block(x, block_weights(params, b)?, &spec)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push((x.clone(), hidden));
        }
        cur = Some(out);
    }
    // global shortcut
    let mut u = cur.unwrap_or_else(|| d_top.clone());
    add_assign(&mut u, d_top)?;
    Ok(u)
}

/// `U_L = D_L + blocks(D_L)`.
pub fn transform_forward<T: Scalar>(
    d_top: &Tensor<T>,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<Tensor<T>> {
    transform(d_top, params, config, None)
}

/// Decode `U_L` with skip maps `D_0 .. D_{L-1}` (ignored without skips).
pub fn decoder_forward<T: Scalar>(
    u_top: &Tensor<T>,
    skips: &[Tensor<T>],
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<Tensor<T>> {
    let levels = config.encoder_levels;
    if config.skip_connections && skips.len() < levels {
        return Err(Error::shape("decoder", "skip maps", levels, skips.len()));
    }
    let mut u = u_top.clone();
    for level in (1..=levels).rev() {
        let mut f = upsample(&u, level, params, config)?;
        if config.skip_connections {
            fuse(&mut f, &skips[level - 1], level - 1)?;
        }
        u = f;
    }
    output_layer(&u, params, config)
}

/// Full network with every activation retained for [`backward`].
pub fn forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let levels = config.encoder_levels;
    let encoder = encoder_forward(input, params, config)?;
    let mut blocks = Vec::with_capacity(config.res_blocks);
    let u_top = transform(&encoder[levels], params, config, Some(&mut blocks))?;
    let mut fused = vec![u_top];
    for level in (1..=levels).rev() {
        let mut f = upsample(fused.last().expect("non-empty"), level, params, config)?;
        if config.skip_connections {
            fuse(&mut f, &encoder[level - 1], level - 1)?;
        }
        fused.push(f);
    }
    fused.reverse();
    let out = output_layer(&fused[0], params, config)?;
    let trace = ForwardTrace {
        config: *config,
        store_id: params.id(),
        generation: params.generation(),
        input: input.clone(),
        encoder,
        blocks,
        fused,
    };
    Ok((out, trace))
}

/// Inference-only forward pass. Consumes the input and frees every
/// activation as soon as it is dead; bitwise equal to [`forward`]'s output.
pub fn predict<T: Scalar>(input: Tensor<T>, params: &ParamStore<T>, config: &PFFNetConfig) -> Result<Tensor<T>> {
    check_input(&input, config)?;
    let levels = config.encoder_levels;
    let mut skips: Vec<Tensor<T>> = Vec::with_capacity(levels);
    let mut x = encoder_layer(&input, 0, params, config)?;
    drop(input);
    for level in 1..=levels {
        let next = encoder_layer(&x, level, params, config)?;
        if config.skip_connections {
            skips.push(x);
        }
        x = next;
    }
    let mut u = transform(&x, params, config, None)?;
    drop(x);
    for level in (1..=levels).rev() {
        relu_inplace(&mut u);
        let (w, b) = params.layer(&format!("dec.{level}"))?;
        let mut f = deconv2d(&u, w, b, &config.up_spec(level))?;
        drop(u);
        if let Some(skip) = skips.pop() {
            fuse(&mut f, &skip, level - 1)?;
        }
        u = f;
    }
    relu_inplace(&mut u);
    let (w, b) = params.layer("out")?;
    conv2d(&u, w, b, &config.output_spec())
}

/// Gradient of `<output, grad_out>` with respect to every parameter.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    grad_out: &Tensor<T>,
    params: &ParamStore<T>,
    config: &PFFNetConfig,
) -> Result<ParamStore<T>> {
    if trace.config != *config {
        return Err(Error::StaleTrace("trace was recorded with a different config".into()));
    }
    if trace.store_id != params.id() || trace.generation != params.generation() {
        return Err(Error::StaleTrace(
            "parameters changed since the forward pass was recorded".into(),
        ));
    }
    let levels = config.encoder_levels;
    let d_in = trace.input.dims();
    grad_out
        .dims()
        .expect("backward grad_out", Dims::new(d_in.n, config.image_channels, d_in.h, d_in.w))?;

    let mut grads = ParamStore::new();
    let mut store = |name: &str, w: Tensor<T>, b: Vec<T>| -> Result<()> {
        let bias = Tensor::from_vec(Dims::new(b.len(), 1, 1, 1), b)?;
        grads.insert(format!("{name}.weight"), w);
        grads.insert(format!("{name}.bias"), bias);
        Ok(())
    };

    let (w_out, _) = params.layer("out")?;
    let g = conv2d_backward(&relu(&trace.fused[0]), w_out, &config.output_spec(), grad_out)?;
    store("out", g.weight, g.bias)?;
    let mut g_u = g.input;
    relu_mask_inplace(&mut g_u, &trace.fused[0])?;

    let mut g_skips: Vec<Option<Tensor<T>>> = vec![None; levels];
    for level in 1..=levels {
        if config.skip_connections {
            g_skips[level - 1] = Some(g_u.clone());
        }
        let u = &trace.fused[level];
        let (w, _) = params.layer(&format!("dec.{level}"))?;
        let g = deconv2d_backward(&relu(u), w, &config.up_spec(level), &g_u)?;
        store(&format!("dec.{level}"), g.weight, g.bias)?;
        g_u = g.input;
        relu_mask_inplace(&mut g_u, u)?;
    }

    let spec = config.block_spec();
    let mut g_d = g_u.clone();
    let mut g_block = g_u;
    for b in (0..config.res_blocks).rev() {
        let (x, hidden) = &trace.blocks[b];
        let g = residual_block_backward(x, hidden, block_weights(params, b)?, &spec, &g_block)?;
        store(&block_name(b, 1), g.w1, g.b1)?;
        store(&block_name(b, 2), g.w2, g.b2)?;
        g_block = g.input;
    }
    add_assign(&mut g_d, &g_block)?;

    for level in (0..=levels).rev() {
        relu_mask_inplace(&mut g_d, &trace.encoder[level])?;
        let (input, spec) = if level == 0 {
            (&trace.input, config.stem_spec())
        } else {
            (&trace.encoder[level - 1], config.down_spec(level))
        };
        let (w, _) = params.layer(&format!("enc.{level}"))?;
        let g = conv2d_backward(input, w, &spec, &g_d)?;
        store(&format!("enc.{level}"), g.weight, g.bias)?;
        // the gradient w.r.t. the image itself (level 0) is not needed
        if level > 0 {
            g_d = g.input;
            if let Some(s) = g_skips[level - 1].take() {
                add_assign(&mut g_d, &s)?;
            }
        }
    }
    Ok(grads)
}
