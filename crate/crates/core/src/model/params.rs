use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PFFNetConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Dims, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// One learnable layer: a weight `"<name>.weight"` and a bias `"<name>.bias"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub spec: ConvSpec,
}

impl Layer {
    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_dims(&self) -> Dims {
        match self.kind {
            LayerKind::Conv => self.spec.conv_weight_dims(),
            LayerKind::Deconv => self.spec.deconv_weight_dims(),
        }
    }

    pub fn bias_dims(&self) -> Dims {
        Dims::new(self.spec.out_channels, 1, 1, 1)
    }

    /// Weights feeding one output element: `in_channels * k^2`.
    pub fn fan_in(&self) -> usize {
        self.spec.in_channels * self.spec.kernel * self.spec.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_dims().len() + self.spec.out_channels
    }
}

pub fn block_name(index: usize, conv: usize) -> String {
    format!("res.{index:02}.conv{conv}")
}

/// Every layer of the network in execution order.
pub fn layers(config: &PFFNetConfig) -> Vec<Layer> {
    let conv = |name: String, spec| Layer {
        name,
        kind: LayerKind::Conv,
        spec,
    };
    let mut out = vec![conv("enc.0".into(), config.stem_spec())];
    for level in 1..=config.encoder_levels {
        out.push(conv(format!("enc.{level}"), config.down_spec(level)));
    }
    for b in 0..config.res_blocks {
        out.push(conv(block_name(b, 1), config.block_spec()));
        out.push(conv(block_name(b, 2), config.block_spec()));
    }
    for level in (1..=config.encoder_levels).rev() {
        out.push(Layer {
            name: format!("dec.{level}"),
            kind: LayerKind::Deconv,
            spec: config.up_spec(level),
        });
    }
    out.push(conv("out".into(), config.output_spec()));
    out
}

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Named tensors of one network instance (or of its gradients).
///
/// Each store carries an identity and a generation counter bumped on every
/// mutable access, so a forward trace can tell whether the parameters it was
/// recorded with are still the ones being differentiated.
#[derive(Debug)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
    id: u64,
    generation: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
            id: next_id(),
            generation: 0,
        }
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            tensors: self.tensors.clone(),
            id: next_id(),
            generation: 0,
        }
    }
}

impl<T: Scalar> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Weights ~ N(0, 2 / fan_in), biases zero. Deterministic in `seed`.
    pub fn init(config: &PFFNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for layer in layers(config) {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            store.insert(layer.weight_key(), Tensor::randn(layer.weight_dims(), std, &mut rng));
            store.insert(layer.bias_key(), Tensor::zeros(layer.bias_dims()));
        }
        Ok(store)
    }

    /// All-zero tensors with the layout `config` prescribes.
    pub fn zeros(config: &PFFNetConfig) -> Self {
        let mut store = Self::new();
        for layer in layers(config) {
            store.insert(layer.weight_key(), Tensor::zeros(layer.weight_dims()));
            store.insert(layer.bias_key(), Tensor::zeros(layer.bias_dims()));
        }
        store
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor<T>) {
        self.generation += 1;
        self.tensors.insert(key.into(), t);
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(key)
            .ok_or_else(|| Error::invalid(format!("missing parameter {key:?}")))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Tensor<T>> {
        self.generation += 1;
        self.tensors
            .get_mut(key)
            .ok_or_else(|| Error::invalid(format!("missing parameter {key:?}")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.tensors.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar elements.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.generation += 1;
        self.tensors.iter_mut()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, t) in &self.tensors {
            out.insert(k.clone(), t.cast());
        }
        out
    }

    /// Check that keys and extents are exactly those `config` prescribes.
    pub fn validate(&self, config: &PFFNetConfig) -> Result<()> {
        let expected = layers(config);
        let mut n = 0;
        for layer in &expected {
            for (key, dims) in [
                (layer.weight_key(), layer.weight_dims()),
                (layer.bias_key(), layer.bias_dims()),
            ] {
                let t = self.get(&key)?;
                if t.dims() != dims {
                    return Err(Error::invalid(format!(
                        "parameter {key:?} has extents {}, expected {dims}",
                        t.dims()
                    )));
                }
                n += 1;
            }
        }
        if n != self.len() {
            let orphan = self
                .keys()
                .find(|k| !expected.iter().any(|l| **k == l.weight_key() || **k == l.bias_key()));
            return Err(Error::invalid(format!("unexpected parameter {orphan:?}")));
        }
        Ok(())
    }

    /// Weight and bias of `layer`, bias as a flat slice.
    pub(crate) fn layer(&self, name: &str) -> Result<(&Tensor<T>, &[T])> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        Ok((w, b.data()))
    }
}

/// Closed-form parameter count: `sum(k^2 * in * out + out)` over all layers.
pub fn param_count(config: &PFFNetConfig) -> usize {
    let k0 = config.stem_kernel;
    let mut total = k0 * k0 * config.image_channels * config.base_channels + config.base_channels;
    for level in 1..=config.encoder_levels {
        let (cin, cout) = (config.channels(level - 1), config.channels(level));
        // one stride-2 conv down and one transposed conv back up
        total += 2 * 9 * cin * cout + cout + cin;
    }
    let c = config.bottleneck_channels();
    total += config.res_blocks * 2 * (9 * c * c + c);
    total + 9 * config.base_channels * config.image_channels + config.image_channels
}
