use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Adam hyperparameters. The learning rate is constant for the whole run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
    pub step: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.dims())))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Moments are updated in 32-bit; the per-element arithmetic is fixed so
/// runs are bitwise reproducible.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &ParamStore<f32>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let same_keys = |keys: &mut dyn Iterator<Item = &String>| keys.eq(params.keys());
    if !same_keys(&mut grads.keys()) {
        return Err(key_mismatch("gradients", params, grads.keys()));
    }
    if !same_keys(&mut state.m.keys()) || !same_keys(&mut state.v.keys()) {
        return Err(key_mismatch("optimizer state", params, state.m.keys()));
    }
    for (key, p) in params.iter() {
        let (g, m) = (grads.get(key)?, &state.m[key]);
        p.dims().expect("adam_step gradient", g.dims())?;
        p.dims().expect("adam_step moment", m.dims())?;
        state.v[key].dims().expect("adam_step moment", p.dims())?;
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    // lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
    let step_size = (cfg.lr / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    let eps = cfg.eps as f32;
    for (key, p) in params.iter_mut() {
        let g = grads.get(key)?.data();
        let m = state.m.get_mut(key).expect("checked").data_mut();
        let v = state.v.get_mut(key).expect("checked").data_mut();
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / c2_sqrt + eps);
        }
    }
    Ok(())
}

fn key_mismatch<'a>(
    what: &str,
    params: &ParamStore<f32>,
    mut other: impl Iterator<Item = &'a String>,
) -> Error {
    let keys: Vec<&String> = params.keys().collect();
    let detail = keys
        .iter()
        .find(|k| other.next() != Some(**k))
        .map(|k| format!("first differing key near {k}"))
        .unwrap_or_else(|| "extra keys".into());
    Error::invalid(format!("adam_step: {what} keys do not match parameters ({detail})"))
}
