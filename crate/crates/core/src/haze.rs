//! Atmospheric scattering: `I = J t + A (1 - t)` with `t = exp(-beta d)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Default lower bound on transmission when inverting the haze model.
pub const T_FLOOR: f64 = 0.05;

pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);
pub const BETA_RANGE: (f64, f64) = (0.6, 1.8);

/// Non-negative scene depth, one value per pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("DepthMap", "values", height * width, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "depth at index {i} is {}; depths must be finite and non-negative",
                values[i]
            )));
        }
        Ok(DepthMap { height, width, values })
    }

    pub fn constant(height: usize, width: usize, depth: f64) -> Result<Self> {
        Self::new(height, width, vec![depth; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-channel airlight `A` and scattering coefficient `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    airlight: [f64; 3],
    beta: f64,
}

impl HazeParams {
    pub fn new(airlight: [f64; 3], beta: f64) -> Result<Self> {
        let (alo, ahi) = AIRLIGHT_RANGE;
        if let Some(a) = airlight.iter().find(|a| !(alo..=ahi).contains(*a)) {
            return Err(Error::invalid(format!("airlight {a} outside [{alo}, {ahi}]")));
        }
        let (blo, bhi) = BETA_RANGE;
        if !(blo..=bhi).contains(&beta) {
            return Err(Error::invalid(format!("beta {beta} outside [{blo}, {bhi}]")));
        }
        Ok(HazeParams { airlight, beta })
    }

    pub fn airlight(&self) -> [f64; 3] {
        self.airlight
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Airlight for channel `c`; single-channel images use the first entry.
    fn airlight_of(&self, c: usize) -> f64 {
        self.airlight[c.min(2)]
    }
}

/// `t = exp(-beta d)` as a `1 x 1 x h x w` tensor.
pub fn transmission_from_depth<T: Scalar>(depth: &DepthMap, beta: f64) -> Result<Tensor<T>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let data = depth.values.iter().map(|d| T::of((-beta * d).exp())).collect();
    Tensor::from_vec(Dims::new(1, 1, depth.height, depth.width), data)
}

fn check_transmission<T: Scalar>(op: &'static str, image: &Tensor<T>, t: &Tensor<T>) -> Result<()> {
    let (di, dt) = (image.dims(), t.dims());
    if dt.c != 1 {
        return Err(Error::shape(op, "transmission channels", 1, dt.c));
    }
    if dt.n != 1 && dt.n != di.n {
        return Err(Error::shape(op, "transmission batch", di.n, dt.n));
    }
    if dt.h != di.h {
        return Err(Error::shape(op, "h", di.h, dt.h));
    }
    if dt.w != di.w {
        return Err(Error::shape(op, "w", di.w, dt.w));
    }
    if di.c > 3 {
        return Err(Error::invalid(format!("{op}: at most 3 channels, got {}", di.c)));
    }
    Ok(())
}

/// Apply `f(value, t, airlight)` pixelwise with `t` broadcast over channels.
fn per_pixel<T: Scalar>(
    image: &Tensor<T>,
    t: &Tensor<T>,
    params: &HazeParams,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Tensor<T> {
    let d = image.dims();
    let plane = d.plane();
    let mut out = Tensor::zeros(d);
    for n in 0..d.n {
        let tn = t.item(if t.dims().n == 1 { 0 } else { n });
        for c in 0..d.c {
            let a = params.airlight_of(c);
            let src = image.plane(n, c);
            let off = out.offset(n, c, 0, 0);
            for (i, o) in out.data_mut()[off..off + plane].iter_mut().enumerate() {
                *o = T::of(f(src[i].as_f64(), tn[i].as_f64(), a));
            }
        }
    }
    out
}

/// Hazy image `I = J t + A (1 - t)`.
pub fn synthesize_haze<T: Scalar>(clear: &Tensor<T>, t: &Tensor<T>, params: &HazeParams) -> Result<Tensor<T>> {
    check_transmission("synthesize_haze", clear, t)?;
    Ok(per_pixel(clear, t, params, |j, t, a| j * t + a * (1.0 - t)))
}

/// Scene radiance `J = (I - A (1 - t')) / t'` with `t' = max(t, t_floor)`,
/// clamped to `[0, 1]`.
pub fn recover_exact<T: Scalar>(
    hazy: &Tensor<T>,
    t: &Tensor<T>,
    params: &HazeParams,
    t_floor: f64,
) -> Result<Tensor<T>> {
    if !(t_floor > 0.0) {
        return Err(Error::invalid(format!("t_floor must be positive, got {t_floor}")));
    }
    check_transmission("recover_exact", hazy, t)?;
    Ok(per_pixel(hazy, t, params, |i, t, a| {
        let t = t.max(t_floor);
        ((i - a * (1.0 - t)) / t).clamp(0.0, 1.0)
    }))
}

/// Uniform airlight per channel and uniform beta, deterministic per seed.
pub fn sample_haze_params(seed: u64) -> HazeParams {
    sample_haze_params_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_haze_params_with<R: Rng + ?Sized>(rng: &mut R) -> HazeParams {
    let (alo, ahi) = AIRLIGHT_RANGE;
    let (blo, bhi) = BETA_RANGE;
    let airlight = [(); 3].map(|_| rng.random_range(alo..=ahi));
    HazeParams {
        airlight,
        beta: rng.random_range(blo..=bhi),
    }
}
