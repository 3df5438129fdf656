//! Procedural clear scenes with depth, for smoke training and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::haze::{sample_haze_params_with, synthesize_haze, transmission_from_depth, DepthMap, HazeParams};
use crate::tensor::{Dims, Tensor};

/// A generated scene: clear image, depth and the haze that was applied.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub clear: Tensor<f32>,
    pub hazy: Tensor<f32>,
    pub depth: DepthMap,
    pub params: HazeParams,
}

/// Smooth colour field: a base colour plus a few low-frequency waves per
/// channel, kept inside `[0.05, 0.95]`.
fn clear_image<R: Rng>(h: usize, w: usize, rng: &mut R) -> Tensor<f64> {
    let waves: Vec<[f64; 4]> = (0..3 * 3)
        .map(|_| {
            [
                rng.random_range(0.05..0.2),
                rng.random_range(0.25..1.0) * std::f64::consts::TAU,
                rng.random_range(0.25..1.0) * std::f64::consts::TAU,
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let base: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..0.7)).collect();
    Tensor::from_fn(Dims::new(1, 3, h, w), |_, c, y, x| {
        let (v, u) = (y as f64 / h as f64, x as f64 / w as f64);
        let s: f64 = waves[c * 3..c * 3 + 3]
            .iter()
            .map(|[a, fy, fx, ph]| a * (fy * v + fx * u + ph).sin())
            .sum();
        (base[c] + s).clamp(0.05, 0.95)
    })
}

/// Depth rising smoothly from a random near plane towards the horizon.
fn depth_map<R: Rng>(h: usize, w: usize, rng: &mut R) -> Result<DepthMap> {
    let near = rng.random_range(0.0..0.2);
    let slope_y = rng.random_range(0.2..0.6);
    let slope_x = rng.random_range(-0.2..0.2);
    let values = (0..h * w)
        .map(|i| {
            let (v, u) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            (near + slope_y * (1.0 - v) + slope_x * (u - 0.5)).clamp(0.0, 1.0)
        })
        .collect();
    DepthMap::new(h, w, values)
}

/// Deterministic scene `index` of the stream identified by `seed`.
pub fn synthetic_scene(h: usize, w: usize, seed: u64, index: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let clear = clear_image(h, w, &mut rng);
    let depth = depth_map(h, w, &mut rng)?;
    let params = sample_haze_params_with(&mut rng);
    let t = transmission_from_depth::<f64>(&depth, params.beta())?;
    let hazy = synthesize_haze(&clear, &t, &params)?;
    Ok(SyntheticScene {
        clear: clear.cast(),
        hazy: hazy.cast(),
        depth,
        params,
    })
}

/// `count` scenes stacked into `(hazy, clear)` batches.
pub fn synthetic_pairs(count: usize, size: usize, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let scenes = (0..count as u64)
        .map(|i| synthetic_scene(size, size, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let hazy: Vec<_> = scenes.iter().map(|s| s.hazy.clone()).collect();
    let clear: Vec<_> = scenes.iter().map(|s| s.clear.clone()).collect();
    Ok((Tensor::stack(&hazy)?, Tensor::stack(&clear)?))
}
