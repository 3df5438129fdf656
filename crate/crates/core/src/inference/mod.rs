//! Whole-image and tiled dehazing of arbitrary-size images.

mod memory;
mod pad;
mod tiles;

use std::path::Path;

pub use memory::{memory_estimate, MemoryEstimate, Strategy};
pub use pad::{pad_to_multiple, unpad, CropRecord};
pub use tiles::{TilePlan, TileRect, DEFAULT_OVERLAP, DEFAULT_TILE, MIN_TILE, TILE_ALIGN};

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::model::{predict, PFFNetConfig, ParamStore};
use crate::tensor::{Dims, Tensor};
use crate::train::{load_checkpoint, Checkpoint};
use pad::{pad_owned, unpad_owned, window};

/// Trained parameters ready for inference.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: PFFNetConfig,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn new(config: PFFNetConfig, params: ParamStore<f32>) -> Result<Self> {
        params.validate(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::new(ckpt.config.model, ckpt.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }

    fn input_tensor(&self, img: &ImageBuffer) -> Result<Tensor<f32>> {
        if img.channels() != self.config.image_channels {
            return Err(Error::invalid(format!(
                "model expects {} channels, image has {}",
                self.config.image_channels,
                img.channels()
            )));
        }
        Ok(img.to_tensor())
    }
}

/// Images are padded to multiples of 16, or of the network's own
/// divisibility requirement if larger.
pub fn pad_multiple(config: &PFFNetConfig) -> usize {
    TILE_ALIGN.max(config.size_multiple())
}

/// Pad, run the network once, unpad and clamp to `[0, 1]`.
pub fn dehaze(img: &ImageBuffer, model: &Model) -> Result<ImageBuffer> {
    let x = model.input_tensor(img)?;
    let (x, record) = pad_owned(x, pad_multiple(&model.config))?;
    let y = predict(x, &model.params, &model.config)?;
    let y = unpad_owned(y, &record)?;
    ImageBuffer::from_tensor(&y, 0)
}

/// Dehaze tile by tile, blending overlaps with the plan's ramp weights.
/// Bounds activation memory by the tile size; results near tile seams
/// differ slightly from [`dehaze`] because each tile sees less context.
pub fn dehaze_tiled(img: &ImageBuffer, model: &Model, tile: usize, overlap: usize) -> Result<ImageBuffer> {
    let x = model.input_tensor(img)?;
    let (x, record) = pad_owned(x, pad_multiple(&model.config))?;
    let d = x.dims();
    let plan = TilePlan::new(d.h, d.w, tile, overlap)?;
    if plan.tiles.iter().any(|t| t.height % model.config.size_multiple() != 0 || t.width % model.config.size_multiple() != 0) {
        return Err(Error::invalid(format!(
            "tiles must be multiples of {}",
            model.config.size_multiple()
        )));
    }
    let mut acc = Tensor::<f32>::zeros(Dims::new(1, model.config.image_channels, d.h, d.w));
    for t in &plan.tiles {
        let part = window(&x, t.row, t.col, t.height, t.width)?;
        let y = predict(part, &model.params, &model.config)?;
        blend(&mut acc, &y, &plan, t);
    }
    drop(x);
    let acc = unpad_owned(acc, &record)?;
    ImageBuffer::from_tensor(&acc, 0)
}

fn blend(acc: &mut Tensor<f32>, y: &Tensor<f32>, plan: &TilePlan, t: &TileRect) {
    let d = acc.dims();
    let weights: Vec<f32> = (0..t.height * t.width)
        .map(|i| plan.weight(t, i / t.width, i % t.width))
        .collect();
    let data = acc.data_mut();
    for c in 0..d.c {
        let src = y.plane(0, c);
        for dy in 0..t.height {
            let row = &mut data[(c * d.h + t.row + dy) * d.w + t.col..][..t.width];
            let src_row = &src[dy * t.width..(dy + 1) * t.width];
            let w_row = &weights[dy * t.width..(dy + 1) * t.width];
            for ((a, &v), &w) in row.iter_mut().zip(src_row).zip(w_row) {
                *a += w * v;
            }
        }
    }
}
