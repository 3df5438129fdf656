use crate::error::{Error, Result};

use super::ImageBuffer;

pub const CROP_SIZE: usize = 520;
pub const CROP_STRIDE: usize = 260;

/// A square window cut from a larger image.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub row: usize,
    pub col: usize,
    pub image: ImageBuffer,
}

/// Top-left corners `(r * stride, c * stride)` of every window that fits
/// entirely inside an `height x width` image, row-major.
pub fn crop_origins(height: usize, width: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("crop size and stride must be positive"));
    }
    if height < size || width < size {
        return Err(Error::invalid(format!(
            "image {height}x{width} is smaller than the {size}x{size} crop"
        )));
    }
    let rows = (height - size) / stride + 1;
    let cols = (width - size) / stride + 1;
    Ok((0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect())
}

pub fn extract_crops(img: &ImageBuffer, size: usize, stride: usize) -> Result<Vec<Crop>> {
    crop_origins(img.height(), img.width(), size, stride)?
        .into_iter()
        .map(|(row, col)| {
            Ok(Crop {
                row,
                col,
                image: img.crop(row, col, size, size)?,
            })
        })
        .collect()
}
