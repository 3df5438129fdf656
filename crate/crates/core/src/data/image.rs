use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Planar image with values in `[0, 1]`: `data[c][y][x]`, one or three
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    source: Option<PathBuf>,
}

impl ImageBuffer {
    /// Values are clamped to `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape("ImageBuffer", "data", height * width * channels, data.len()));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            data,
            source: None,
        })
    }

    /// Item `n` of a batch tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let d = t.dims();
        if n >= d.n {
            return Err(Error::shape("ImageBuffer::from_tensor", "n", n + 1, d.n));
        }
        Self::new(d.h, d.w, d.c, t.item(n).iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_vec(Dims::new(1, self.channels, self.height, self.width), data).expect("consistent extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The `size x size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImageBuffer> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            for y in row..row + height {
                let start = (c * self.height + y) * self.width + col;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(ImageBuffer {
            height,
            width,
            channels: self.channels,
            data,
            source: self.source.clone(),
        })
    }

    /// Rebuild with a pixel remapping: output `(y, x)` reads input `f(y, x)`.
    pub(crate) fn remap(&self, height: usize, width: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let (sy, sx) = f(y, x);
                    data.push(self.at(c, sy, sx));
                }
            }
        }
        ImageBuffer {
            height,
            width,
            channels: self.channels,
            data,
            source: self.source.clone(),
        }
    }
}

fn image_error(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Load a PNG or binary PPM/PGM file. 16-bit data is scaled by 1/65535,
/// 8-bit by 1/255; alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(image_error(path, format!("unsupported format {other:?}"))),
        None => return Err(image_error(path, "unrecognised image format")),
    }
    let decoded = reader.decode().map_err(|e| image_error(path, e))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let gray = matches!(
        decoded,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (channels, interleaved): (usize, Vec<f32>) = if gray {
        (1, decoded.into_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
    } else if decoded.color().bytes_per_pixel() / decoded.color().channel_count() == 1 {
        (3, decoded.into_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    } else {
        (3, decoded.into_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
    };
    let plane = width * height;
    let mut planar = vec![0.0; interleaved.len()];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * plane + i] = v;
        }
    }
    let mut img = ImageBuffer::new(height, width, channels, planar)?;
    img.source = Some(path.to_path_buf());
    Ok(img)
}

/// Save as 8-bit PNG (`.png`) or binary PPM/PGM (`.ppm`, `.pgm`, `.pnm`).
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "ppm" | "pgm" | "pnm" => ImageFormat::Pnm,
        _ => return Err(image_error(path, "expected a .png, .ppm or .pgm extension")),
    };
    let plane = img.width * img.height;
    let mut bytes = vec![0u8; img.data.len()];
    for c in 0..img.channels {
        for i in 0..plane {
            bytes[i * img.channels + c] = (img.data[c * plane + i] * 255.0).round() as u8;
        }
    }
    let (w, h) = (img.width as u32, img.height as u32);
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    match format {
        ImageFormat::Png => image::save_buffer_with_format(path, &bytes, w, h, color, format),
        _ => {
            let subtype = if img.channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut writer = std::io::BufWriter::new(file);
            PnmEncoder::new(&mut writer)
                .with_subtype(subtype)
                .write_image(&bytes, w, h, color)
                .and_then(|_| writer.flush().map_err(image::ImageError::IoError))
        }
    }
    .map_err(|e| image_error(path, e))
}

/// `(height, width)` from the file header, without decoding pixels.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = image::image_dimensions(path).map_err(|e| image_error(path, e))?;
    Ok((h as usize, w as usize))
}
