//! Directory scanning and haze synthesis for image files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::haze::{sample_haze_params, synthesize_haze, transmission_from_depth, DepthMap, HazeParams};

use super::ImageBuffer;

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Image files of `dir` keyed by file stem, in stem order.
pub fn list_images(dir: impl AsRef<Path>) -> Result<BTreeMap<String, PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !path.is_file() || !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::invalid(format!(
                "{} and {} share the stem {stem:?}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Files of two directories paired by stem.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StemPairs {
    /// `(stem, first, second)` in stem order.
    pub pairs: Vec<(String, PathBuf, PathBuf)>,
    /// Files of either directory without a counterpart.
    pub unmatched: Vec<PathBuf>,
}

pub fn pair_by_stem(first: impl AsRef<Path>, second: impl AsRef<Path>) -> Result<StemPairs> {
    let a = list_images(first)?;
    let mut b = list_images(second)?;
    let mut out = StemPairs::default();
    for (stem, pa) in a {
        match b.remove(&stem) {
            Some(pb) => out.pairs.push((stem, pa, pb)),
            None => out.unmatched.push(pa),
        }
    }
    out.unmatched.extend(b.into_values());
    Ok(out)
}

/// Depth from a single-channel image, already scaled to `[0, 1]` by the
/// file's bit depth.
pub fn depth_from_image(img: &ImageBuffer) -> Result<DepthMap> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!(
            "depth maps must be single-channel images, got {} channels",
            img.channels()
        )));
    }
    DepthMap::new(img.height(), img.width(), img.data().iter().map(|&v| v as f64).collect())
}

/// Hazy version of `clear` for the given depth and haze parameters.
pub fn haze_image(clear: &ImageBuffer, depth: &DepthMap, params: &HazeParams) -> Result<ImageBuffer> {
    if (clear.height(), clear.width()) != (depth.height(), depth.width()) {
        return Err(Error::invalid(format!(
            "clear image is {}x{} but depth map is {}x{}",
            clear.height(),
            clear.width(),
            depth.height(),
            depth.width()
        )));
    }
    let t = transmission_from_depth::<f64>(depth, params.beta())?;
    let hazy = synthesize_haze(&clear.to_tensor::<f64>(), &t, params)?;
    ImageBuffer::from_tensor(&hazy, 0)
}

/// Seed of item `index` derived from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// One line of a haze-parameter manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeRecord {
    pub name: String,
    pub seed: u64,
    pub params: HazeParams,
}

pub const HAZE_MANIFEST_HEADER: &str = "name\tseed\tairlight_r\tairlight_g\tairlight_b\tbeta";

impl HazeRecord {
    /// Parameters drawn from `seed`.
    pub fn sample(name: impl Into<String>, seed: u64) -> Self {
        HazeRecord {
            name: name.into(),
            seed,
            params: sample_haze_params(seed),
        }
    }

    pub fn to_tsv(&self) -> String {
        let [r, g, b] = self.params.airlight();
        format!("{}\t{}\t{r}\t{g}\t{b}\t{}", self.name, self.seed, self.params.beta())
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::invalid(format!("malformed haze record {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(HazeRecord {
            name: f[0].to_string(),
            seed: f[1].parse().map_err(|_| bad())?,
            params: HazeParams::new([num(f[2])?, num(f[3])?, num(f[4])?], num(f[5])?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trips() {
        let r = HazeRecord::sample("a b", 17);
        assert_eq!(HazeRecord::from_tsv(&r.to_tsv()).unwrap(), r);
        assert!(HazeRecord::from_tsv("x\t1\t2").is_err());
    }

    #[test]
    fn derived_seeds_differ_per_item() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_eq!(derive_seed(4, 9), derive_seed(4, 9));
    }
}
