use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{crop_origins, image_dimensions, load_image, AugmentVariant, ImageBuffer};

/// One hazy/clear image pair on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenePair {
    pub id: String,
    pub hazy: PathBuf,
    pub clear: PathBuf,
}

/// Materialised training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub hazy: ImageBuffer,
    pub clear: ImageBuffer,
    pub scene: String,
    pub variant: AugmentVariant,
}

/// Manifest entry: where a patch comes from and how it is transformed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchRecord {
    pub scene: usize,
    pub row: usize,
    pub col: usize,
    pub variant: AugmentVariant,
}

/// Random access to `(hazy, clear)` training patches as `1 x c x s x s`
/// tensors.
pub trait PatchSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn patch(&self, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)>;
}

/// Lazily materialised manifest of crops and augmentations over scene
/// pairs. Scenes are decoded on demand; the most recent one is cached.
#[derive(Debug, Default)]
pub struct PatchSet {
    pub size: usize,
    pub scenes: Vec<ScenePair>,
    pub records: Vec<PatchRecord>,
    cache: Mutex<Option<(usize, ImageBuffer, ImageBuffer)>>,
}

impl Clone for PatchSet {
    fn clone(&self) -> Self {
        PatchSet {
            size: self.size,
            scenes: self.scenes.clone(),
            records: self.records.clone(),
            cache: Mutex::new(None),
        }
    }
}

impl PartialEq for PatchSet {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.scenes == other.scenes && self.records == other.records
    }
}

/// Every crop of every scene, times twelve when `augment` is set.
pub fn build_patchset(scenes: &[ScenePair], size: usize, stride: usize, augment: bool) -> Result<PatchSet> {
    let variants = if augment {
        AugmentVariant::all()
    } else {
        vec![AugmentVariant::IDENTITY]
    };
    let mut records = Vec::new();
    for (index, scene) in scenes.iter().enumerate() {
        let dims = image_dimensions(&scene.hazy)?;
        let clear = image_dimensions(&scene.clear)?;
        if dims != clear {
            return Err(Error::invalid(format!(
                "scene {}: hazy image is {}x{} but clear image is {}x{}",
                scene.id, dims.0, dims.1, clear.0, clear.1
            )));
        }
        for (row, col) in crop_origins(dims.0, dims.1, size, stride)
            .map_err(|e| Error::invalid(format!("scene {}: {e}", scene.id)))?
        {
            records.extend(variants.iter().map(|&variant| PatchRecord {
                scene: index,
                row,
                col,
                variant,
            }));
        }
    }
    Ok(PatchSet {
        size,
        scenes: scenes.to_vec(),
        records,
        cache: Mutex::new(None),
    })
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn materialize(&self, index: usize) -> Result<PatchPair> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| Error::invalid(format!("patch {index} out of range ({} patches)", self.len())))?;
        let scene = &self.scenes[rec.scene];
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if cache.as_ref().map(|c| c.0) != Some(rec.scene) {
            let hazy = load_image(&scene.hazy)?;
            let clear = load_image(&scene.clear)?;
            if hazy.channels() != clear.channels() {
                return Err(Error::invalid(format!("scene {}: channel counts differ", scene.id)));
            }
            *cache = Some((rec.scene, hazy, clear));
        }
        let (_, hazy, clear) = cache.as_ref().expect("just filled");
        let cut = |img: &ImageBuffer| rec.variant.apply(&img.crop(rec.row, rec.col, self.size, self.size)?);
        Ok(PatchPair {
            hazy: cut(hazy)?,
            clear: cut(clear)?,
            scene: scene.id.clone(),
            variant: rec.variant,
        })
    }

    /// Tab-separated manifest: scene id, hazy path, clear path, origin row,
    /// origin col, rotation in degrees, flip. A leading comment records the
    /// crop size.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("# crop_size={}\n", self.size);
        for r in &self.records {
            let s = &self.scenes[r.scene];
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.id,
                s.hazy.display(),
                s.clear.display(),
                r.row,
                r.col,
                r.variant.rotation.degrees(),
                r.variant.flip.name()
            );
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<PatchSet> {
        let mut set = PatchSet::default();
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::invalid(format!("manifest line {}: {what}", lineno + 1));
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("crop_size=") {
                    set.size = v.parse().map_err(|_| bad("bad crop_size"))?;
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(&format!("expected 7 fields, got {}", f.len())));
            }
            let pair = ScenePair {
                id: f[0].to_string(),
                hazy: PathBuf::from(f[1]),
                clear: PathBuf::from(f[2]),
            };
            let scene = match set.scenes.iter().position(|s| *s == pair) {
                Some(i) => i,
                None => {
                    set.scenes.push(pair);
                    set.scenes.len() - 1
                }
            };
            set.records.push(PatchRecord {
                scene,
                row: f[3].parse().map_err(|_| bad("bad origin row"))?,
                col: f[4].parse().map_err(|_| bad("bad origin col"))?,
                variant: AugmentVariant {
                    rotation: f[5].parse().map_err(|e: Error| bad(&e.to_string()))?,
                    flip: f[6].parse().map_err(|e: Error| bad(&e.to_string()))?,
                },
            });
        }
        if set.size == 0 && !set.records.is_empty() {
            return Err(Error::invalid("manifest lacks a '# crop_size=' header"));
        }
        Ok(set)
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<PatchSet> {
        let path = path.as_ref();
        Self::from_manifest(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl PatchSource for PatchSet {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn patch(&self, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let p = self.materialize(index)?;
        Ok((p.hazy.to_tensor(), p.clear.to_tensor()))
    }
}

/// Patches already held in memory, e.g. synthetic pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InMemoryPatches {
    pub pairs: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl InMemoryPatches {
    /// Split `n x c x h x w` batches into single-item pairs.
    pub fn from_batches(hazy: &Tensor<f32>, clear: &Tensor<f32>) -> Result<Self> {
        hazy.dims().expect("InMemoryPatches", clear.dims())?;
        Ok(InMemoryPatches {
            pairs: (0..hazy.dims().n).map(|n| (hazy.select(n), clear.select(n))).collect(),
        })
    }
}

impl PatchSource for InMemoryPatches {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn patch(&self, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        self.pairs
            .get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("patch {index} out of range ({} patches)", self.pairs.len())))
    }
}
