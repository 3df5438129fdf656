//! Image I/O, crops, augmentation, patch manifests and batching.

mod augment;
mod batch;
mod crops;
mod image;
mod patchset;
mod scenes;
mod synthetic;

pub use augment::{augment, AugmentVariant, Flip, InverseVariant, Rotation};
pub use batch::{assemble, epoch_order, make_batches, Batches};
pub use crops::{crop_origins, extract_crops, Crop, CROP_SIZE, CROP_STRIDE};
pub use image::{image_dimensions, load_image, save_image, ImageBuffer};
pub use patchset::{build_patchset, InMemoryPatches, PatchPair, PatchRecord, PatchSet, PatchSource, ScenePair};
pub use scenes::{
    depth_from_image, derive_seed, haze_image, list_images, pair_by_stem, HazeRecord, StemPairs, HAZE_MANIFEST_HEADER,
    IMAGE_EXTENSIONS,
};
pub use synthetic::{synthetic_pairs, synthetic_scene, SyntheticScene};
