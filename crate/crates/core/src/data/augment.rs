use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::ImageBuffer;

/// Counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flip {
    None,
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        self as u32 * 90
    }

    fn quarter_turns(self) -> usize {
        self as usize
    }

    fn from_quarter_turns(q: usize) -> Self {
        Self::ALL[q % 4]
    }
}

impl Flip {
    pub const ALL: [Flip; 3] = [Flip::None, Flip::Horizontal, Flip::Vertical];

    pub fn name(self) -> &'static str {
        match self {
            Flip::None => "none",
            Flip::Horizontal => "horizontal",
            Flip::Vertical => "vertical",
        }
    }
}

impl FromStr for Rotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" => Ok(Rotation::R0),
            "90" => Ok(Rotation::R90),
            "180" => Ok(Rotation::R180),
            "270" => Ok(Rotation::R270),
            _ => Err(Error::invalid(format!("rotation must be 0, 90, 180 or 270, got {s:?}"))),
        }
    }
}

impl FromStr for Flip {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Flip::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("flip must be none, horizontal or vertical, got {s:?}")))
    }
}

/// A mirror flip followed by a rotation, applied identically to both
/// halves of a training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentVariant {
    pub rotation: Rotation,
    pub flip: Flip,
}

impl fmt::Display for AugmentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rot{}-{}", self.rotation.degrees(), self.flip.name())
    }
}

impl AugmentVariant {
    pub const IDENTITY: AugmentVariant = AugmentVariant {
        rotation: Rotation::R0,
        flip: Flip::None,
    };

    /// All twelve rotation/flip combinations, rotation-major.
    pub fn all() -> Vec<AugmentVariant> {
        Rotation::ALL
            .into_iter()
            .flat_map(|rotation| Flip::ALL.into_iter().map(move |flip| AugmentVariant { rotation, flip }))
            .collect()
    }

    /// Source pixel of output `(y, x)` in an `n x n` grid.
    fn source(&self, n: usize, y: usize, x: usize) -> (usize, usize) {
        // undo the rotation first, then the flip
        let (mut y, mut x) = (y, x);
        for _ in 0..self.rotation.quarter_turns() {
            // out(y, x) = in(x, n - 1 - y) for one counter-clockwise turn
            (y, x) = (x, n - 1 - y);
        }
        match self.flip {
            Flip::None => (y, x),
            Flip::Horizontal => (y, n - 1 - x),
            Flip::Vertical => (n - 1 - y, x),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let n = img.height();
        if img.width() != n {
            return Err(Error::invalid(format!(
                "augmentation needs a square crop, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(img.remap(n, n, |y, x| self.source(n, y, x)))
    }

    /// The transform that undoes `self`.
    pub fn inverse(&self) -> InverseVariant {
        InverseVariant(*self)
    }
}

/// Inverse of an [`AugmentVariant`]: the opposite rotation, then the same
/// (self-inverse) flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InverseVariant(AugmentVariant);

impl InverseVariant {
    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let unrotate = AugmentVariant {
            rotation: Rotation::from_quarter_turns(4 - self.0.rotation.quarter_turns()),
            flip: Flip::None,
        };
        let unflip = AugmentVariant {
            rotation: Rotation::R0,
            flip: self.0.flip,
        };
        unflip.apply(&unrotate.apply(img)?)
    }
}

/// The twelve variants of a square crop.
pub fn augment(crop: &ImageBuffer) -> Result<Vec<(AugmentVariant, ImageBuffer)>> {
    AugmentVariant::all()
        .into_iter()
        .map(|v| Ok((v, v.apply(crop)?)))
        .collect()
}
