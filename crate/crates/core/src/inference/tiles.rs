use crate::error::{Error, Result};

/// Smallest tile edge accepted.
pub const MIN_TILE: usize = 64;
/// Tile edges and overlaps are multiples of this.
pub const TILE_ALIGN: usize = 16;
pub const DEFAULT_TILE: usize = 1024;
pub const DEFAULT_OVERLAP: usize = 128;

/// One tile of a plan: its window in the padded image and the indices of
/// its row and column bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    band_y: usize,
    band_x: usize,
}

/// Overlapping tiles covering an image, with separable linear-ramp blend
/// weights normalised to sum to one at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub overlap: usize,
    pub tiles: Vec<TileRect>,
    row_weights: Vec<Vec<f32>>,
    col_weights: Vec<Vec<f32>>,
}

/// Band starts along an axis of length `n` and the band length.
fn band_starts(n: usize, tile: usize, overlap: usize) -> (Vec<usize>, usize) {
    let len = tile.min(n);
    let mut starts = vec![0];
    let mut s = 0;
    while s + len < n {
        s = (s + len - overlap).min(n - len);
        starts.push(s);
    }
    (starts, len)
}

/// Normalised weights of every band along one axis.
fn band_weights(n: usize, starts: &[usize], len: usize, overlap: usize) -> Vec<Vec<f32>> {
    let ramp = (overlap + 1) as f64;
    let raw: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| {
            let e = s + len;
            (s..e)
                .map(|x| {
                    let mut w: f64 = 1.0;
                    if overlap > 0 && s > 0 {
                        w = w.min((x - s + 1) as f64 / ramp);
                    }
                    if overlap > 0 && e < n {
                        w = w.min((e - x) as f64 / ramp);
                    }
                    w
                })
                .collect()
        })
        .collect();
    let mut total = vec![0.0; n];
    for (&s, w) in starts.iter().zip(&raw) {
        for (i, v) in w.iter().enumerate() {
            total[s + i] += v;
        }
    }
    starts
        .iter()
        .zip(raw)
        .map(|(&s, w)| w.iter().enumerate().map(|(i, v)| (v / total[s + i]) as f32).collect())
        .collect()
}

impl TilePlan {
    /// Plan for a padded `height x width` image (both multiples of 16).
    pub fn new(height: usize, width: usize, tile: usize, overlap: usize) -> Result<Self> {
        if tile < MIN_TILE || !tile.is_multiple_of(TILE_ALIGN) {
            return Err(Error::invalid(format!(
                "tile size must be a multiple of {TILE_ALIGN} and at least {MIN_TILE}, got {tile}"
            )));
        }
        if !overlap.is_multiple_of(TILE_ALIGN) || 2 * overlap >= tile {
            return Err(Error::invalid(format!(
                "overlap must be a multiple of {TILE_ALIGN} below half the tile size, got {overlap} for tile {tile}"
            )));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(TILE_ALIGN) || !width.is_multiple_of(TILE_ALIGN) {
            return Err(Error::invalid(format!(
                "tiled image must be padded to a multiple of {TILE_ALIGN}, got {height}x{width}"
            )));
        }
        let (ys, th) = band_starts(height, tile, overlap);
        let (xs, tw) = band_starts(width, tile, overlap);
        let mut tiles = Vec::with_capacity(ys.len() * xs.len());
        for (band_y, &row) in ys.iter().enumerate() {
            for (band_x, &col) in xs.iter().enumerate() {
                tiles.push(TileRect {
                    row,
                    col,
                    height: th,
                    width: tw,
                    band_y,
                    band_x,
                });
            }
        }
        Ok(TilePlan {
            height,
            width,
            tile,
            overlap,
            tiles,
            row_weights: band_weights(height, &ys, th, overlap),
            col_weights: band_weights(width, &xs, tw, overlap),
        })
    }

    /// Blend weight of pixel `(dy, dx)` inside `tile`.
    pub fn weight(&self, tile: &TileRect, dy: usize, dx: usize) -> f32 {
        self.row_weights[tile.band_y][dy] * self.col_weights[tile.band_x][dx]
    }

    /// Largest deviation from one of the per-pixel weight sums.
    pub fn partition_error(&self) -> f64 {
        let mut total = vec![0.0f64; self.height * self.width];
        for t in &self.tiles {
            for dy in 0..t.height {
                for dx in 0..t.width {
                    total[(t.row + dy) * self.width + t.col + dx] += self.weight(t, dy, dx) as f64;
                }
            }
        }
        total.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_band_is_flush_with_the_edge() {
        let (s, len) = band_starts(2160, 1024, 128);
        assert_eq!(len, 1024);
        assert_eq!(s, vec![0, 896, 1136]);
        let (s, len) = band_starts(48, 1024, 128);
        assert_eq!((s, len), (vec![0], 48));
    }

    #[test]
    fn weights_partition_unity() {
        for (h, w, t, o) in [(64, 64, 64, 0), (208, 160, 64, 16), (2160, 3840, 1024, 128), (96, 400, 128, 48)] {
            let p = TilePlan::new(h, w, t, o).unwrap();
            assert!(p.partition_error() <= 1e-6, "{h}x{w} tile {t} overlap {o}");
        }
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(TilePlan::new(64, 64, 48, 0).is_err());
        assert!(TilePlan::new(64, 64, 72, 0).is_err());
        assert!(TilePlan::new(64, 64, 64, 32).is_err());
        assert!(TilePlan::new(64, 64, 64, 8).is_err());
        assert!(TilePlan::new(50, 64, 64, 16).is_err());
    }
}
