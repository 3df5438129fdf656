//! Analytic peak-memory model of the inference path.
//!
//! The estimate replays the allocation order of whole-image or tiled
//! dehazing: every tensor's bytes are added when it is created and removed
//! when it is dropped, and each convolution adds its transient patch
//! workspace. The peak of that running total plus the parameter bytes is
//! the prediction.

use std::fmt;

use crate::model::{param_count, PFFNetConfig};
use crate::tensor::conv_chunk_columns;

use super::tiles::TilePlan;

/// Patch-matrix chunks materialised together during a scatter.
const SCATTER_GROUP: usize = 4;

/// Whole-image or tiled execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Whole,
    Tiled { tile: usize, overlap: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub height: usize,
    pub width: usize,
    pub strategy: Strategy,
    pub threads: usize,
    pub parameter_bytes: usize,
    /// Peak of feature maps, image buffers and conv workspace.
    pub activation_bytes: usize,
    /// Conv workspace included in `activation_bytes` at the peak.
    pub workspace_bytes: usize,
    /// Step at which the peak occurs.
    pub peak_stage: String,
    /// Peak of one tile's own buffers, independent of the image size.
    pub per_tile_bytes: Option<usize>,
}

impl MemoryEstimate {
    pub fn total_bytes(&self) -> usize {
        self.parameter_bytes + self.activation_bytes
    }
}

fn mib(b: usize) -> f64 {
    b as f64 / (1024.0 * 1024.0)
}

impl fmt::Display for MemoryEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let how = match self.strategy {
            Strategy::Whole => "whole image".to_string(),
            Strategy::Tiled { tile, overlap } => format!("tiles of {tile} with overlap {overlap}"),
        };
        writeln!(f, "memory estimate for {}x{} ({how}, {} threads)", self.height, self.width, self.threads)?;
        writeln!(f, "  parameters   {:>10.1} MiB", mib(self.parameter_bytes))?;
        writeln!(
            f,
            "  activations  {:>10.1} MiB  (peak at {}, incl. {:.1} MiB conv workspace)",
            mib(self.activation_bytes),
            self.peak_stage,
            mib(self.workspace_bytes)
        )?;
        if let Some(t) = self.per_tile_bytes {
            writeln!(f, "  per tile     {:>10.1} MiB", mib(t))?;
        }
        writeln!(f, "  total        {:>10.1} MiB", mib(self.total_bytes()))?;
        write!(
            f,
            "  model: live feature maps (c x h x w x 4 bytes, skip maps retained until fused) \
             + image copies + per-thread patch workspace, replayed in execution order"
        )
    }
}

/// Running total of live bytes.
struct Replay {
    live: usize,
    peak: usize,
    peak_workspace: usize,
    peak_stage: String,
}

impl Replay {
    fn new() -> Self {
        Replay {
            live: 0,
            peak: 0,
            peak_workspace: 0,
            peak_stage: String::new(),
        }
    }

    fn alloc(&mut self, bytes: usize) {
        self.live += bytes;
    }

    fn free(&mut self, bytes: usize) {
        self.live -= bytes;
    }

    /// Record the live total plus a transient `workspace`.
    fn mark(&mut self, stage: &str, workspace: usize) {
        if self.live + workspace > self.peak {
            self.peak = self.live + workspace;
            self.peak_workspace = workspace;
            self.peak_stage = stage.to_string();
        }
    }
}

const F32: usize = 4;

fn map(c: usize, h: usize, w: usize) -> usize {
    c * h * w * F32
}

/// Workspace of a gathering conv: one patch chunk per busy thread.
fn gather_workspace(rows: usize, cols: usize, threads: usize) -> usize {
    let len = conv_chunk_columns(rows, cols);
    let chunks = cols.div_ceil(len);
    threads.min(chunks) * rows * len * F32
}

/// Workspace of a scattering deconv: a group of patch chunks at once.
fn scatter_workspace(rows: usize, cols: usize) -> usize {
    let len = conv_chunk_columns(rows, cols);
    let chunks = cols.div_ceil(len);
    let group = SCATTER_GROUP.min(chunks);
    // the first group is the largest; only the final chunk may be short
    let cols_in_group = (group * len).min(cols);
    rows * cols_in_group * F32
}

/// Replay `predict` on a `1 x 3 x h x w` input already counted as live;
/// on return only the output map is added (the input is released).
fn replay_predict(r: &mut Replay, h: usize, w: usize, cfg: &PFFNetConfig, threads: usize) {
    let levels = cfg.encoder_levels;
    let k0 = cfg.stem_kernel;
    let c0 = cfg.channels(0);
    r.alloc(map(c0, h, w));
    r.mark("enc.0", gather_workspace(cfg.image_channels * k0 * k0, h * w, threads));
    r.free(map(cfg.image_channels, h, w));
    let mut kept = Vec::new();
    let (mut ch, mut cc) = (h, c0);
    let mut cw = w;
    for level in 1..=levels {
        let (nh, nw, nc) = (ch / 2, cw / 2, cfg.channels(level));
        r.alloc(map(nc, nh, nw));
        r.mark(&format!("enc.{level}"), gather_workspace(cc * 9, nh * nw, threads));
        if cfg.skip_connections {
            kept.push(map(cc, ch, cw));
        } else {
            r.free(map(cc, ch, cw));
        }
        (ch, cw, cc) = (nh, nw, nc);
    }
    let bottleneck = map(cc, ch, cw);
    let block_ws = gather_workspace(cc * 9, ch * cw, threads);
    for b in 0..cfg.res_blocks {
        let stage = format!("res.{b:02}");
        r.alloc(bottleneck); // hidden
        r.mark(&stage, block_ws);
        r.alloc(bottleneck); // block output
        r.mark(&stage, block_ws);
        r.free(bottleneck); // hidden
        if b > 0 {
            r.free(bottleneck); // previous block output
        }
    }
    if cfg.res_blocks == 0 {
        r.alloc(bottleneck);
    }
    r.free(bottleneck); // encoder output
    for level in (1..=levels).rev() {
        let (nh, nw, nc) = (ch * 2, cw * 2, cfg.channels(level - 1));
        r.alloc(map(nc, nh, nw));
        r.mark(&format!("dec.{level}"), scatter_workspace(nc * 9, ch * cw));
        r.free(map(cc, ch, cw));
        if let Some(skip) = kept.pop() {
            r.free(skip);
        }
        (ch, cw, cc) = (nh, nw, nc);
    }
    r.alloc(map(cfg.image_channels, h, w));
    r.mark("out", gather_workspace(cc * 9, h * w, threads));
    r.free(map(cc, h, w));
}

fn padded(x: usize, m: usize) -> usize {
    x.next_multiple_of(m).max(m)
}

/// Predicted peak heap use of dehazing an `h x w` RGB image, counting the
/// caller's input image and the returned output image.
pub fn memory_estimate(h: usize, w: usize, config: &PFFNetConfig, strategy: Strategy) -> MemoryEstimate {
    let threads = rayon::current_num_threads();
    let c = config.image_channels;
    let m = super::pad_multiple(config);
    let (ph, pw) = (padded(h, m), padded(w, m));
    let needs_pad = (ph, pw) != (h, w);
    let mut per_tile_bytes = None;
    let mut r = Replay::new();
    r.alloc(map(c, h, w)); // caller's image
    r.alloc(map(c, h, w)); // as a tensor
    if needs_pad {
        r.alloc(map(c, ph, pw));
        r.free(map(c, h, w));
    }
    match strategy {
        Strategy::Whole => {
            replay_predict(&mut r, ph, pw, config, threads);
        }
        Strategy::Tiled { tile, overlap } => {
            r.alloc(map(c, ph, pw)); // blend accumulator
            let plan = TilePlan::new(ph, pw, tile, overlap).ok();
            let (th, tw) = plan
                .as_ref()
                .and_then(|p| p.tiles.first().map(|t| (t.height, t.width)))
                .unwrap_or((tile.min(ph), tile.min(pw)));
            let mut alone = Replay::new();
            alone.alloc(map(c, th, tw));
            replay_predict(&mut alone, th, tw, config, threads);
            per_tile_bytes = Some(alone.peak);
            r.alloc(map(c, th, tw)); // tile window
            replay_predict(&mut r, th, tw, config, threads);
            r.free(map(c, th, tw)); // tile prediction, blended and dropped
            r.free(map(c, ph, pw)); // padded input
        }
    }
    if needs_pad {
        r.alloc(map(c, h, w));
        r.mark("unpad", 0);
        r.free(map(c, ph, pw));
    }
    r.alloc(map(c, h, w)); // output image
    r.mark("output", 0);
    MemoryEstimate {
        height: h,
        width: w,
        strategy,
        threads,
        parameter_bytes: param_count(config) * F32,
        activation_bytes: r.peak,
        workspace_bytes: r.peak_workspace,
        peak_stage: r.peak_stage,
        per_tile_bytes,
    }
}
