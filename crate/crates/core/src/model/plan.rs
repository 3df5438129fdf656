use super::PFFNetConfig;

/// Output extents `(channels, height, width)` of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanEntry {
    pub layer: String,
    pub dims: (usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub height: usize,
    pub width: usize,
    /// Whether both extents are multiples of `2^levels`.
    pub divisible: bool,
    pub entries: Vec<PlanEntry>,
}

impl ShapePlan {
    /// Extents of `D_L` (and `U_L`).
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        self.entries
            .iter()
            .find(|e| e.layer == "res")
            .map(|e| e.dims)
            .expect("plan always has a bottleneck entry")
    }
}

/// Per-layer output extents for an `h x w` input.
pub fn shape_plan(h: usize, w: usize, config: &PFFNetConfig) -> ShapePlan {
    let m = config.size_multiple();
    let mut entries = Vec::new();
    let (mut ch, mut cw) = (h, w);
    entries.push(PlanEntry {
        layer: "enc.0".into(),
        dims: (config.base_channels, ch, cw),
    });
    for level in 1..=config.encoder_levels {
        ch = ch.div_ceil(2);
        cw = cw.div_ceil(2);
        entries.push(PlanEntry {
            layer: format!("enc.{level}"),
            dims: (config.channels(level), ch, cw),
        });
    }
    entries.push(PlanEntry {
        layer: "res".into(),
        dims: (config.bottleneck_channels(), ch, cw),
    });
    for level in (1..=config.encoder_levels).rev() {
        ch *= 2;
        cw *= 2;
        entries.push(PlanEntry {
            layer: format!("dec.{level}"),
            dims: (config.channels(level - 1), ch, cw),
        });
    }
    entries.push(PlanEntry {
        layer: "out".into(),
        dims: (config.image_channels, ch, cw),
    });
    ShapePlan {
        height: h,
        width: w,
        divisible: h.is_multiple_of(m) && w.is_multiple_of(m),
        entries,
    }
}
