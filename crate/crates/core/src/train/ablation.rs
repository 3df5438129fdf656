use std::path::PathBuf;

use crate::data::PatchSource;
use crate::error::{Error, Result};

use super::{render_log, train, TrainConfig, TrainOutput, TrainSummary};

/// One architecture variant of an ablation study.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub res_blocks: usize,
    pub skip_connections: bool,
}

impl Variant {
    pub fn new(res_blocks: usize, skip_connections: bool) -> Self {
        let name = if skip_connections {
            format!("blocks{res_blocks}")
        } else {
            format!("blocks{res_blocks}_noskip")
        };
        Variant {
            name,
            res_blocks,
            skip_connections,
        }
    }
}

/// Variants for the block-count sweep `{6, 12, 18, 24}` with skips.
pub fn block_sweep() -> Vec<Variant> {
    [6, 12, 18, 24].into_iter().map(|b| Variant::new(b, true)).collect()
}

#[derive(Clone, Debug)]
pub struct AblationCurve {
    pub variant: Variant,
    pub summary: TrainSummary,
    pub curve_file: Option<PathBuf>,
}

/// Train every variant from the same seed on the same data. With an
/// output directory, each variant's per-epoch curve goes to
/// `curve_<name>.tsv` and its run files to `<name>/`.
pub fn run_ablation<S: PatchSource + ?Sized>(
    base: &TrainConfig,
    variants: &[Variant],
    source: &S,
    output: &TrainOutput,
) -> Result<Vec<AblationCurve>> {
    let mut names: Vec<&str> = variants.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate variant name {:?}", w[0])));
    }
    variants
        .iter()
        .map(|variant| {
            let mut cfg = *base;
            cfg.model.res_blocks = variant.res_blocks;
            cfg.model.skip_connections = variant.skip_connections;
            let run_dir = output.dir.as_ref().map(|d| TrainOutput::in_dir(d.join(&variant.name)));
            let summary = train(cfg, source, run_dir.as_ref().unwrap_or(&TrainOutput::default()))?;
            let curve_file = match &output.dir {
                Some(d) => {
                    let path = d.join(format!("curve_{}.tsv", variant.name));
                    std::fs::write(&path, render_log(&summary.log)).map_err(|e| Error::io(&path, e))?;
                    Some(path)
                }
                None => None,
            };
            Ok(AblationCurve {
                variant: variant.clone(),
                summary,
                curve_file,
            })
        })
        .collect()
}
