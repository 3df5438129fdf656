//! Resolution of the training configuration from profile, file and flags.

use std::path::Path;

use pffnet::kv::{self, KeyValue};
use pffnet::train::TrainConfig;

use crate::{CliError, RunArgs};

fn profile(name: &str) -> Result<TrainConfig, CliError> {
    match name {
        "default" => Ok(TrainConfig::default()),
        "tiny" => Ok(TrainConfig::tiny()),
        other => Err(CliError::Usage(format!(
            "unknown profile {other:?} (expected \"default\" or \"tiny\")"
        ))),
    }
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    kv::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_override(raw: &str) -> Result<(String, String), CliError> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {raw:?}")))
}

/// Profile, then the config file, then `--set` pairs, then `--seed`.
pub fn resolve(args: &RunArgs) -> Result<TrainConfig, CliError> {
    let mut pairs = match &args.config {
        Some(path) => read_pairs(path)?,
        None => Vec::new(),
    };
    let mut name = args.profile.clone();
    if let Some(i) = pairs.iter().position(|(k, _)| k == "profile") {
        name = pairs.remove(i).1;
    }
    let mut cfg = profile(&name)?;
    cfg.apply(&pairs)?;
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    cfg.apply(&overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}
