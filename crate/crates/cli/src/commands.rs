//! Subcommand implementations: argument wiring around the library.

use std::path::{Path, PathBuf};

use pffnet::data::{
    build_patchset, depth_from_image, derive_seed, haze_image, list_images, load_image, pair_by_stem, save_image,
    synthetic_pairs, HazeRecord, ImageBuffer, InMemoryPatches, PatchSet, PatchSource, ScenePair, HAZE_MANIFEST_HEADER,
};
use pffnet::gradcheck::suite::run_suite;
use pffnet::inference::{dehaze as dehaze_whole, dehaze_tiled, memory_estimate, Model, Strategy};
use pffnet::kv::{self, KeyValue};
use pffnet::metrics::{evaluate_pairs, psnr_from_mse};
use pffnet::train::{
    load_checkpoint, run, run_ablation, save_checkpoint, TrainConfig, TrainOutput, TrainSummary, Trainer, Variant,
};

use crate::settings::resolve;
use crate::{AblateArgs, CliError, DehazeArgs, EvalArgs, GradcheckArgs, PatchesArgs, RunArgs, SynthArgs, TrainArgs};

type CmdResult = Result<(), CliError>;

fn io_failure(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

/// Report per-item failures and turn them into the exit status.
fn finish(failures: usize, what: &str) -> CmdResult {
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{failures} {what} failed")))
    }
}

fn report_unmatched(unmatched: &[PathBuf]) -> usize {
    for path in unmatched {
        eprintln!("error: {}: no counterpart with the same file stem", path.display());
    }
    unmatched.len()
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let found = pair_by_stem(&args.clear, &args.depth)?;
    let mut failures = report_unmatched(&found.unmatched);
    create_dir(&args.out)?;
    let mut manifest = format!("{HAZE_MANIFEST_HEADER}\n");
    for (index, (stem, clear_path, depth_path)) in found.pairs.iter().enumerate() {
        let record = HazeRecord::sample(stem.clone(), derive_seed(args.seed, index as u64));
        let out_path = args.out.join(format!("{stem}.png"));
        let result = (|| -> pffnet::Result<()> {
            let clear = load_image(clear_path)?;
            let depth = depth_from_image(&load_image(depth_path)?)?;
            save_image(&haze_image(&clear, &depth, &record.params)?, &out_path)
        })();
        match result {
            Ok(()) => {
                manifest.push_str(&record.to_tsv());
                manifest.push('\n');
            }
            Err(e) => {
                eprintln!("error: {stem}: {e}");
                failures += 1;
            }
        }
    }
    let path = args.out.join("params.tsv");
    std::fs::write(&path, manifest).map_err(|e| io_failure(&path, e))?;
    println!("{} hazy images written to {}", found.pairs.len() - failures.min(found.pairs.len()), args.out.display());
    finish(failures, "images")
}

pub fn patches(args: &PatchesArgs) -> CmdResult {
    if args.crop == 0 || args.stride == 0 {
        return Err(CliError::Usage("--crop and --stride must be positive".into()));
    }
    let found = pair_by_stem(&args.hazy, &args.clear)?;
    let failures = report_unmatched(&found.unmatched);
    let scenes: Vec<ScenePair> = found
        .pairs
        .into_iter()
        .map(|(id, hazy, clear)| ScenePair { id, hazy, clear })
        .collect();
    let set = build_patchset(&scenes, args.crop, args.stride, !args.no_augment)?;
    create_dir(&args.out)?;
    let path = args.out.join("manifest.tsv");
    set.save_manifest(&path)?;
    println!("{} patches from {} scenes written to {}", set.len(), scenes.len(), path.display());
    finish(failures, "files")
}

/// Training patches from a manifest or procedural pairs.
fn load_source(args: &RunArgs, seed: u64) -> Result<Box<dyn PatchSource>, CliError> {
    if let Some(count) = args.synthetic {
        let (hazy, clear) = synthetic_pairs(count, args.synthetic_size, seed)?;
        return Ok(Box::new(InMemoryPatches::from_batches(&hazy, &clear)?));
    }
    let data = args.data.as_ref().expect("clap requires --data or --synthetic");
    let manifest = if data.is_dir() { data.join("manifest.tsv") } else { data.clone() };
    Ok(Box::new(PatchSet::load_manifest(manifest)?))
}

fn describe(summary: &TrainSummary) -> String {
    match summary.losses.last() {
        Some(&loss) => format!(
            "{} steps, final loss {loss:.6} ({} training PSNR)",
            summary.losses.len(),
            psnr_from_mse(loss, 1.0)
        ),
        None => "no steps left to run".to_string(),
    }
}

fn write_config(dir: &Path, cfg: &TrainConfig) -> CmdResult {
    let path = dir.join("config.txt");
    std::fs::write(&path, kv::render(&cfg.to_pairs())).map_err(|e| io_failure(&path, e))
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let (ckpt, cfg) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let cfg = ckpt.config;
            (Some(ckpt), cfg)
        }
        None => (None, resolve(&args.run)?),
    };
    let source = load_source(&args.run, cfg.seed)?;
    create_dir(&args.run.out)?;
    write_config(&args.run.out, &cfg)?;
    let mut trainer = match ckpt {
        Some(ckpt) => Trainer::from_checkpoint(ckpt, source.as_ref())?,
        None => Trainer::new(cfg, source.as_ref())?,
    };
    let summary = run(&mut trainer, &TrainOutput::in_dir(&args.run.out))?;
    save_checkpoint(args.run.out.join("final.ckpt"), &summary.checkpoint)?;
    println!("{}", describe(&summary));
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> CmdResult {
    let cfg = resolve(&args.run)?;
    let skips: &[bool] = match args.skips.as_str() {
        "on" => &[true],
        "off" => &[false],
        "both" => &[true, false],
        other => return Err(CliError::Usage(format!("--skips expects on, off or both, got {other:?}"))),
    };
    let variants: Vec<Variant> = args
        .blocks
        .iter()
        .flat_map(|&b| skips.iter().map(move |&s| Variant::new(b, s)))
        .collect();
    let source = load_source(&args.run, cfg.seed)?;
    create_dir(&args.run.out)?;
    write_config(&args.run.out, &cfg)?;
    let curves = run_ablation(&cfg, &variants, source.as_ref(), &TrainOutput::in_dir(&args.run.out))?;
    for c in &curves {
        println!("{:<20} {}", c.variant.name, describe(&c.summary));
    }
    Ok(())
}

fn dehaze_one(model: &Model, args: &DehazeArgs, input: &Path, output: &Path) -> pffnet::Result<()> {
    let img = load_image(input)?;
    let strategy = match args.tile {
        Some(tile) => Strategy::Tiled {
            tile,
            overlap: args.overlap,
        },
        None => Strategy::Whole,
    };
    if args.estimate {
        println!("{}", memory_estimate(img.height(), img.width(), &model.config, strategy));
    }
    let out = match strategy {
        Strategy::Whole => dehaze_whole(&img, model)?,
        Strategy::Tiled { tile, overlap } => dehaze_tiled(&img, model, tile, overlap)?,
    };
    save_image(&out, output)
}

pub fn dehaze(args: &DehazeArgs) -> CmdResult {
    let model = Model::load(&args.checkpoint)?;
    if !args.input.is_dir() {
        dehaze_one(&model, args, &args.input, &args.out)?;
        println!("wrote {}", args.out.display());
        return Ok(());
    }
    create_dir(&args.out)?;
    let mut failures = 0;
    let images = list_images(&args.input)?;
    for (stem, path) in &images {
        let out = args.out.join(format!("{stem}.png"));
        match dehaze_one(&model, args, path, &out) {
            Ok(()) => log::info!("{} -> {}", path.display(), out.display()),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    println!("{} of {} images written to {}", images.len() - failures, images.len(), args.out.display());
    finish(failures, "images")
}

/// `(restored, reference)` paths from a two-column TSV.
fn read_pair_list(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((a, b)) = line.split_once('\t') else {
            return Err(CliError::Failed(format!(
                "{} line {}: expected restored<TAB>reference",
                path.display(),
                lineno + 1
            )));
        };
        out.push((base.join(a), base.join(b)));
    }
    Ok(out)
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let (paths, mut failures) = match (&args.pairs, &args.restored, &args.reference) {
        (Some(list), _, _) => (read_pair_list(list)?, 0),
        (None, Some(restored), Some(reference)) => {
            let found = pair_by_stem(restored, reference)?;
            let unmatched = report_unmatched(&found.unmatched);
            (found.pairs.into_iter().map(|(_, a, b)| (a, b)).collect(), unmatched)
        }
        _ => return Err(CliError::Usage("give --pairs or both --restored and --reference".into())),
    };
    let mut loaded: Vec<(ImageBuffer, ImageBuffer)> = Vec::with_capacity(paths.len());
    for (restored, reference) in &paths {
        match load_image(restored).and_then(|a| Ok((a, load_image(reference)?))) {
            Ok(pair) => loaded.push(pair),
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
            }
        }
    }
    let report = evaluate_pairs(&loaded);
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_tsv()).map_err(|e| io_failure(out, e))?;
    }
    for (i, why) in &report.skipped {
        eprintln!("error: pair {i}: {why}");
    }
    finish(failures + report.skipped.len(), "pairs")
}

pub fn gradcheck(args: &GradcheckArgs) -> CmdResult {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let checks = run_suite(args.seeds, args.samples)?;
    println!("{:<16} {:>6} {:>9} {:>8} {:>12}  result", "op", "seeds", "checked", "skipped", "max rel err");
    let mut failures = 0;
    for c in &checks {
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        failures += usize::from(!c.passed());
        println!(
            "{:<16} {:>6} {:>9} {:>8} {:>12.3e}  {verdict}",
            c.op, c.seeds, c.report.checked, c.report.skipped, c.report.max_rel_err
        );
    }
    finish(failures, "gradient checks")
}
