use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{assemble, epoch_order, PatchSource};
use crate::error::{Error, Result};
use crate::metrics::{psnr_from_mse, Psnr};
use crate::model::{backward, forward, predict, ParamStore};
use crate::tensor::Tensor;

use super::{adam_step, mse_loss, save_checkpoint, AdamState, Checkpoint, Progress, TrainConfig};

/// Stream id of the train/validation split permutation, distinct from
/// every epoch's shuffle stream.
const SPLIT_STREAM: u64 = u64::MAX;

/// A view of selected patches of another source.
pub struct Subset<'a, S: ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<S: PatchSource + ?Sized> PatchSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn patch(&self, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let i = *self
            .indices
            .get(index)
            .ok_or_else(|| Error::invalid(format!("patch {index} out of range")))?;
        self.source.patch(i)
    }
}

/// Deterministic `(train, validation)` split of `0..len`; the validation
/// share is rounded down.
pub fn split_indices(len: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    let n_val = ((len as f64) * val_fraction).floor() as usize;
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub iteration: u64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub val_psnr: Option<Psnr>,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch\titer\tloss\tval_psnr\twall_seconds";

impl LogRow {
    pub fn to_tsv(&self) -> String {
        let val = self.val_psnr.map_or_else(|| "-".to_string(), |p| p.to_string());
        format!(
            "{}\t{}\t{:.8}\t{}\t{:.3}",
            self.epoch, self.iteration, self.loss, val, self.wall_seconds
        )
    }
}

pub fn render_log(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.to_tsv());
    }
    out
}

/// Mutable training state: parameters, optimizer and schedule position.
pub struct Trainer<'a, S: ?Sized> {
    pub config: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    pub progress: Progress,
    train: Subset<'a, S>,
    val: Subset<'a, S>,
    /// Permutation of the current data epoch.
    order: Vec<usize>,
}

impl<'a, S: PatchSource + ?Sized> Trainer<'a, S> {
    /// Fresh parameters initialised from `config.seed`.
    pub fn new(config: TrainConfig, source: &'a S) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config.model, config.seed)?;
        let adam = AdamState::new(&params);
        Self::assemble(config, params, adam, Progress::default(), source)
    }

    /// Continue exactly where `ckpt` left off. A checkpoint without
    /// optimizer state starts Adam from zero moments (fine-tuning).
    pub fn from_checkpoint(ckpt: Checkpoint, source: &'a S) -> Result<Self> {
        ckpt.config.validate()?;
        ckpt.params.validate(&ckpt.config.model)?;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(&ckpt.params));
        Self::assemble(ckpt.config, ckpt.params, adam, ckpt.progress, source)
    }

    fn assemble(
        config: TrainConfig,
        params: ParamStore<f32>,
        adam: AdamState,
        progress: Progress,
        source: &'a S,
    ) -> Result<Self> {
        let (train, val) = split_indices(source.len(), config.val_fraction, config.seed);
        if train.len() < config.batch_size {
            return Err(Error::invalid(format!(
                "{} training patches cannot fill a batch of {}",
                train.len(),
                config.batch_size
            )));
        }
        let order = epoch_order(train.len(), config.seed, progress.data_epoch);
        Ok(Trainer {
            config,
            params,
            adam,
            progress,
            train: Subset { source, indices: train },
            val: Subset { source, indices: val },
            order,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config,
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            progress: self.progress,
        }
    }

    pub fn validation_size(&self) -> usize {
        self.val.len()
    }

    fn next_batch(&mut self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let bs = self.config.batch_size;
        if (self.progress.cursor as usize + 1) * bs > self.order.len() {
            self.progress.data_epoch += 1;
            self.progress.cursor = 0;
            self.order = epoch_order(self.train.len(), self.config.seed, self.progress.data_epoch);
        }
        let start = self.progress.cursor as usize * bs;
        let batch = assemble(&self.train, &self.order[start..start + bs])?;
        self.progress.cursor += 1;
        Ok(batch)
    }

    /// One Adam step on the next batch; returns the batch loss measured
    /// before the update.
    pub fn step(&mut self) -> Result<f64> {
        let before = self.progress;
        let (hazy, clear) = self.next_batch()?;
        let model = self.config.model;
        let (out, trace) = forward(&hazy, &self.params, &model)?;
        let (loss, grad) = mse_loss(&out, &clear)?;
        if !loss.is_finite() {
            self.progress = before;
            return Err(Error::NonFinite(format!("training loss at iteration {}", before.iteration)));
        }
        let grads = backward(&trace, &grad, &self.params, &model)?;
        drop(trace);
        adam_step(&mut self.params, &grads, &mut self.adam, &self.config.adam())?;
        self.progress.iteration += 1;
        Ok(loss)
    }

    /// PSNR of the clamped prediction over the validation patches, or
    /// `None` without a validation split.
    pub fn validate(&self) -> Result<Option<Psnr>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..self.val.len() {
            let (hazy, clear) = self.val.patch(i)?;
            let mut out = predict(hazy, &self.params, &self.config.model)?;
            out.map_inplace(|v| v.clamp(0.0, 1.0));
            let (mse, _) = mse_loss(&out, &clear)?;
            sum += mse * clear.len() as f64;
            count += clear.len();
        }
        Ok(Some(psnr_from_mse(sum / count as f64, 1.0)))
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub log: Vec<LogRow>,
    /// Loss of every step run by this call, in order.
    pub losses: Vec<f64>,
    pub checkpoint: Checkpoint,
}

impl TrainSummary {
    /// First 1-based iteration whose training loss reaches `db` decibels.
    pub fn first_iteration_reaching(&self, db: f64) -> Option<usize> {
        self.losses
            .iter()
            .position(|&l| psnr_from_mse(l, 1.0).db().is_none_or(|p| p >= db))
            .map(|i| i + 1)
    }
}

/// Where [`train`] writes its log and per-epoch checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

impl TrainOutput {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        TrainOutput { dir: Some(dir.into()) }
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Run the remaining schedule of `trainer` (`total_epochs x
/// iters_per_epoch` steps overall). Appends to `metrics.tsv` and writes
/// one checkpoint per epoch when `output` names a directory. A non-finite
/// loss aborts after writing `diverged.ckpt`.
pub fn run<S: PatchSource + ?Sized>(trainer: &mut Trainer<'_, S>, output: &TrainOutput) -> Result<TrainSummary> {
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let log_path = output.path("metrics.tsv");
    if let Some(p) = &log_path {
        if trainer.progress.iteration == 0 || !p.exists() {
            std::fs::write(p, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(p, e))?;
        }
    }
    let cfg = trainer.config;
    let per_epoch = cfg.iters_per_epoch as u64;
    let start = Instant::now();
    let mut summary_log = Vec::new();
    let mut losses = Vec::new();
    let mut epoch_sum = 0.0;
    let mut epoch_steps = 0usize;
    while trainer.progress.iteration < cfg.total_iters() {
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e @ Error::NonFinite(_)) => {
                if let Some(p) = output.path("diverged.ckpt") {
                    save_checkpoint(&p, &trainer.checkpoint())?;
                    log::error!("training diverged; state written to {}", p.display());
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        epoch_sum += loss;
        epoch_steps += 1;
        if trainer.progress.iteration.is_multiple_of(per_epoch) {
            let epoch = (trainer.progress.iteration / per_epoch) as usize;
            let val_psnr = if cfg.eval_every > 0 && epoch.is_multiple_of(cfg.eval_every) {
                trainer.validate()?
            } else {
                None
            };
            let row = LogRow {
                epoch,
                iteration: trainer.progress.iteration,
                loss: epoch_sum / epoch_steps as f64,
                val_psnr,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            log::info!("{}", row.to_tsv());
            if let Some(p) = &log_path {
                append_line(p, &row.to_tsv())?;
            }
            if let Some(p) = output.path(&epoch_checkpoint_name(epoch)) {
                save_checkpoint(&p, &trainer.checkpoint())?;
            }
            summary_log.push(row);
            (epoch_sum, epoch_steps) = (0.0, 0);
        }
    }
    Ok(TrainSummary {
        log: summary_log,
        losses,
        checkpoint: trainer.checkpoint(),
    })
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Train from scratch on `source` for the full schedule.
pub fn train<S: PatchSource + ?Sized>(config: TrainConfig, source: &S, output: &TrainOutput) -> Result<TrainSummary> {
    if source.is_empty() {
        return Err(Error::invalid("cannot train on an empty patch set"));
    }
    let mut trainer = Trainer::new(config, source)?;
    run(&mut trainer, output)
}
