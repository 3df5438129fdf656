use pffnet::data::{synthetic_pairs, InMemoryPatches};
use pffnet::train::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, run, run_ablation, save_checkpoint, split_indices, train,
    Checkpoint, TrainConfig, TrainOutput, Trainer, Variant, LOG_HEADER,
};
use pffnet::{Error, ParamStore};

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        iters_per_epoch: 3,
        total_epochs: 2,
        ..TrainConfig::tiny()
    }
}

fn patches(count: usize) -> InMemoryPatches {
    let (hazy, clear) = synthetic_pairs(count, 16, 11).unwrap();
    InMemoryPatches::from_batches(&hazy, &clear).unwrap()
}

fn trained_checkpoint() -> Checkpoint {
    let data = patches(10);
    let mut t = Trainer::new(small_config(), &data).unwrap();
    for _ in 0..2 {
        t.step().unwrap();
    }
    t.checkpoint()
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let ckpt = trained_checkpoint();
    let bytes = encode_checkpoint(&ckpt);
    assert_eq!(&bytes[..4], b"PFFN");
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ckpt);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn corrupted_magic_is_rejected() {
    let mut bytes = encode_checkpoint(&trained_checkpoint());
    bytes[0] ^= 0xff;
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checkpoint(_))));
}

#[test]
fn truncation_is_rejected_at_every_length() {
    let bytes = encode_checkpoint(&trained_checkpoint());
    for cut in [0, 3, 7, 12, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "cut {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn mismatched_dims_name_the_offending_key() {
    let mut ckpt = trained_checkpoint();
    // Claim a wider model than the stored tensors describe.
    ckpt.config.model.base_channels *= 2;
    let err = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    assert!(err.to_string().contains("enc.0.weight"), "{err}");
}

#[test]
fn missing_tensor_is_named() {
    let mut ckpt = trained_checkpoint();
    let mut params = ParamStore::new();
    for (k, t) in ckpt.params.iter() {
        if k != "out.bias" {
            params.insert(k.clone(), t.clone());
        }
    }
    ckpt.params = params;
    let err = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap_err();
    assert!(err.to_string().contains("out.bias"), "{err}");
}

#[test]
fn resume_is_bitwise_identical_to_uninterrupted_training() {
    let data = patches(10);
    let cfg = TrainConfig {
        total_epochs: 3,
        ..small_config()
    };
    let straight = train(cfg, &data, &TrainOutput::default()).unwrap();

    let mut first = Trainer::new(cfg, &data).unwrap();
    for _ in 0..4 {
        first.step().unwrap();
    }
    let bytes = encode_checkpoint(&first.checkpoint());
    drop(first);
    let mut resumed = Trainer::from_checkpoint(decode_checkpoint(&bytes).unwrap(), &data).unwrap();
    let rest = run(&mut resumed, &TrainOutput::default()).unwrap();

    assert_eq!(rest.losses, straight.losses[4..]);
    assert_eq!(rest.checkpoint.params, straight.checkpoint.params);
    assert_eq!(rest.checkpoint.adam, straight.checkpoint.adam);
}

#[test]
fn same_seed_same_run_different_seed_different_run() {
    let data = patches(8);
    let a = train(small_config(), &data, &TrainOutput::default()).unwrap();
    let b = train(small_config(), &data, &TrainOutput::default()).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
    let c = train(TrainConfig { seed: 1, ..small_config() }, &data, &TrainOutput::default()).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn run_writes_log_and_epoch_checkpoints() {
    let data = patches(10);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        val_fraction: 0.2,
        ..small_config()
    };
    let summary = train(cfg, &data, &TrainOutput::in_dir(dir.path())).unwrap();
    assert_eq!(summary.losses.len(), 6);
    assert_eq!(summary.log.len(), 2);
    assert!(summary.log.iter().all(|r| r.val_psnr.is_some()));
    let log = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    let last = load_checkpoint(dir.path().join("epoch_002.ckpt")).unwrap();
    assert_eq!(last, summary.checkpoint);
    assert_eq!(last.progress.iteration, 6);
    assert!(dir.path().join("epoch_001.ckpt").exists());
}

#[test]
fn split_is_disjoint_covering_and_deterministic() {
    let (train, val) = split_indices(100, 0.02, 5);
    assert_eq!(val.len(), 2);
    assert_eq!(train.len(), 98);
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!(split_indices(100, 0.02, 5), (train, val));
}

#[test]
fn too_few_patches_for_a_batch_is_an_error() {
    let data = patches(3);
    let err = Trainer::new(small_config(), &data).err().unwrap();
    assert!(err.to_string().contains("batch"), "{err}");
}

#[test]
fn diverging_run_saves_diagnostic_checkpoint() {
    let data = patches(8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr: 1e30,
        ..small_config()
    };
    let err = train(cfg, &data, &TrainOutput::in_dir(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(dir.path().join("diverged.ckpt").exists());
}

#[test]
fn ablation_writes_one_curve_per_variant() {
    let data = patches(8);
    let dir = tempfile::tempdir().unwrap();
    let variants = [Variant::new(1, true), Variant::new(1, false)];
    let cfg = TrainConfig {
        total_epochs: 1,
        ..small_config()
    };
    let curves = run_ablation(&cfg, &variants, &data, &TrainOutput::in_dir(dir.path())).unwrap();
    assert_eq!(curves.len(), 2);
    for c in &curves {
        let text = std::fs::read_to_string(c.curve_file.as_ref().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
    assert!(dir.path().join("curve_blocks1_noskip.tsv").exists());
    assert_ne!(curves[0].summary.losses, curves[1].summary.losses);
}
