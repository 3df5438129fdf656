use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pffnet::data::{save_image, synthetic_scene, ImageBuffer, HAZE_MANIFEST_HEADER};

fn pffnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pffnet"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `count` clear PNGs and single-channel depth PGMs of 64x64 pixels.
fn write_scenes(dir: &Path, count: usize) -> (PathBuf, PathBuf) {
    let (clear, depth) = (dir.join("clear"), dir.join("depth"));
    std::fs::create_dir_all(&clear).unwrap();
    std::fs::create_dir_all(&depth).unwrap();
    for i in 0..count {
        let scene = synthetic_scene(64, 64, 3, i as u64).unwrap();
        save_image(&ImageBuffer::from_tensor(&scene.clear, 0).unwrap(), clear.join(format!("s{i}.png"))).unwrap();
        let d: Vec<f32> = scene.depth.values().iter().map(|&v| v as f32).collect();
        save_image(&ImageBuffer::new(64, 64, 1, d).unwrap(), depth.join(format!("s{i}.pgm"))).unwrap();
    }
    (clear, depth)
}

const SUBCOMMANDS: [&str; 7] = ["synth", "patches", "train", "ablate", "dehaze", "eval", "gradcheck"];
const REQUIRED: [&str; 7] = ["--clear", "--depth", "--out", "--hazy", "--in", "--checkpoint", "--help"];

#[test]
fn help_documents_every_flag_and_default() {
    for sub in SUBCOMMANDS {
        let out = pffnet(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        let text = stdout(&out);
        // one block per option: the flag line plus its indented description
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines() {
            if line.trim_start().starts_with('-') {
                blocks.push(line.to_string());
            } else if let Some(b) = blocks.last_mut() {
                b.push_str(line);
            }
        }
        assert!(blocks.len() >= 3, "{sub}: {text}");
        for b in &blocks {
            let flag = b.split_whitespace().find(|w| w.starts_with("--")).unwrap().trim_end_matches(',');
            if REQUIRED.contains(&flag) {
                continue;
            }
            assert!(b.contains("[default"), "{sub} {flag} lacks a default: {b}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&pffnet(&["gradcheck", "--bogus"])), 2);
    assert_eq!(code(&pffnet(&["dehaze", "--in", "a", "--out", "b", "--checkpoint", "c", "--overlap", "64"])), 2);
    assert_eq!(code(&pffnet(&["train", "--out", out])), 2);
    assert_eq!(code(&pffnet(&["train", "--synthetic", "8", "--data", "x", "--out", out])), 2);
    assert_eq!(code(&pffnet(&["train", "--synthetic", "8", "--profile", "huge", "--out", out])), 2);
    assert_eq!(code(&pffnet(&["train", "--synthetic", "8", "--set", "depth=3", "--out", out])), 2);
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lr = fast\n").unwrap();
    assert_eq!(code(&pffnet(&["train", "--synthetic", "8", "--config", s(&cfg), "--out", out])), 2);
    assert_eq!(code(&pffnet(&["ablate", "--synthetic", "8", "--skips", "sometimes", "--out", out])), 2);
}

#[test]
fn operational_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = pffnet(&["dehaze", "--in", "x.png", "--out", "y.png", "--checkpoint", s(&missing)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
}

#[test]
fn synth_writes_hazy_images_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (clear, depth) = write_scenes(dir.path(), 5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pffnet(&["synth", "--clear", s(&clear), "--depth", s(&depth), "--out", s(out), "--seed", "9"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = std::fs::read_to_string(a.join("params.tsv")).unwrap();
    let rows: Vec<&str> = manifest.lines().collect();
    assert_eq!(rows[0], HAZE_MANIFEST_HEADER);
    assert_eq!(rows.len(), 6);
    for row in &rows[1..] {
        let f: Vec<f64> = row.split('\t').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(f[..3].iter().all(|v| (0.7..=1.0).contains(v)), "{row}");
        assert!((0.6..=1.8).contains(&f[3]), "{row}");
    }
    for i in 0..5 {
        let name = format!("s{i}.png");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(manifest, std::fs::read_to_string(b.join("params.tsv")).unwrap());
}

#[test]
fn synth_reports_missing_counterparts_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (clear, depth) = write_scenes(dir.path(), 3);
    std::fs::copy(clear.join("s0.png"), clear.join("lonely.png")).unwrap();
    let out_dir = dir.path().join("out");
    let o = pffnet(&["synth", "--clear", s(&clear), "--depth", s(&depth), "--out", s(&out_dir)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lonely.png"));
    assert_eq!(std::fs::read_to_string(out_dir.join("params.tsv")).unwrap().lines().count(), 4);
}

/// synth -> patches -> train -> dehaze -> eval on 64x64 scenes.
#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (clear, depth) = write_scenes(root, 5);
    let hazy = root.join("hazy");
    assert_eq!(code(&pffnet(&["synth", "--clear", s(&clear), "--depth", s(&depth), "--out", s(&hazy)])), 0);
    // params.tsv sits next to the hazy images but is not an image
    let patches = root.join("patches");
    let o = pffnet(&[
        "patches", "--hazy", s(&hazy), "--clear", s(&clear), "--out", s(&patches), "--crop", "32", "--stride", "32",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("240 patches"), "{}", stdout(&o));

    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, "profile = tiny\nbatch_size = 4\niters_per_epoch = 3\ntotal_epochs = 2\nval_fraction = 0.05\n").unwrap();
    let run = root.join("run");
    let o = pffnet(&["train", "--config", s(&cfg), "--data", s(&patches), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.tsv", "epoch_001.ckpt", "epoch_002.ckpt", "final.ckpt", "config.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(!log.lines().nth(1).unwrap().contains("\t-\t"), "validation PSNR missing: {log}");

    let ckpt = run.join("final.ckpt");
    let out_png = root.join("one.png");
    let o = pffnet(&["dehaze", "--in", s(&hazy.join("s1.png")), "--out", s(&out_png), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = pffnet::data::load_image(&out_png).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (64, 64, 3));

    let restored = root.join("restored");
    let o = pffnet(&[
        "dehaze", "--in", s(&hazy), "--out", s(&restored), "--checkpoint", s(&ckpt), "--tile", "64", "--overlap",
        "16", "--estimate",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("memory estimate"));
    assert_eq!(pffnet::data::list_images(&restored).unwrap().len(), 5);

    let pairs = root.join("pairs.tsv");
    let list: String = (0..5).map(|i| format!("restored/s{i}.png\tclear/s{i}.png\n")).collect();
    std::fs::write(&pairs, format!("# restored\treference\n{list}")).unwrap();
    let report = root.join("report.tsv");
    let o = pffnet(&["eval", "--pairs", s(&pairs), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("PSNR (dB)") && table.contains("SSIM") && table.contains("mean"), "{table}");
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().filter(|l| l.starts_with(char::is_numeric)).count(), 5);

    let o = pffnet(&["eval", "--restored", s(&restored), "--reference", s(&clear)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), table);
}

#[test]
fn seeded_training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--profile", "tiny", "--synthetic", "8", "--synthetic-size", "16", "--out", s(out)];
        args.extend_from_slice(extra);
        let o = pffnet(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let settings = ["--set", "iters_per_epoch=3", "--set", "total_epochs=2", "--set", "batch_size=4", "--seed", "5"];
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train(&a, &settings);
    train(&b, &settings);
    let final_a = std::fs::read(a.join("final.ckpt")).unwrap();
    assert_eq!(final_a, std::fs::read(b.join("final.ckpt")).unwrap());
    let first = a.join("epoch_001.ckpt");
    train(&c, &["--resume", s(&first)]);
    assert_eq!(final_a, std::fs::read(c.join("final.ckpt")).unwrap());
}

#[test]
fn gradcheck_reports_every_operation() {
    let o = pffnet(&["gradcheck", "--seeds", "1", "--samples", "2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    for op in ["conv2d", "deconv2d", "relu", "residual_block", "tiny_network"] {
        assert!(text.contains(op), "{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn ablate_writes_a_curve_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let o = pffnet(&[
        "ablate", "--profile", "tiny", "--synthetic", "4", "--synthetic-size", "16", "--blocks", "1,2", "--skips",
        "both", "--set", "batch_size=4", "--set", "iters_per_epoch=2", "--set", "total_epochs=1", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["blocks1", "blocks1_noskip", "blocks2", "blocks2_noskip"] {
        assert!(out.join(format!("curve_{name}.tsv")).exists(), "{name}");
    }
}
