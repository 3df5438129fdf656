//! Acceptance suite: one pass/fail line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test --test acceptance`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use pffnet::data::{synthetic_pairs, ImageBuffer, InMemoryPatches};
use pffnet::gradcheck::suite::{run_suite, SUITE_TOLERANCE};
use pffnet::haze::{recover_exact, sample_haze_params, synthesize_haze, transmission_from_depth, DepthMap, T_FLOOR};
use pffnet::inference::{dehaze, dehaze_tiled, memory_estimate, Model, Strategy};
use pffnet::metrics::{psnr_from_mse, psnr_tensor, ssim_tensor};
use pffnet::model::{backward, forward, shape_plan};
use pffnet::tensor::reference::{conv2d_naive, deconv2d_naive};
use pffnet::tensor::{conv2d, deconv2d};
use pffnet::train::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, mse_loss, run, save_checkpoint, train, TrainConfig,
    TrainOutput, TrainSummary, Trainer,
};
use pffnet::{ConvSpec, Dims, PFFNetConfig, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{naive_psnr, naive_ssim};

// ---------------------------------------------------------------- allocator

/// System allocator that tracks live and peak heap bytes.
struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn grew(bytes: usize) {
    let now = LIVE.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grew(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grew(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                grew(new_size - layout.size());
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOCATOR: Counting = Counting;

/// Restart peak tracking from the current live total, which is returned.
fn reset_peak() -> usize {
    let live = LIVE.load(Ordering::Relaxed);
    PEAK.store(live, Ordering::Relaxed);
    live
}

fn peak() -> usize {
    PEAK.load(Ordering::Relaxed)
}

const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

fn gib(bytes: usize) -> f64 {
    bytes as f64 / GIB
}

// ------------------------------------------------------------------ harness

enum Verdict {
    Pass(String),
    Fail(String),
    NotApplicable(String),
}

type Outcome = Result<Verdict, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    Ok(if ok { Verdict::Pass(detail) } else { Verdict::Fail(detail) })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// --------------------------------------------------------------- criteria

fn benchmark_scale() -> Outcome {
    Ok(Verdict::NotApplicable(
        "benchmark-scale training (about 190K patches, 72 x 2000 iterations) is outside the desk budget; \
         covered by the substitute criteria 2-10"
            .into(),
    ))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let checks = run_suite(50, 30).map_err(err)?;
    let elapsed = start.elapsed();
    let worst = checks
        .iter()
        .max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
        .ok_or("empty suite")?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
    let checked: usize = checks.iter().map(|c| c.report.checked).sum();
    let skipped: usize = checks.iter().map(|c| c.report.skipped).sum();
    verdict(
        failed.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{} ops x 50 seeds, {checked} coordinates ({skipped} kink crossings skipped), worst {} rel err {:.2e} \
             (< {SUITE_TOLERANCE:e}), failing {failed:?}, {:.1} s (< 300 s)",
            checks.len(),
            worst.op,
            worst.report.max_rel_err,
            secs(elapsed)
        ),
    )
}

fn shape_contract() -> Outcome {
    let cfg = PFFNetConfig::default();
    let params = ParamStore::<f32>::init(&cfg, 0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for case in 0..200 {
        let (h, w) = (16 * rng.random_range(1..=12usize), 16 * rng.random_range(1..=12usize));
        let x = Tensor::<f32>::uniform(Dims::new(1, 3, h, w), 0.0, 1.0, &mut rng);
        let (out, trace) = forward(&x, &params, &cfg).map_err(err)?;
        let want = Dims::new(1, 256, h / 16, w / 16);
        let plan = shape_plan(h, w, &cfg);
        let planned = plan.bottleneck();
        if out.dims() != x.dims()
            || trace.bottleneck().dims() != want
            || planned != (256, h / 16, w / 16)
            || !plan.divisible
        {
            mismatches.push((case, h, w, out.dims(), trace.bottleneck().dims()));
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "200 sizes up to 192x192 on the full 18-block model: output = input, bottleneck = (256, h/16, w/16); \
             {} mismatches {:?}; {:.1} s",
            mismatches.len(),
            mismatches.first(),
            secs(start.elapsed())
        ),
    )
}

fn physics_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let (mut worst, mut compared) = (0.0f64, 0usize);
    for draw in 0..100u64 {
        let (h, w) = (rng.random_range(1..=48usize), rng.random_range(1..=48usize));
        let clear = Tensor::<f64>::uniform(Dims::new(1, 3, h, w), 0.0, 1.0, &mut rng);
        let depth: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..3.0)).collect();
        let depth = DepthMap::new(h, w, depth).map_err(err)?;
        let params = sample_haze_params(draw);
        let t = transmission_from_depth::<f64>(&depth, params.beta()).map_err(err)?;
        let hazy = synthesize_haze(&clear, &t, &params).map_err(err)?;
        let back = recover_exact(&hazy, &t, &params, T_FLOOR).map_err(err)?;
        for c in 0..3 {
            for (i, &tv) in t.data().iter().enumerate() {
                if tv >= T_FLOOR {
                    let j = c * h * w + i;
                    worst = worst.max((back.data()[j] - clear.data()[j]).abs());
                    compared += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-6 && compared > 0 && elapsed < Duration::from_secs(60),
        format!(
            "100 draws, {compared} samples with t >= {T_FLOOR}: max |J' - J| = {worst:.2e} (<= 1e-6), {:.2} s",
            secs(elapsed)
        ),
    )
}

/// The overfit task: tiny profile, 8 procedural 64x64 pairs, 500 full-batch
/// Adam steps at the constant learning rate 1e-4.
fn overfit(skip_connections: bool) -> Result<(TrainSummary, Duration), String> {
    let (hazy, clear) = synthetic_pairs(8, 64, 0).map_err(err)?;
    let data = InMemoryPatches::from_batches(&hazy, &clear).map_err(err)?;
    let mut cfg = TrainConfig {
        lr: 1e-4,
        batch_size: 8,
        iters_per_epoch: 500,
        total_epochs: 1,
        val_fraction: 0.0,
        ..TrainConfig::tiny()
    };
    cfg.model.skip_connections = skip_connections;
    let start = Instant::now();
    let summary = train(cfg, &data, &TrainOutput::default()).map_err(err)?;
    Ok((summary, start.elapsed()))
}

fn db(loss: f64) -> f64 {
    psnr_from_mse(loss, 1.0).db().unwrap_or(f64::INFINITY)
}

/// Means of consecutive 50-step windows.
fn window_means(losses: &[f64]) -> Vec<f64> {
    losses.chunks_exact(50).map(|w| w.iter().sum::<f64>() / 50.0).collect()
}

fn overfit_convergence(run: &Result<(TrainSummary, Duration), String>) -> Outcome {
    let (summary, elapsed) = run.as_ref().map_err(Clone::clone)?;
    let best = summary.losses.iter().copied().map(db).fold(f64::NEG_INFINITY, f64::max);
    let last = db(*summary.losses.last().ok_or("no steps")?);
    let means = window_means(&summary.losses);
    let rises: Vec<usize> = means.windows(2).enumerate().filter(|(_, w)| w[1] > w[0]).map(|(i, _)| (i + 1) * 50).collect();
    verdict(
        best >= 30.0 && rises.is_empty() && *elapsed < Duration::from_secs(600),
        format!(
            "training PSNR after 500 steps {last:.2} dB, best {best:.2} dB (need >= 30), 50-step loss means \
             {:.4} -> {:.4}, increases at {rises:?}, {:.1} s (< 600 s)",
            means.first().copied().unwrap_or(f64::NAN),
            means.last().copied().unwrap_or(f64::NAN),
            secs(*elapsed)
        ),
    )
}

fn ablation(with_skips: &Result<(TrainSummary, Duration), String>) -> Outcome {
    let (skip, _) = with_skips.as_ref().map_err(Clone::clone)?;
    let (noskip, _) = overfit(false)?;
    let reach_skip = skip.first_iteration_reaching(30.0);
    let reach_noskip = noskip.first_iteration_reaching(30.0);
    let directional = match (reach_skip, reach_noskip) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    let final_db = |s: &TrainSummary| s.losses.last().copied().map(db).unwrap_or(f64::NAN);

    let mut built = Vec::new();
    for blocks in [6, 12, 18, 24] {
        let cfg = PFFNetConfig::default().with_res_blocks(blocks);
        let params = ParamStore::<f32>::init(&cfg, 1).map_err(err)?;
        let x = Tensor::<f32>::uniform(Dims::new(1, 3, 32, 32), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let (out, trace) = forward(&x, &params, &cfg).map_err(err)?;
        let (_, grad) = mse_loss(&out, &x).map_err(err)?;
        let grads = backward(&trace, &grad, &params, &cfg).map_err(err)?;
        let finite = grads.iter().all(|(_, g)| g.all_finite());
        if grads.len() == params.len() && finite {
            built.push(blocks);
        }
    }
    verdict(
        directional && built == [6, 12, 18, 24],
        format!(
            "first step reaching 30 dB: skips {reach_skip:?}, no skips {reach_noskip:?} (final {:.2} vs {:.2} dB); \
             forward/backward ran for res_blocks {built:?} of [6, 12, 18, 24]",
            final_db(skip),
            final_db(&noskip)
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let zero = Tensor::<f64>::zeros(Dims::new(1, 3, 32, 32));
    let tenth = Tensor::<f64>::full(Dims::new(1, 3, 32, 32), 0.1);
    let closed = psnr_tensor(&zero, &tenth, 1.0).map_err(err)?.db().ok_or("infinite")?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut psnr_dev, mut ssim_dev, mut self_dev, mut offset_dev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(11..=40usize), rng.random_range(11..=40usize));
        let a = Tensor::<f64>::uniform(Dims::new(1, 3, h, w), 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(Dims::new(1, 3, h, w), 0.0, 1.0, &mut rng);
        let p = psnr_tensor(&a, &b, 1.0).map_err(err)?.db().ok_or("infinite")?;
        psnr_dev = psnr_dev.max((p - naive_psnr(&a, &b)).abs());
        ssim_dev = ssim_dev.max((ssim_tensor(&a, &b).map_err(err)? - naive_ssim(&a, &b)).abs());
        self_dev = self_dev.max((ssim_tensor(&a, &a).map_err(err)? - 1.0).abs());
        let base = a.map(|v| v * 0.9);
        let shifted = base.map(|v| v + 0.1);
        let p = psnr_tensor(&base, &shifted, 1.0).map_err(err)?.db().ok_or("infinite")?;
        offset_dev = offset_dev.max((p - 20.0).abs());
    }
    verdict(
        (closed - 20.0).abs() <= 1e-9 && offset_dev <= 1e-9 && self_dev <= 1e-9 && psnr_dev <= 1e-9 && ssim_dev <= 1e-9,
        format!(
            "constant 0.1 difference: {closed:.2} dB (|d| {:.1e}, shifted random images {offset_dev:.1e}); \
             |SSIM(a,a) - 1| {self_dev:.1e}; vs scalar loops on 20 pairs: PSNR {psnr_dev:.1e}, SSIM {ssim_dev:.1e}",
            (closed - 20.0).abs()
        ),
    )
}

fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64, String> {
    Ok(a.max_abs_diff(b).map_err(err)? / b.max_abs().max(1e-300))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut conv_worst, mut deconv_worst, mut adjoint_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0usize;
    for k in [1usize, 3, 5, 7] {
        for s in 1..=3usize {
            for p in 0..=k / 2 {
                for h in 1..=8usize {
                    for w in 1..=8usize {
                        let n = rng.random_range(1..=3usize);
                        let (ci, co) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
                        let spec = ConvSpec::new(k, s, p, ci, co).map_err(err)?;
                        let wt = Tensor::<f64>::uniform(spec.conv_weight_dims(), -1.0, 1.0, &mut rng);
                        let bias: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
                        if spec.conv_extent(h).is_some() && spec.conv_extent(w).is_some() {
                            let x = Tensor::<f64>::uniform(Dims::new(n, ci, h, w), -1.0, 1.0, &mut rng);
                            let fast = conv2d(&x, &wt, &bias, &spec).map_err(err)?;
                            conv_worst = conv_worst.max(rel_diff(&fast, &conv2d_naive(&x, &wt, &bias, &spec))?);
                            cases += 1;
                        }
                        // transposed conv: `h x w` is its input; it shares the weight
                        let dspec = ConvSpec::new(k, s, p, co, ci).map_err(err)?;
                        let (Some(oh), Some(ow)) = (dspec.deconv_extent(h), dspec.deconv_extent(w)) else {
                            continue;
                        };
                        let y = Tensor::<f64>::uniform(Dims::new(n, co, h, w), -1.0, 1.0, &mut rng);
                        let dbias: Vec<f64> = (0..ci).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let fast = deconv2d(&y, &wt, &dbias, &dspec).map_err(err)?;
                        deconv_worst = deconv_worst.max(rel_diff(&fast, &deconv2d_naive(&y, &wt, &dbias, &dspec))?);
                        cases += 1;
                        // <conv(x), y> = <x, deconv(y)> whenever the extents pair up
                        if spec.conv_extent(oh) == Some(h) && spec.conv_extent(ow) == Some(w) {
                            let x = Tensor::<f64>::uniform(Dims::new(n, ci, oh, ow), -1.0, 1.0, &mut rng);
                            let lhs = conv2d(&x, &wt, &vec![0.0; co], &spec).map_err(err)?.dot(&y).map_err(err)?;
                            let rhs = x
                                .dot(&deconv2d(&y, &wt, &vec![0.0; ci], &dspec).map_err(err)?)
                                .map_err(err)?;
                            adjoint_worst = adjoint_worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
                        }
                    }
                }
            }
        }
    }
    verdict(
        conv_worst <= 1e-6 && deconv_worst <= 1e-6 && adjoint_worst <= 1e-5,
        format!(
            "{cases} cases over every extent 1..=8, k in 1/3/5/7, s in 1..=3, all paddings, channels and batch <= 8: \
             rel err conv {conv_worst:.1e}, deconv {deconv_worst:.1e} (<= 1e-6), adjoint {adjoint_worst:.1e} (<= 1e-5)"
        ),
    )
}

fn uhd_path() -> Outcome {
    const H: usize = 2160;
    const W: usize = 3840;
    let cfg = PFFNetConfig::default();
    let model = Model::new(cfg, ParamStore::init(&cfg, 0).map_err(err)?).map_err(err)?;
    let data: Vec<f32> = (0..3 * H * W)
        .map(|i| {
            let (c, y, x) = (i / (H * W), (i / W) % H, i % W);
            0.5 + 0.3 * ((x as f32 * 0.01 + c as f32).sin() * (y as f32 * 0.013).cos())
        })
        .collect();
    let img = ImageBuffer::new(H, W, 3, data).map_err(err)?;
    let start = Instant::now();

    let estimate = memory_estimate(H, W, &cfg, Strategy::Whole);
    reset_peak();
    let out = dehaze(&img, &model).map_err(err)?;
    let whole_peak = peak();
    let whole_time = start.elapsed();
    let dims_ok = (out.height(), out.width()) == (H, W);
    drop(out);
    let ratio = whole_peak as f64 / estimate.total_bytes() as f64;

    let tiled_estimate = memory_estimate(H, W, &cfg, Strategy::Tiled { tile: 1024, overlap: 128 });
    let baseline = reset_peak();
    let tiled = dehaze_tiled(&img, &model, 1024, 128).map_err(err)?;
    let tiled_activation = peak() - baseline;
    let tiled_dims_ok = (tiled.height(), tiled.width()) == (H, W);
    let elapsed = start.elapsed();
    verdict(
        dims_ok && tiled_dims_ok && ratio <= 1.25 && gib(tiled_activation) < 2.0 && elapsed < Duration::from_secs(900),
        format!(
            "whole image {:.1} s, measured peak {:.2} GiB vs estimate {:.2} GiB (ratio {ratio:.3}, <= 1.25); \
             tiled 1024/128 activations {:.2} GiB (< 2, estimate {:.2} GiB); total {:.1} s (< 900 s)",
            secs(whole_time),
            gib(whole_peak),
            gib(estimate.total_bytes()),
            gib(tiled_activation),
            gib(tiled_estimate.total_bytes() - tiled_estimate.parameter_bytes - 4 * 3 * H * W),
            secs(elapsed)
        ),
    )
}

fn determinism() -> Outcome {
    let (hazy, clear) = synthetic_pairs(16, 32, 5).map_err(err)?;
    let data = InMemoryPatches::from_batches(&hazy, &clear).map_err(err)?;
    let cfg = TrainConfig {
        batch_size: 4,
        iters_per_epoch: 5,
        total_epochs: 3,
        val_fraction: 0.125,
        seed: 11,
        ..TrainConfig::tiny()
    };
    let fresh = || -> Result<Vec<u8>, String> {
        let s = train(cfg, &data, &TrainOutput::default()).map_err(err)?;
        Ok(encode_checkpoint(&s.checkpoint))
    };
    let a = fresh()?;
    let b = fresh()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(err)?;
    let c = pool.install(fresh)?;

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("interrupted.ckpt");
    let mut first = Trainer::new(cfg, &data).map_err(err)?;
    for _ in 0..7 {
        first.step().map_err(err)?;
    }
    save_checkpoint(&path, &first.checkpoint()).map_err(err)?;
    drop(first);
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).map_err(err)?, &data).map_err(err)?;
    let resumed = encode_checkpoint(&run(&mut resumed, &TrainOutput::default()).map_err(err)?.checkpoint);
    let round_trip = decode_checkpoint(&a).map(|ck| encode_checkpoint(&ck) == a).unwrap_or(false);
    verdict(
        a == b && a == c && a == resumed && round_trip,
        format!(
            "15-step runs: repeat identical {}, 3-thread pool identical {}, resume after step 7 identical {}, \
             checkpoint re-encode identical {round_trip} ({} bytes)",
            a == b,
            a == c,
            a == resumed,
            a.len()
        ),
    )
}

// --------------------------------------------------------------------- main

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; listing
    // requests get an empty answer.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut overfit_run: Option<Result<(TrainSummary, Duration), String>> = None;
    let criteria: Vec<(u32, &str)> = vec![
        (1, "benchmark-scale results"),
        (2, "gradient correctness"),
        (3, "shape contract"),
        (4, "physics round trip"),
        (5, "overfit convergence"),
        (6, "ablation directionality"),
        (7, "metrics oracle"),
        (8, "convolution oracle"),
        (9, "4K path"),
        (10, "determinism and persistence"),
    ];
    let (mut passed, mut failed, mut na) = (0, 0, 0);
    for (id, name) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match id {
            1 => benchmark_scale(),
            2 => gradient_correctness(),
            3 => shape_contract(),
            4 => physics_round_trip(),
            5 => overfit_convergence(overfit_run.get_or_insert_with(|| overfit(true))),
            6 => ablation(overfit_run.get_or_insert_with(|| overfit(true))),
            7 => metrics_oracle(),
            8 => conv_oracle(),
            9 => uhd_path(),
            10 => determinism(),
            _ => unreachable!(),
        }))
        .unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = secs(start.elapsed());
        let (tag, detail) = match outcome {
            Ok(Verdict::Pass(d)) => {
                passed += 1;
                ("PASS", d)
            }
            Ok(Verdict::Fail(d)) => {
                failed += 1;
                ("FAIL", d)
            }
            Ok(Verdict::NotApplicable(d)) => {
                na += 1;
                ("N/A ", d)
            }
            Err(e) => {
                failed += 1;
                ("FAIL", format!("error: {e}"))
            }
        };
        println!("[{tag}] criterion {id:>2} {name}: {detail} [{took:.1} s]");
    }
    println!("acceptance: {passed} passed, {failed} failed, {na} not applicable");
    if failed > 0 {
        std::process::exit(1);
    }
}
