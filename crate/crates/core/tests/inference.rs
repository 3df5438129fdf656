use pffnet::data::{synthetic_pairs, ImageBuffer, InMemoryPatches};
use pffnet::inference::{
    dehaze, dehaze_tiled, memory_estimate, pad_to_multiple, unpad, Model, Strategy, TilePlan,
};
use pffnet::metrics::psnr;
use pffnet::train::{train, TrainConfig, TrainOutput};
use pffnet::{Dims, PFFNetConfig, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::uniform(Dims::new(1, c, h, w), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
    ImageBuffer::from_tensor(&random_tensor(3, h, w, seed), 0).unwrap()
}

fn random_model(config: PFFNetConfig, seed: u64) -> Model {
    Model::new(config, ParamStore::init(&config, seed).unwrap()).unwrap()
}

#[test]
fn aligned_input_is_not_padded() {
    let t = random_tensor(3, 64, 64, 1);
    let (p, rec) = pad_to_multiple(&t, 16).unwrap();
    assert_eq!(p, t);
    assert_eq!(unpad(&p, &rec).unwrap(), t);
}

#[test]
fn odd_input_pads_to_next_multiple_and_restores() {
    let t = random_tensor(3, 50, 70, 2);
    let (p, rec) = pad_to_multiple(&t, 16).unwrap();
    assert_eq!(p.dims(), Dims::new(1, 3, 64, 80));
    // reflection without repeating the edge
    assert_eq!(p.at(0, 1, 50, 3), t.at(0, 1, 48, 3));
    assert_eq!(p.at(0, 2, 7, 72), t.at(0, 2, 7, 66));
    assert_eq!(unpad(&p, &rec).unwrap(), t);
}

#[test]
fn single_pixel_pads_by_repetition() {
    let t = Tensor::<f32>::full(Dims::new(1, 3, 1, 1), 0.25);
    let (p, rec) = pad_to_multiple(&t, 16).unwrap();
    assert_eq!(p, Tensor::full(Dims::new(1, 3, 16, 16), 0.25));
    assert_eq!(unpad(&p, &rec).unwrap(), t);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn pad_round_trip_is_exact(h in 1usize..=100, w in 1usize..=100, seed in any::<u64>()) {
        let t = random_tensor(2, h, w, seed);
        let (p, rec) = pad_to_multiple(&t, 16).unwrap();
        prop_assert_eq!(p.dims().h % 16, 0);
        prop_assert_eq!(p.dims().w % 16, 0);
        prop_assert!(p.dims().h - h < 16 && p.dims().w - w < 16);
        prop_assert_eq!(unpad(&p, &rec).unwrap(), t);
    }

    #[test]
    fn generated_plans_partition_unity(
        hb in 1usize..40, wb in 1usize..40, tb in 4usize..20, ob in 0usize..10,
    ) {
        let (tile, overlap) = (tb * 16, ob * 16);
        prop_assume!(2 * overlap < tile);
        let plan = TilePlan::new(hb * 16, wb * 16, tile, overlap).unwrap();
        prop_assert!(plan.partition_error() <= 1e-6);
        for t in &plan.tiles {
            prop_assert!(t.row + t.height <= plan.height && t.col + t.width <= plan.width);
        }
    }
}

#[test]
fn dehaze_keeps_extents_and_range() {
    let model = random_model(PFFNetConfig::tiny(), 3);
    for (h, w) in [(37, 53), (16, 16), (1, 9)] {
        let out = dehaze(&random_image(h, w, 4), &model).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (h, w, 3));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn grayscale_input_is_rejected() {
    let model = random_model(PFFNetConfig::tiny(), 3);
    let gray = ImageBuffer::new(16, 16, 1, vec![0.5; 256]).unwrap();
    assert!(dehaze(&gray, &model).is_err());
}

#[test]
fn single_tile_plan_equals_whole_image() {
    let model = random_model(PFFNetConfig::tiny(), 5);
    let img = random_image(90, 70, 6);
    let whole = dehaze(&img, &model).unwrap();
    let tiled = dehaze_tiled(&img, &model, 128, 32).unwrap();
    assert_eq!(whole, tiled);
}

#[test]
fn constant_model_is_reproduced_by_blending() {
    let cfg = PFFNetConfig::tiny();
    let mut params = ParamStore::<f32>::zeros(&cfg);
    params.insert("out.bias", Tensor::from_vec(Dims::new(3, 1, 1, 1), vec![0.2, 0.5, 0.7]).unwrap());
    let model = Model::new(cfg, params).unwrap();
    let img = random_image(200, 300, 7);
    let out = dehaze_tiled(&img, &model, 64, 16).unwrap();
    for (c, want) in [0.2f32, 0.5, 0.7].into_iter().enumerate() {
        let plane = &out.data()[c * 200 * 300..(c + 1) * 200 * 300];
        let dev = plane.iter().map(|v| (v - want).abs()).fold(0.0, f32::max);
        assert!(dev <= 1e-6, "channel {c}: {dev}");
    }
}

#[test]
fn seam_error_shrinks_as_overlap_grows() {
    let cfg = PFFNetConfig {
        base_channels: 8,
        res_blocks: 2,
        ..PFFNetConfig::default()
    };
    let model = random_model(cfg, 8);
    let img = random_image(400, 400, 9);
    let whole = dehaze(&img, &model).unwrap();
    let mad = |tiled: &ImageBuffer| {
        let n = whole.data().len() as f64;
        whole.data().iter().zip(tiled.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n
    };
    let errs: Vec<f64> = [32, 64, 96, 128]
        .into_iter()
        .map(|o| mad(&dehaze_tiled(&img, &model, 288, o).unwrap()))
        .collect();
    assert!(errs[0] > 0.0, "{errs:?}");
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
}

#[test]
fn overfit_model_improves_on_the_hazy_input() {
    let (hazy, clear) = synthetic_pairs(4, 32, 21).unwrap();
    let data = InMemoryPatches::from_batches(&hazy, &clear).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        iters_per_epoch: 400,
        total_epochs: 1,
        ..TrainConfig::tiny()
    };
    let summary = train(cfg, &data, &TrainOutput::default()).unwrap();
    let model = Model::from_checkpoint(summary.checkpoint).unwrap();
    for n in 0..4 {
        let h = ImageBuffer::from_tensor(&hazy, n).unwrap();
        let truth = ImageBuffer::from_tensor(&clear, n).unwrap();
        let before = psnr(&h, &truth, 1.0).unwrap().db().unwrap();
        let after = psnr(&dehaze(&h, &model).unwrap(), &truth, 1.0).unwrap().db().unwrap();
        assert!(after > before, "pair {n}: {after} <= {before}");
    }
}

#[test]
fn estimate_is_linear_in_pixels() {
    let cfg = PFFNetConfig::default();
    let a = memory_estimate(1024, 2048, &cfg, Strategy::Whole);
    let b = memory_estimate(2048, 2048, &cfg, Strategy::Whole);
    assert_eq!(a.parameter_bytes, b.parameter_bytes);
    assert_eq!(a.peak_stage, b.peak_stage);
    assert_eq!(2 * (a.activation_bytes - a.workspace_bytes), b.activation_bytes - b.workspace_bytes);
    let ratio = b.activation_bytes as f64 / a.activation_bytes as f64;
    assert!((1.9..=2.0).contains(&ratio), "{ratio}");
}

#[test]
fn estimate_orders_4k_above_1k() {
    let cfg = PFFNetConfig::default();
    let big = memory_estimate(2160, 3840, &cfg, Strategy::Whole);
    let small = memory_estimate(1024, 1024, &cfg, Strategy::Whole);
    assert!(big.total_bytes() > small.total_bytes());
    let text = big.to_string();
    assert!(text.contains("3840") && text.contains("total"), "{text}");
}

#[test]
fn tile_estimate_does_not_grow_with_the_image() {
    let cfg = PFFNetConfig::default();
    let tiled = Strategy::Tiled { tile: 512, overlap: 64 };
    let a = memory_estimate(1024, 1024, &cfg, tiled);
    let b = memory_estimate(4096, 4096, &cfg, tiled);
    assert_eq!(a.per_tile_bytes, b.per_tile_bytes);
    assert!(a.per_tile_bytes.unwrap() > 0);
    let whole = memory_estimate(4096, 4096, &cfg, Strategy::Whole);
    assert!(b.total_bytes() < whole.total_bytes());
}
