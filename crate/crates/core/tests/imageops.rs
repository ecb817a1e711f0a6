mod common;

use lrfr::datagen::{generate_dataset, DatasetSpec};
use lrfr::imageops::{
    classify_difficulty, degrade, resample_bicubic, sample_resolution, ssim, AugmentationPlan, DifficultyTier,
    ImageBuffer,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn resample_matches_kernel_sum_oracle() {
    let mut r = common::rng(4);
    for _ in 0..50 {
        let (w, h) = (r.gen_range(3..40), r.gen_range(3..40));
        let img = ImageBuffer::new(w, h, common::uniform_vec(&mut r, w * h * 3, 0.0, 1.0)).unwrap();
        let (ow, oh) = (r.gen_range(1..60), r.gen_range(1..60));
        let got = resample_bicubic(&img, ow, oh).unwrap();
        let want = common::oracle_resample(&img, ow, oh);
        let err = common::max_abs_diff(&got, &want);
        assert!(err <= 1e-9, "{w}x{h} -> {ow}x{oh}: {err:e}");
    }
}

#[test]
fn degrade_matches_oracle_at_training_resolutions() {
    let mut r = common::rng(5);
    for (k, &res) in [7, 14, 20, 28, 56].iter().cycle().take(10).enumerate() {
        let size = if k < 5 { 112 } else { 64 };
        let img = common::random_image(&mut r, size);
        let err = common::max_abs_diff(&degrade(&img, res).unwrap(), &common::oracle_degrade(&img, res));
        assert!(err <= 1e-9, "{size} px at {res}: {err:e}");
    }
}

#[test]
fn degrade_records_resolution_and_keeps_size() {
    let img = ImageBuffer::constant(32, 32, 0.3);
    let out = degrade(&img, 7).unwrap();
    assert_eq!((out.width(), out.height(), out.resolution), (32, 32, 7));
    assert_eq!(degrade(&out, 14).unwrap().resolution, 7);
    assert!(degrade(&img, 0).is_err());
    assert!(degrade(&img, 33).is_err());
    let rect = ImageBuffer::constant(8, 6, 0.0);
    assert!(degrade(&rect, 4).is_err());
}

#[test]
fn sampler_follows_one_one_two() {
    let plan = AugmentationPlan::multi_resolution(112);
    let mut r = common::rng(11);
    let mut counts = [0usize; 3];
    let n = 10_000;
    for _ in 0..n {
        let idx = match sample_resolution(&plan, &mut r).unwrap() {
            7 => 0,
            14 => 1,
            20 => 2,
            other => panic!("sampled {other}"),
        };
        counts[idx] += 1;
    }
    let expected = [0.25, 0.25, 0.5];
    let mut chi2 = 0.0;
    for i in 0..3 {
        let f = counts[i] as f64 / n as f64;
        assert!((f - expected[i]).abs() <= 0.02, "{counts:?}");
        let e = expected[i] * n as f64;
        chi2 += (counts[i] as f64 - e).powi(2) / e;
    }
    // 2 degrees of freedom, p = 0.001.
    assert!(chi2 < 13.82, "chi-square {chi2}");
}

#[test]
fn empty_or_zero_weight_plans_do_not_sample() {
    let mut r = common::rng(0);
    let empty = AugmentationPlan { entries: vec![], input_size: 112 };
    assert!(sample_resolution(&empty, &mut r).is_err());
    assert!(AugmentationPlan::parse("7:0", 112).is_err());
    assert!(AugmentationPlan::parse("200:1", 112).is_err());
}

#[test]
fn difficulty_tier_boundaries() {
    use DifficultyTier::*;
    for (r, tier) in [
        (1, ExtremelyHard),
        (7, ExtremelyHard),
        (11, ExtremelyHard),
        (12, Hard),
        (14, Hard),
        (19, Hard),
        (20, SemiHard),
        (32, SemiHard),
        (33, NotAugmented),
        (112, NotAugmented),
    ] {
        assert_eq!(classify_difficulty(r), tier, "{r}");
    }
}

#[test]
fn ssim_rises_with_resolution_on_generated_faces() {
    let ds = generate_dataset(&DatasetSpec {
        n_identities: 10,
        images_per_identity: 10,
        eval_per_identity: 1,
        ..DatasetSpec::default()
    })
    .unwrap();
    let probe = &ds.images[..100];
    let mean_ssim = |res: usize| {
        probe.iter().map(|img| ssim(img, &degrade(img, res).unwrap()).unwrap()).sum::<f64>() / probe.len() as f64
    };
    let curve: Vec<f64> = [7, 14, 20, 28, 56].iter().map(|&r| mean_ssim(r)).collect();
    assert!(curve.windows(2).all(|w| w[0] < w[1]), "{curve:?}");
    assert!(curve[4] < 1.0);
}

#[test]
fn ssim_identity_and_errors() {
    let mut r = common::rng(2);
    let a = common::random_image(&mut r, 24);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&a, &common::random_image(&mut r, 23)).is_err());
    let small = common::random_image(&mut r, 10);
    assert!(ssim(&small, &small).is_err());
}

#[test]
fn png_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let img = common::random_image(&mut common::rng(8), 13);
    img.save_png(&path).unwrap();
    let back = ImageBuffer::load_png(&path).unwrap();
    assert!(common::max_abs_diff(&img, &back) <= 0.5 / 255.0 + 1e-12);
}

proptest! {
    #[test]
    fn constant_images_stay_constant(v in 0.0f64..=1.0, size in 8usize..48, res in 1usize..8) {
        let img = ImageBuffer::constant(size, size, v);
        let out = degrade(&img, res).unwrap();
        prop_assert!(out.data().iter().all(|&x| (x - v).abs() <= 1e-9));
        let rs = resample_bicubic(&img, res + 3, size + 5).unwrap();
        prop_assert!(rs.data().iter().all(|&x| (x - v).abs() <= 1e-9));
    }

    #[test]
    fn same_size_is_identity(seed in any::<u64>(), size in 2usize..40) {
        let img = common::random_image(&mut common::rng(seed), size);
        prop_assert!(common::max_abs_diff(&resample_bicubic(&img, size, size).unwrap(), &img) <= 1e-9);
        prop_assert!(common::max_abs_diff(&degrade(&img, size).unwrap(), &img) <= 1e-9);
    }

    #[test]
    fn outputs_stay_in_unit_range(seed in any::<u64>(), res in 1usize..32) {
        let img = common::random_image(&mut common::rng(seed), 32);
        prop_assert!(degrade(&img, res).unwrap().data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), size in 1usize..20) {
        let img = common::random_image(&mut common::rng(seed), size);
        prop_assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn ssim_is_symmetric(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let (a, b) = (common::random_image(&mut r, 16), common::random_image(&mut r, 16));
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}
