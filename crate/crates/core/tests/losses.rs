mod common;

use lrfr::losses::{
    cosface_loss, dist_l1, dist_l2, dist_logexp, dist_smooth_l1, logexp_gradient_magnitudes, logexp_remainder,
    total_loss, DistanceKind, LossSpec,
};
use lrfr::numerics::Tensor;
use proptest::prelude::*;
use rand::Rng;

use common::FP;

// 40-digit evaluations of the closed forms.
const HALF_LN_2E_MINUS_1: f64 = 0.744_940_062_822_374_988_356_580_548_533_896_1;
const INV_2E: f64 = 0.183_939_720_585_721_160_797_761_885_080_730_433_7;
const COSFACE_K2: f64 = 4.587_181_736_126_406_101_721_142_471_102_415e-9;

#[test]
fn logexp_scalar_cases() {
    let r = dist_logexp(&[1.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
    assert!((r.value - HALF_LN_2E_MINUS_1).abs() <= 1e-12, "{}", r.value);

    let r = dist_logexp(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
    assert!((r.value - 0.5).abs() <= 1e-12);
    let g = logexp_gradient_magnitudes(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
    assert!((g[0] - 0.5).abs() <= 1e-12 && (g[1] - INV_2E).abs() <= 1e-12, "{g:?}");
    // The implemented subgradient at a zero difference is 0.
    assert_eq!(r.grad_x, vec![0.5, 0.0]);

    let r = dist_logexp(&[0.3], &[1.3], 1.0).unwrap();
    assert!((r.value - 1.0).abs() <= 1e-12);
    assert!((r.grad_x[0] + 1.0).abs() <= 1e-12);
}

#[test]
fn trivial_distance_values() {
    let (x, y) = ([1.0, -1.0], [0.0, 0.0]);
    let l1 = dist_l1(&x, &y).unwrap();
    assert_eq!((l1.value, l1.grad_x.clone()), (1.0, vec![0.5, -0.5]));
    let l2 = dist_l2(&x, &y).unwrap();
    assert_eq!((l2.value, l2.grad_x.clone()), (0.5, vec![0.5, -0.5]));
    assert_eq!(dist_smooth_l1(&[0.5], &[0.0], 1.0).unwrap().value, 0.125);
    let lin = dist_smooth_l1(&[2.0], &[0.0], 1.0).unwrap();
    assert_eq!((lin.value, lin.grad_x[0]), (1.5, 1.0));
    for kind in kinds() {
        let r = kind.eval(&[0.2, -0.4, 0.9], &[0.2, -0.4, 0.9]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_x.iter().chain(&r.grad_y).all(|&g| g == 0.0));
        assert!(kind.eval(&[1.0], &[1.0, 2.0]).is_err());
    }
}

#[test]
fn cosface_two_class_case() {
    let emb = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![0.9, 0.19f64.sqrt(), 0.1, 0.99f64.sqrt()]).unwrap();
    let out = cosface_loss(&emb, &w, &[0], 48.0, 0.4).unwrap();
    assert!((out.loss - COSFACE_K2).abs() <= 1e-12 * COSFACE_K2.max(1.0), "{}", out.loss);
    assert!(cosface_loss(&emb, &w, &[2], 48.0, 0.4).is_err());
}

#[test]
fn cosface_without_margin_is_softmax_cross_entropy() {
    let mut r = common::rng(3);
    let emb = Tensor::new(vec![3, 4], common::uniform_vec(&mut r, 12, -1.0, 1.0)).unwrap();
    let w = Tensor::new(vec![5, 4], common::uniform_vec(&mut r, 20, -1.0, 1.0)).unwrap();
    let labels = [0, 3, 4];
    let unit = |v: &[f64]| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter().map(|a| a / n).collect::<Vec<_>>()
    };
    let mut want = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let e = unit(&emb.data()[b * 4..b * 4 + 4]);
        let logits: Vec<f64> = (0..5)
            .map(|k| unit(&w.data()[k * 4..k * 4 + 4]).iter().zip(&e).map(|(p, q)| p * q).sum())
            .collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        want += lse - logits[y];
    }
    want /= 3.0;
    let got = cosface_loss(&emb, &w, &labels, 1.0, 0.0).unwrap().loss;
    assert!((got - want).abs() < 1e-12);
}

fn random_batch(seed: u64) -> (Tensor, Tensor, Tensor, Vec<usize>) {
    let mut r = common::rng(seed);
    let (b, k, d) = (4, 3, 6);
    let t = |r: &mut rand_chacha::ChaCha8Rng, rows, cols| {
        Tensor::new(vec![rows, cols], common::uniform_vec(r, rows * cols, -1.0, 1.0)).unwrap()
    };
    let hr = t(&mut r, b, d);
    let lr = t(&mut r, b, d);
    let w = t(&mut r, k, d);
    let labels = (0..b).map(|_| r.gen_range(0..k)).collect();
    (hr, lr, w, labels)
}

#[test]
fn total_loss_trivial_cases() {
    let (hr, lr, w, labels) = random_batch(1);
    let cls = |f: &Tensor| cosface_loss(f, &w, &labels, 48.0, 0.4).unwrap().loss;
    let spec = LossSpec::default();
    let same = total_loss(&hr, &hr, &w, &labels, &spec).unwrap();
    assert_eq!(same.dist, 0.0);
    assert!((same.total - cls(&hr)).abs() < 1e-12);
    for kind in kinds() {
        let spec = LossSpec { dist: kind, lambda: 0.0, ..spec };
        let out = total_loss(&hr, &lr, &w, &labels, &spec).unwrap();
        assert!((out.total - 0.5 * (cls(&hr) + cls(&lr))).abs() < 1e-12);
    }
}

#[test]
fn total_loss_gradients_over_100_seeds() {
    let cfg = lrfr::numerics::GradCheckConfig::default();
    for seed in 0..100 {
        for kind in kinds() {
            let rep = common::check_total(kind, seed, &cfg).unwrap();
            assert!(rep.pass, "{kind} seed {seed}\n{rep}");
        }
    }
}

fn kinds() -> [DistanceKind; 5] {
    [
        DistanceKind::L1,
        DistanceKind::L2,
        DistanceKind::SmoothL1 { beta: 1.0 },
        DistanceKind::LogExp { p: 1.0 },
        DistanceKind::LogExp { p: 2.0 },
    ]
}

#[test]
fn logexp_inequalities_hold_on_100k_pairs() {
    assert_eq!(common::logexp_inequality_suite(100_000), common::Violations::default());
}

#[test]
fn gradient_reaches_one_over_d_only_without_other_errors() {
    let d = 5;
    let mut x = vec![0.0; d];
    x[2] = 0.7;
    let y = vec![0.0; d];
    let g = dist_logexp(&x, &y, 1.0).unwrap().grad_x;
    assert!((g[2] - 1.0 / d as f64).abs() <= FP);
    assert_eq!(logexp_remainder(&x, 2), 0.0);
    x[4] = 1e-3;
    let g = dist_logexp(&x, &y, 1.0).unwrap().grad_x;
    assert!(g[2] < 1.0 / d as f64 - FP);
}

#[test]
fn upper_bound_tight_iff_one_coordinate_differs() {
    let l1 = |x: &[f64], y: &[f64]| dist_l1(x, y).unwrap().value;
    let le = |x: &[f64], y: &[f64]| dist_logexp(x, y, 1.0).unwrap().value;
    let (x, y) = ([0.0, 0.9, 0.0], [0.0, 0.0, 0.0]);
    assert!((le(&x, &y) - l1(&x, &y)).abs() <= FP);
    let x = [0.1, 0.9, 0.0];
    assert!(le(&x, &y) < l1(&x, &y) - FP);
}

proptest! {
    #[test]
    fn distances_are_symmetric_and_nonnegative(
        x in prop::collection::vec(-1.0f64..1.0, 1..16),
        shift in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let y: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
        for kind in kinds() {
            let a = kind.eval(&x, &y).unwrap();
            let b = kind.eval(&y, &x).unwrap();
            prop_assert!(a.value >= 0.0);
            prop_assert!((a.value - b.value).abs() <= FP);
            for (gx, gy) in a.grad_x.iter().zip(&a.grad_y) {
                prop_assert_eq!(*gy, -*gx);
            }
            if x != y {
                prop_assert!(a.value > 0.0);
            }
        }
    }

    #[test]
    fn remainder_form_matches_gradient(dists in prop::collection::vec(0.01f64..2.0, 2..32), pick in any::<prop::sample::Index>()) {
        let i = pick.index(dists.len());
        let zeros = vec![0.0; dists.len()];
        let g = dist_logexp(&dists, &zeros, 1.0).unwrap().grad_x[i];
        let c = logexp_remainder(&dists, i);
        let want = dists[i].exp() / (dists.len() as f64 * (c + dists[i].exp()));
        prop_assert!((g - want).abs() <= FP);
    }

    #[test]
    fn logexp_gradient_between_l2_and_l1(d in 0.01f64..1.0, frac in 0.0f64..1.0, dim in 2usize..64) {
        // Spread C over the other coordinates, staying within the bound.
        let c = frac * d.exp() * (1.0 - d) / d;
        let per = (1.0 + c / (dim - 1) as f64).ln();
        let mut x = vec![per; dim];
        x[0] = d;
        let zeros = vec![0.0; dim];
        let g = dist_logexp(&x, &zeros, 1.0).unwrap().grad_x[0];
        let n = dim as f64;
        prop_assert!(g >= d / n - FP && g <= 1.0 / n + FP);
    }

    #[test]
    fn logexp_clamp_keeps_raw_inputs_finite(big in 60.0f64..1e6) {
        let r = dist_logexp(&[big, 0.0], &[0.0, 0.0], 1.0).unwrap();
        prop_assert!(r.value.is_finite() && r.grad_x.iter().all(|g| g.is_finite()));
    }
}
