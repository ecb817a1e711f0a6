//! Oracles and harnesses shared by the integration suites.
#![allow(dead_code)]

use lrfr::imageops::{cubic_kernel, ImageBuffer, BICUBIC_A};
use lrfr::losses::{dist_l1, dist_logexp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
pub use lrfr::gradsuite::{check_all, check_cosface, check_distance, check_total, distance_pair, KINK_MARGIN};

/// Slack for floating-point comparisons in inequality checks.
pub const FP: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_image(r: &mut ChaCha8Rng, size: usize) -> ImageBuffer {
    ImageBuffer::new(size, size, uniform_vec(r, size * size * 3, 0.0, 1.0)).unwrap()
}

/// Direct 2-D kernel sum for one resize: every output pixel is
/// `Σ_ij k(x_i) k(y_j) src[clamp(j), clamp(i)] / (Σ_i k(x_i) Σ_j k(y_j))`,
/// with the kernel widened by the shrink factor. No separable passes and no
/// precomputed taps.
pub fn oracle_resample(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let weights = |o: usize, n_in: usize, n_out: usize| -> Vec<(usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        let support = scale.max(1.0);
        let center = (o as f64 + 0.5) * scale - 0.5;
        let reach = (2.0 * support).ceil() as isize + 1;
        let c = center.floor() as isize;
        ((c - reach)..=(c + reach))
            .map(|i| {
                let k = cubic_kernel((i as f64 - center) / support, BICUBIC_A);
                (i.clamp(0, n_in as isize - 1) as usize, k)
            })
            .collect()
    };
    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for oy in 0..out_h {
        let wy = weights(oy, h, out_h);
        let sy: f64 = wy.iter().map(|t| t.1).sum();
        for ox in 0..out_w {
            let wx = weights(ox, w, out_w);
            let sx: f64 = wx.iter().map(|t| t.1).sum();
            for c in 0..3 {
                let mut acc = 0.0;
                for &(j, ky) in &wy {
                    for &(i, kx) in &wx {
                        acc += kx * ky * img.get(i, j, c);
                    }
                }
                out.push((acc / (sx * sy)).clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::new(out_w, out_h, out).unwrap()
}

pub fn oracle_degrade(img: &ImageBuffer, r: usize) -> ImageBuffer {
    let small = oracle_resample(img, r, r);
    oracle_resample(&small, img.width(), img.height())
}

pub fn max_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Counts of violated LogExp properties (sandwich bounds, within-vector
/// ordering, monotonicity in the other coordinates, the `1/D` ceiling).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Violations {
    pub lower: usize,
    pub upper: usize,
    pub ordering: usize,
    pub c_monotone: usize,
    pub bound: usize,
}

fn logexp_suite_chunk(n: usize, seed: u64) -> Violations {
    let d = 128;
    let mut r = rng(seed);
    let mut v = Violations::default();
    for _ in 0..n {
        let x = uniform_vec(&mut r, d, -1.0, 1.0);
        let y = uniform_vec(&mut r, d, -1.0, 1.0);
        let res = dist_logexp(&x, &y, 1.0).unwrap();
        let dists: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).collect();
        let max = dists.iter().cloned().fold(0.0, f64::max);
        if res.value < max / d as f64 - FP {
            v.lower += 1;
        }
        if res.value > dist_l1(&x, &y).unwrap().value + FP {
            v.upper += 1;
        }
        let g: Vec<f64> = res.grad_x.iter().map(|g| g.abs()).collect();
        let (i, j) = (r.gen_range(0..d), r.gen_range(0..d));
        if dists[i] > dists[j] && dists[j] > 0.0 && g[i] <= g[j] {
            v.ordering += 1;
        }
        if g.iter().any(|&gi| gi > 1.0 / d as f64 + FP) {
            v.bound += 1;
        }
        // Grow one other coordinate's distance; coordinate i must lose gradient.
        let mut x2 = x.clone();
        let bump = r.gen_range(0.01..0.5);
        x2[j] += if x[j] >= y[j] { bump } else { -bump };
        if i != j {
            let g2 = dist_logexp(&x2, &y, 1.0).unwrap().grad_x[i].abs();
            if !(g2 < g[i]) {
                v.c_monotone += 1;
            }
        }
    }
    v
}

/// [`Violations`] over `n` random `D = 128` pairs, split across threads.
pub fn logexp_inequality_suite(n: usize) -> Violations {
    let chunks = 8;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..chunks)
            .map(|c| s.spawn(move || logexp_suite_chunk(n / chunks, 1000 + c as u64)))
            .collect();
        handles.into_iter().fold(Violations::default(), |acc, h| {
            let v = h.join().unwrap();
            Violations {
                lower: acc.lower + v.lower,
                upper: acc.upper + v.upper,
                ordering: acc.ordering + v.ordering,
                c_monotone: acc.c_monotone + v.c_monotone,
                bound: acc.bound + v.bound,
            }
        })
    })
}
