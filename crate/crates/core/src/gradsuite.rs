//! Finite-difference checks of every loss kind and of the full network,
//! drawn from seeded random inputs that stay clear of non-differentiable
//! points.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::imageops::ImageBuffer;
use crate::losses::{cosface_loss, total_loss, DistanceKind, LossSpec};
use crate::model::{embed, embed_inference, init_network, network_backward, NetworkConfig, NetworkParams};
use crate::numerics::{check_gradients, GradCheckConfig, GradReport, Tensor};

/// Keep coordinates at least this far from non-differentiable points so a
/// central difference never straddles one.
pub const KINK_MARGIN: f64 = 1e-3;

pub const DISTANCE_KINDS: [DistanceKind; 5] = [
    DistanceKind::L1,
    DistanceKind::L2,
    DistanceKind::SmoothL1 { beta: 0.5 },
    DistanceKind::LogExp { p: 1.0 },
    DistanceKind::LogExp { p: 2.0 },
];

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn named(pairs: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn kink_free(kind: DistanceKind, x: &[f64], y: &[f64]) -> bool {
    x.iter().zip(y).all(|(a, b)| {
        let d = (a - b).abs();
        match kind {
            DistanceKind::L2 => true,
            DistanceKind::L1 | DistanceKind::LogExp { .. } => d > KINK_MARGIN,
            DistanceKind::SmoothL1 { beta } => (d - beta).abs() > KINK_MARGIN,
        }
    })
}

/// Random `D = 8` pair for `kind`, resampled until no coordinate sits near a
/// kink.
pub fn distance_pair(kind: DistanceKind, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = uniform_vec(&mut r, 8, -1.0, 1.0);
        let y = uniform_vec(&mut r, 8, -1.0, 1.0);
        if kink_free(kind, &x, &y) {
            return (x, y);
        }
    }
}

pub fn check_distance(kind: DistanceKind, seed: u64, cfg: &GradCheckConfig) -> Result<GradReport> {
    let (x, y) = distance_pair(kind, seed);
    let res = kind.eval(&x, &y)?;
    let inputs = named(vec![
        ("x", Tensor::from_vec(x).with_grad()),
        ("y", Tensor::from_vec(y).with_grad()),
    ]);
    let analytic = named(vec![("x", Tensor::from_vec(res.grad_x)), ("y", Tensor::from_vec(res.grad_y))]);
    let mut report = check_gradients(&inputs, &analytic, |m| Ok(kind.eval(m["x"].data(), m["y"].data())?.value), cfg)?;
    for p in &mut report.params {
        p.name = format!("{kind}.{}", p.name);
    }
    Ok(report)
}

pub fn check_cosface(seed: u64, cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (b, k, d) = (4, 3, 6);
    let emb = Tensor::new(vec![b, d], uniform_vec(&mut r, b * d, -1.0, 1.0))?;
    let w = Tensor::new(vec![k, d], uniform_vec(&mut r, k * d, -1.0, 1.0))?;
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
    let (s, m) = (r.gen_range(1.0..48.0), r.gen_range(0.0..0.5));
    let out = cosface_loss(&emb, &w, &labels, s, m)?;
    let inputs = named(vec![("cosface.emb", emb.with_grad()), ("cosface.weights", w.with_grad())]);
    let analytic = named(vec![("cosface.emb", out.grad_embeddings), ("cosface.weights", out.grad_weights)]);
    check_gradients(
        &inputs,
        &analytic,
        |m2| Ok(cosface_loss(&m2["cosface.emb"], &m2["cosface.weights"], &labels, s, m)?.loss),
        cfg,
    )
}

/// Total loss with respect to both embedding batches and the class weights.
/// Pairs are drawn until the normalized embeddings avoid the distance kinks.
pub fn check_total(kind: DistanceKind, seed: u64, cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (b, k, d) = (3, 4, 5);
    let normalize = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let (hr, lr) = loop {
        let hr = uniform_vec(&mut r, b * d, -1.0, 1.0);
        let lr = uniform_vec(&mut r, b * d, -1.0, 1.0);
        let ok = hr
            .chunks(d)
            .zip(lr.chunks(d))
            .all(|(a, c)| kink_free(kind, &normalize(a), &normalize(c)));
        if ok {
            break (hr, lr);
        }
    };
    let hr = Tensor::new(vec![b, d], hr)?;
    let lr = Tensor::new(vec![b, d], lr)?;
    let w = Tensor::new(vec![k, d], uniform_vec(&mut r, k * d, -1.0, 1.0))?;
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
    let spec = LossSpec {
        dist: kind,
        lambda: r.gen_range(0.1..2.0),
        cosface_scale: r.gen_range(1.0..16.0),
        cosface_margin: r.gen_range(0.0..0.5),
    };
    let out = total_loss(&hr, &lr, &w, &labels, &spec)?;
    let inputs = named(vec![
        ("total.f_hr", hr.with_grad()),
        ("total.f_lr", lr.with_grad()),
        ("total.weights", w.with_grad()),
    ]);
    let analytic = named(vec![
        ("total.f_hr", out.grad_hr),
        ("total.f_lr", out.grad_lr),
        ("total.weights", out.grad_weights),
    ]);
    let mut report = check_gradients(
        &inputs,
        &analytic,
        |m| Ok(total_loss(&m["total.f_hr"], &m["total.f_lr"], &m["total.weights"], &labels, &spec)?.total),
        cfg,
    )?;
    for p in &mut report.params {
        p.name = format!("{}[{kind}]", p.name);
    }
    Ok(report)
}

pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        channel_widths: vec![3, 4],
        embedding_dim: 5,
        input_size: 16,
    }
}

/// Image → embedding → total loss, differentiated with respect to every
/// network parameter. Inputs are redrawn until every PReLU input is clear of
/// the kink at 0.
pub fn check_network(seed: u64, cfg: &GradCheckConfig) -> Result<GradReport> {
    let net = tiny_network();
    let size = net.input_size;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let image = |r: &mut ChaCha8Rng| ImageBuffer::new(size, size, uniform_vec(r, size * size * 3, 0.0, 1.0));
    loop {
        let mut params = init_network::<f64>(&net, seed)?;
        for (_, t) in params.tensors_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.05..0.05);
            }
        }
        let hr = vec![image(&mut r)?, image(&mut r)?];
        let lr = vec![image(&mut r)?, image(&mut r)?];
        let labels = [0, 1];
        let w = Tensor::new(vec![2, net.embedding_dim], uniform_vec(&mut r, 2 * net.embedding_dim, -1.0, 1.0))?;
        let spec = LossSpec {
            cosface_scale: 4.0,
            ..LossSpec::default()
        };
        let (f_hr, c_hr) = embed(&params, &hr)?;
        let (f_lr, c_lr) = embed(&params, &lr)?;
        if c_hr.min_abs_preactivation().min(c_lr.min_abs_preactivation()) < KINK_MARGIN {
            continue;
        }
        let Ok(out) = total_loss(&f_hr, &f_lr, &w, &labels, &spec) else {
            continue;
        };
        let mut grads = network_backward(&params, &c_hr, &out.grad_hr)?;
        grads.accumulate(&network_backward(&params, &c_lr, &out.grad_lr)?);
        let analytic: BTreeMap<String, Tensor> =
            grads.tensors().into_iter().map(|(n, t)| (format!("net.{n}"), t.clone())).collect();
        let inputs: BTreeMap<String, Tensor> = params
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("net.{n}"), t.clone().with_grad()))
            .collect();
        return check_gradients(
            &inputs,
            &analytic,
            |m| {
                let p = NetworkParams::from_named(&net, |n| m.get(&format!("net.{n}")).cloned())?;
                let a = embed_inference(&p, &hr)?;
                let b = embed_inference(&p, &lr)?;
                Ok(total_loss(&a, &b, &w, &labels, &spec)?.total)
            },
            cfg,
        );
    }
}

/// Every loss kind plus the network, for one seed.
pub fn check_all(seed: u64, cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut reports = Vec::new();
    for &k in &DISTANCE_KINDS {
        reports.push(check_distance(k, seed, cfg)?);
    }
    reports.push(check_cosface(seed, cfg)?);
    for &k in &DISTANCE_KINDS {
        reports.push(check_total(k, seed, cfg)?);
    }
    reports.push(check_network(seed, cfg)?);
    Ok(GradReport::merge(reports, cfg.tolerance))
}

/// [`check_all`] over a range of seeds, merged in seed order.
pub fn check_seeds(seeds: Range<u64>, cfg: &GradCheckConfig) -> Result<GradReport> {
    let reports = seeds
        .into_par_iter()
        .map(|s| check_all(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport::merge(reports, cfg.tolerance))
}
