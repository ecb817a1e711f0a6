use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITERS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// `[N, k]` projections of the centred data.
    pub coords: Tensor,
    /// `[k, D]` unit principal directions.
    pub components: Tensor,
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance captured by each component.
    pub explained: Vec<f64>,
    pub mean: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    c.chunks_exact(d).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Top-`k` principal components by power iteration with deflation on the
/// sample covariance. Each component is flipped so that its
/// largest-magnitude entry is positive.
pub fn pca_project(embeddings: &Tensor, k: usize, seed: u64) -> Result<PcaResult> {
    let (n, d) = match embeddings.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::shape("pca", format!("expected N×D, got {s:?}"))),
    };
    if k == 0 || k >= n || k > d {
        return Err(Error::invalid(format!("need N > k >= 1 and k <= D (N={n}, D={d}, k={k})")));
    }
    let x = embeddings.data();
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<f64> = x
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in centred.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    cov.iter_mut().for_each(|c| *c /= denom);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITERS {
            let mut w = mat_vec(&cov, &v);
            lambda = normalize(&mut w);
            if lambda == 0.0 {
                break;
            }
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if delta < PCA_TOL {
                break;
            }
        }
        if !(lambda > 1e-12 * trace.max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateCovariance(k));
        }
        let lambda = v.iter().zip(mat_vec(&cov, &v)).map(|(a, b)| a * b).sum::<f64>();
        let imax = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        eigenvalues.push(lambda);
        components.extend_from_slice(&v);
    }

    let coords: Vec<f64> = centred
        .chunks_exact(d)
        .flat_map(|row| {
            components
                .chunks_exact(d)
                .map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(PcaResult {
        coords: Tensor::new(vec![n, k], coords)?,
        components: Tensor::new(vec![k, d], components)?,
        explained: eigenvalues.iter().map(|l| l / trace).collect(),
        eigenvalues,
        mean,
    })
}

/// Mean coordinate of each group (e.g. each resolution), keyed by group id
/// in ascending order.
pub fn group_centroids(coords: &Tensor, groups: &[usize]) -> Result<Vec<(usize, Vec<f64>)>> {
    let (n, k) = match coords.shape() {
        [n, k] => (*n, *k),
        s => return Err(Error::shape("group_centroids", format!("{s:?}"))),
    };
    if groups.len() != n {
        return Err(Error::shape("group_centroids", format!("{} groups for {n} rows", groups.len())));
    }
    let mut acc: std::collections::BTreeMap<usize, (Vec<f64>, usize)> = Default::default();
    for (row, &g) in coords.data().chunks_exact(k).zip(groups) {
        let e = acc.entry(g).or_insert_with(|| (vec![0.0; k], 0));
        e.0.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(g, (s, c))| (g, s.into_iter().map(|v| v / c as f64).collect()))
        .collect())
}
