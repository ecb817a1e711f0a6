use rayon::prelude::*;

use crate::datagen::{LabeledDataset, VerificationPairs};
use crate::error::{Error, Result};
use crate::imageops::{degrade, ImageBuffer};
use crate::model::{embed_inference, NetworkParams};
use crate::numerics::kernels::l2_normalize;

pub const FOLDS: usize = 10;
const EMBED_BATCH: usize = 64;

/// Unit-norm embeddings of `images` after degradation to `resolution`
/// (no degradation when it equals the image size).
pub fn embed_normalized(
    params: &NetworkParams<f32>,
    images: &[&ImageBuffer],
    resolution: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_BATCH) {
        let batch: Vec<ImageBuffer> = chunk
            .par_iter()
            .map(|img| {
                if resolution == img.width() {
                    Ok((*img).clone())
                } else {
                    degrade(img, resolution)
                }
            })
            .collect::<Result<_>>()?;
        let emb = embed_inference(params, &batch)?;
        let d = emb.shape()[1];
        out.extend(
            emb.data()
                .chunks_exact(d)
                .map(|row| l2_normalize(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()).0),
        );
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of every pair, both images degraded to `resolution`.
pub fn pair_similarities(
    params: &NetworkParams<f32>,
    ds: &LabeledDataset,
    pairs: &VerificationPairs,
    resolution: usize,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("no verification pairs"));
    }
    let mut used: Vec<usize> = pairs.pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    used.sort_unstable();
    used.dedup();
    if let Some(&bad) = used.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::invalid(format!("pair refers to image {bad}, dataset has {}", ds.len())));
    }
    let images: Vec<&ImageBuffer> = used.iter().map(|&i| &ds.images[i]).collect();
    let emb = embed_normalized(params, &images, resolution)?;
    let slot = |i: usize| used.binary_search(&i).unwrap();
    Ok(pairs
        .pairs
        .iter()
        .map(|p| cosine(&emb[slot(p.a)], &emb[slot(p.b)]))
        .collect())
}

/// Threshold maximizing accuracy of the rule `sim >= t ⇒ same` on the given
/// pairs. Candidates are midpoints between consecutive sorted similarities
/// plus the two extremes.
pub fn best_threshold(sims: &[f64], same: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    idx.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]));
    // Start with every pair predicted "same".
    let mut correct = same.iter().filter(|&&s| s).count();
    let mut best = (correct, f64::NEG_INFINITY);
    for (k, &i) in idx.iter().enumerate() {
        // Move pair i to the "different" side.
        if same[i] {
            correct -= 1;
        } else {
            correct += 1;
        }
        let next = idx.get(k + 1).map(|&j| sims[j]);
        if next == Some(sims[i]) {
            continue;
        }
        let t = match next {
            Some(n) => 0.5 * (sims[i] + n),
            None => f64::INFINITY,
        };
        if correct > best.0 {
            best = (correct, t);
        }
    }
    best.1
}

fn accuracy_at(sims: &[f64], same: &[bool], t: f64) -> usize {
    sims.iter().zip(same).filter(|&(&s, &y)| (s >= t) == y).count()
}

/// Verification accuracy under k-fold threshold selection: each fold is
/// scored with the threshold that is best on the other folds. Folds are
/// contiguous blocks of the pair list.
pub fn verification_accuracy(sims: &[f64], same: &[bool]) -> Result<f64> {
    if sims.is_empty() || sims.len() != same.len() {
        return Err(Error::invalid(format!(
            "{} similarities for {} labels",
            sims.len(),
            same.len()
        )));
    }
    let n = sims.len();
    let folds = FOLDS.min(n);
    if folds < 2 {
        let t = best_threshold(sims, same);
        return Ok(accuracy_at(sims, same, t) as f64 / n as f64);
    }
    let bounds: Vec<usize> = (0..=folds).map(|f| f * n / folds).collect();
    let mut correct = 0;
    for f in 0..folds {
        let (lo, hi) = (bounds[f], bounds[f + 1]);
        let train_s: Vec<f64> = sims[..lo].iter().chain(&sims[hi..]).copied().collect();
        let train_y: Vec<bool> = same[..lo].iter().chain(&same[hi..]).copied().collect();
        let t = best_threshold(&train_s, &train_y);
        correct += accuracy_at(&sims[lo..hi], &same[lo..hi], t);
    }
    Ok(correct as f64 / n as f64)
}
