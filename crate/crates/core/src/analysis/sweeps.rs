use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{report_stem, write_csv_rows};
use super::verification::{embed_normalized, pair_similarities, verification_accuracy};
use crate::datagen::{LabeledDataset, VerificationPairs};
use crate::error::{Error, Result};
use crate::imageops::{degrade, ImageBuffer};
use crate::io::write_atomic;
use crate::losses::{total_loss, LossSpec};
use crate::model::{embed, network_backward, read_params, Checkpoint, NetworkParams};
use crate::numerics::Tensor;
use crate::training::CLASS_WEIGHTS;

/// One scalar per resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: String,
    pub resolutions: Vec<usize>,
    pub values: Vec<f64>,
    pub model_id: String,
    pub seed: u64,
}

impl SweepReport {
    pub fn new(metric: &str, resolutions: Vec<usize>, values: Vec<f64>, model_id: &str, seed: u64) -> Result<Self> {
        if resolutions.len() != values.len() {
            return Err(Error::invalid("one value per resolution required"));
        }
        if !resolutions.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "resolutions must be strictly increasing, got {resolutions:?}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite {metric} at {} px",
                resolutions[i]
            )));
        }
        Ok(Self {
            metric: metric.into(),
            resolutions,
            values,
            model_id: model_id.into(),
            seed,
        })
    }

    pub fn value_at(&self, r: usize) -> Option<f64> {
        self.resolutions.iter().position(|&x| x == r).map(|i| self.values[i])
    }

    /// Resolution with the largest value (the smallest such on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        self.resolutions[best]
    }

    /// Write `<report>_<model-id>_<seed>.csv` and `.json` into `dir`.
    pub fn save(&self, dir: &Path, report: &str) -> Result<()> {
        let stem = report_stem(report, &self.model_id, self.seed);
        let rows = self
            .resolutions
            .iter()
            .zip(&self.values)
            .map(|(r, v)| vec![r.to_string(), v.to_string()]);
        write_csv_rows(&dir.join(format!("{stem}.csv")), &["resolution", &self.metric], rows)?;
        write_atomic(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

fn sorted_unique(resolutions: &[usize], input_size: usize) -> Result<Vec<usize>> {
    if resolutions.is_empty() {
        return Err(Error::invalid("no resolutions requested"));
    }
    if let Some(&r) = resolutions.iter().find(|&&r| r == 0 || r > input_size) {
        return Err(Error::invalid(format!("resolution {r} outside 1..={input_size}")));
    }
    let mut v = resolutions.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Verification accuracy with both pair images degraded to each resolution.
pub fn resolution_accuracy_sweep(
    ck: &Checkpoint,
    ds: &LabeledDataset,
    pairs: &VerificationPairs,
    resolutions: &[usize],
    model_id: &str,
    seed: u64,
) -> Result<SweepReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no verification pairs"));
    }
    let params = read_params::<f32>(ck)?;
    let rs = sorted_unique(resolutions, params.config.input_size)?;
    let same: Vec<bool> = pairs.pairs.iter().map(|p| p.same).collect();
    let values = rs
        .iter()
        .map(|&r| verification_accuracy(&pair_similarities(&params, ds, pairs, r)?, &same))
        .collect::<Result<Vec<_>>>()?;
    SweepReport::new("accuracy", rs, values, model_id, seed)
}

/// Sum over network parameters of the L2 norm of that parameter's gradient
/// of the total loss, with the HR batch undegraded and its partner degraded
/// to `resolution`. No update is made.
pub fn gradient_norm_at(
    params: &NetworkParams<f32>,
    class_weights: &Tensor,
    batch: &[ImageBuffer],
    labels: &[usize],
    resolution: usize,
    spec: &LossSpec,
) -> Result<f64> {
    let lr: Vec<ImageBuffer> = batch
        .par_iter()
        .map(|img| {
            if resolution == img.width() {
                Ok(img.clone())
            } else {
                degrade(img, resolution)
            }
        })
        .collect::<Result<_>>()?;
    let (f_hr, cache_hr) = embed(params, batch)?;
    let (f_lr, cache_lr) = embed(params, &lr)?;
    let out = total_loss(&f_hr.cast(), &f_lr.cast(), class_weights, labels, spec)?;
    let mut grads = network_backward(params, &cache_hr, &out.grad_hr.cast())?;
    grads.accumulate(&network_backward(params, &cache_lr, &out.grad_lr.cast())?);
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient(resolution as u32));
    }
    let total: f64 = grads
        .tensors()
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .sum();
    if !total.is_finite() {
        return Err(Error::NonFiniteGradient(resolution as u32));
    }
    Ok(total)
}

pub fn gradient_norm_sweep(
    ck: &Checkpoint,
    batch: &[ImageBuffer],
    labels: &[usize],
    resolutions: &[usize],
    spec: &LossSpec,
    model_id: &str,
    seed: u64,
) -> Result<SweepReport> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let params = read_params::<f32>(ck)?;
    let class_weights = ck.tensor::<f64>(CLASS_WEIGHTS)?;
    let rs = sorted_unique(resolutions, params.config.input_size)?;
    let values = rs
        .par_iter()
        .map(|&r| gradient_norm_at(&params, &class_weights, batch, labels, r, spec))
        .collect::<Result<Vec<_>>>()?;
    SweepReport::new("grad_norm_sum", rs, values, model_id, seed)
}

/// Per-dimension mean `|f_HR,i − f_LR,i|` over a probe set, on unit-norm
/// embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerDimError {
    pub resolution: usize,
    pub mean_abs: Vec<f64>,
    /// Histogram of `mean_abs` over `bins` equal bins spanning `[0, max]`.
    pub hist_edges: Vec<f64>,
    pub hist_counts: Vec<usize>,
}

impl PerDimError {
    pub fn mean(&self) -> f64 {
        self.mean_abs.iter().sum::<f64>() / self.mean_abs.len() as f64
    }

    pub fn save(&self, dir: &Path, model_id: &str, seed: u64) -> Result<()> {
        let stem = report_stem(&format!("dim_error_{}px", self.resolution), model_id, seed);
        let rows = self
            .mean_abs
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), v.to_string()]);
        write_csv_rows(&dir.join(format!("{stem}.csv")), &["dim", "mean_abs_error"], rows)?;
        write_atomic(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

pub const DIM_ERROR_BINS: usize = 20;

pub fn per_dim_error(ck: &Checkpoint, probe: &[ImageBuffer], resolution: usize) -> Result<PerDimError> {
    if probe.is_empty() {
        return Err(Error::invalid("empty probe set"));
    }
    let params = read_params::<f32>(ck)?;
    let refs: Vec<&ImageBuffer> = probe.iter().collect();
    let hr = embed_normalized(&params, &refs, params.config.input_size)?;
    let lr = embed_normalized(&params, &refs, resolution)?;
    let d = params.config.embedding_dim;
    let mut mean_abs = vec![0.0; d];
    for (a, b) in hr.iter().zip(&lr) {
        for j in 0..d {
            mean_abs[j] += (a[j] - b[j]).abs();
        }
    }
    let n = probe.len() as f64;
    mean_abs.iter_mut().for_each(|v| *v /= n);

    let max = mean_abs.iter().cloned().fold(0.0, f64::max);
    let width = if max > 0.0 { max / DIM_ERROR_BINS as f64 } else { 1.0 };
    let hist_edges: Vec<f64> = (0..=DIM_ERROR_BINS).map(|i| i as f64 * width).collect();
    let mut hist_counts = vec![0; DIM_ERROR_BINS];
    for &v in &mean_abs {
        hist_counts[((v / width) as usize).min(DIM_ERROR_BINS - 1)] += 1;
    }
    Ok(PerDimError {
        resolution,
        mean_abs,
        hist_edges,
        hist_counts,
    })
}
