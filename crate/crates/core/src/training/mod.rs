//! Siamese HR/LR training with SGD momentum and a step schedule.
//!
//! Each batch item is optionally flipped, then paired with a degraded copy at
//! a resolution drawn from the augmentation plan. Both copies go through the
//! same network; the total loss ties the pair and classifies each member.

mod config;
mod log;

pub use config::{ExperimentConfig, EvalSettings};
pub use log::{StepRecord, TrainLog};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::imageops::{degrade, sample_resolution, AugmentationPlan, ImageBuffer};
use crate::losses::{total_loss, LossSpec};
use crate::model::{
    center_output_bias, embed, init_network, network_backward, read_config, read_params, write_params, Checkpoint,
    NetworkConfig, NetworkParams,
};
use crate::numerics::{Real, Tensor};

/// Training images used to centre the initial embeddings.
pub const CENTERING_SAMPLE: usize = 256;

pub const CLASS_WEIGHTS: &str = "class_weights";
const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub plan: AugmentationPlan,
    pub network: NetworkConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch indices at which the learning rate is divided by 10.
    pub lr_milestones: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub flip_prob: f64,
    /// Rescale the joint gradient (network and class weights) to at most this
    /// L2 norm; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let network = NetworkConfig::default();
        Self {
            loss: LossSpec::default(),
            plan: AugmentationPlan::multi_resolution(network.input_size),
            network,
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            lr_milestones: vec![12, 17],
            momentum: 0.9,
            weight_decay: 5e-4,
            flip_prob: 0.5,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.plan.validate()?;
        self.network.validate()?;
        if self.plan.input_size != self.network.input_size {
            return Err(Error::invalid(format!(
                "augmentation input size {} differs from network input size {}",
                self.plan.input_size, self.network.input_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "lr milestones must be strictly increasing, got {:?}",
                self.lr_milestones
            )));
        }
        if self.lr_milestones.iter().any(|&m| m >= self.epochs) && self.epochs > 0 {
            return Err(Error::invalid(format!(
                "lr milestones {:?} must be < epochs ({})",
                self.lr_milestones, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::invalid("grad_clip must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must lie in [0,1]"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * 0.1f64.powi(drops as i32)
    }
}

/// Everything needed to continue optimization.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams<f32>,
    /// CosFace class centres, `[K, embedding_dim]`.
    pub class_weights: Tensor,
    pub momentum: NetworkParams<f32>,
    pub class_momentum: Tensor,
    pub step: u64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(network: &NetworkConfig, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let params = init_network::<f32>(network, seed)?;
        let d = network.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let scale = 1.0 / (d as f64).sqrt();
        let w: Vec<f64> = (0..n_classes * d)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z })
            .collect();
        Ok(Self {
            momentum: params.zeros_like(),
            params,
            class_weights: Tensor::new(vec![n_classes, d], w)?,
            class_momentum: Tensor::zeros(&[n_classes, d]),
            step: 0,
            epoch: 0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_weights.shape()[0]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        write_params(&mut ck, &self.params);
        ck.insert(CLASS_WEIGHTS, &self.class_weights);
        for (name, t) in self.momentum.tensors() {
            ck.insert(&format!("{MOMENTUM_PREFIX}{name}"), t);
        }
        ck.insert(&format!("{MOMENTUM_PREFIX}{CLASS_WEIGHTS}"), &self.class_momentum);
        ck.insert_scalars("state.step", &[self.step as f64]);
        ck.insert_scalars("state.epoch", &[self.epoch as f64]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = read_config(ck)?;
        let params = read_params::<f32>(ck)?;
        let momentum = NetworkParams::from_named(&config, |n| {
            ck.tensor::<f32>(&format!("{MOMENTUM_PREFIX}{n}")).ok()
        })?;
        let class_weights = ck.tensor::<f64>(CLASS_WEIGHTS)?;
        let class_momentum = ck.tensor::<f64>(&format!("{MOMENTUM_PREFIX}{CLASS_WEIGHTS}"))?;
        if class_weights.shape() != class_momentum.shape()
            || class_weights.shape().get(1) != Some(&config.embedding_dim)
        {
            return Err(Error::Checkpoint("class weight shapes are inconsistent".into()));
        }
        let scalar = |n: &str| -> Result<f64> {
            ck.scalars(n)?
                .first()
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("`{n}` is empty")))
        };
        Ok(Self {
            params,
            class_weights,
            momentum,
            class_momentum,
            step: scalar("state.step")? as u64,
            epoch: scalar("state.epoch")? as usize,
        })
    }
}

/// One SGD-momentum step on a flat array:
/// `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_update",
            format!(
                "param {} / grad {} / velocity {}",
                param.len(),
                grad.len(),
                velocity.len()
            ),
        ));
    }
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let (pv, gv, vv) = (p.as_f64(), g.as_f64(), v.as_f64());
        let nv = momentum * vv + gv + weight_decay * pv;
        *v = T::cast_from(nv);
        *p = T::cast_from(pv - lr * nv);
    }
    Ok(())
}

/// SGD step over every network parameter. PReLU slopes get no weight decay.
pub fn sgd_update_params<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    velocity: &mut NetworkParams<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.config != grads.config || params.config != velocity.config {
        return Err(Error::shape("sgd_update", "network configurations differ"));
    }
    for (((name, p), (_, g)), (_, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        let wd = if name.ends_with(".prelu") { 0.0 } else { weight_decay };
        sgd_update(p.data_mut(), g.data(), v.data_mut(), lr, momentum, wd)?;
    }
    Ok(())
}

/// RNG for batch item `index` of step `step`; independent of thread
/// scheduling.
fn item_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 24) | index as u64);
    rng
}

/// Flip and degrade one batch: returns the HR inputs, their LR partners and
/// the sampled resolution per item.
pub fn augment_batch(
    hr_batch: &[ImageBuffer],
    plan: &AugmentationPlan,
    flip_prob: f64,
    seed: u64,
    step: u64,
) -> Result<(Vec<ImageBuffer>, Vec<ImageBuffer>, Vec<usize>)> {
    let items: Vec<(ImageBuffer, ImageBuffer, usize)> = hr_batch
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = item_rng(seed, step, i);
            let flip = rng.gen::<f64>() < flip_prob;
            let hr = if flip { img.flip_horizontal() } else { img.clone() };
            let r = sample_resolution(plan, &mut rng)?;
            let lr = if r == hr.width() { hr.clone() } else { degrade(&hr, r)? };
            Ok((hr, lr, r))
        })
        .collect::<Result<_>>()?;
    let mut hr = Vec::with_capacity(items.len());
    let mut lr = Vec::with_capacity(items.len());
    let mut res = Vec::with_capacity(items.len());
    for (h, l, r) in items {
        hr.push(h);
        lr.push(l);
        res.push(r);
    }
    Ok((hr, lr, res))
}

fn resolution_summary(res: &[usize]) -> String {
    let mut counts = BTreeMap::new();
    for &r in res {
        *counts.entry(r).or_insert(0usize) += 1;
    }
    counts
        .iter()
        .map(|(r, c)| format!("{r}:{c}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn to_f64(t: &Tensor<f32>) -> Tensor {
    t.cast()
}

/// One optimization step on `hr_batch`. Updates `state` in place and returns
/// the log record. On a non-finite loss the state is left untouched.
pub fn train_step(
    state: &mut TrainState,
    hr_batch: &[ImageBuffer],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<StepRecord> {
    if hr_batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if labels.len() != hr_batch.len() {
        return Err(Error::shape(
            "train_step",
            format!("{} labels for {} images", labels.len(), hr_batch.len()),
        ));
    }
    let (hr, lr_imgs, res) = augment_batch(hr_batch, &config.plan, config.flip_prob, config.seed, state.step)?;
    let lr = config.lr_at(state.epoch);

    // When nothing was degraded both branches see identical inputs, so one
    // forward pass serves both.
    let shared = res.iter().all(|&r| r == config.network.input_size);
    let (f_hr, cache_hr) = embed(&state.params, &hr)?;
    let lr_branch = if shared { None } else { Some(embed(&state.params, &lr_imgs)?) };
    let f_lr = lr_branch.as_ref().map_or(&f_hr, |(f, _)| f);

    let out = total_loss(&to_f64(&f_hr), &to_f64(f_lr), &state.class_weights, labels, &config.loss)?;
    let mut record = StepRecord {
        epoch: state.epoch,
        step: state.step,
        total: out.total,
        dist: out.dist,
        cls_hr: out.cls_hr,
        cls_lr: out.cls_lr,
        lr,
        grad_norm: f64::NAN,
        resolutions: resolution_summary(&res),
    };
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            dist: out.dist,
            cls_hr: out.cls_hr,
            cls_lr: out.cls_lr,
            resolutions: record.resolutions,
        });
    }

    let mut grads = match &lr_branch {
        None => {
            let mut g = out.grad_hr.clone();
            g.add_assign(&out.grad_lr);
            network_backward(&state.params, &cache_hr, &g.cast())?
        }
        Some((_, cache_lr)) => {
            let mut g = network_backward(&state.params, &cache_hr, &out.grad_hr.cast())?;
            g.accumulate(&network_backward(&state.params, cache_lr, &out.grad_lr.cast())?);
            g
        }
    };
    let mut grad_weights = out.grad_weights;
    let grad_norm = (grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|&v| (v as f64).powi(2)))
        .sum::<f64>()
        + grad_weights.data().iter().map(|v| v * v).sum::<f64>())
    .sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            dist: out.dist,
            cls_hr: out.cls_hr,
            cls_lr: out.cls_lr,
            resolutions: record.resolutions,
        });
    }
    if config.grad_clip > 0.0 && grad_norm > config.grad_clip {
        let k = config.grad_clip / grad_norm;
        for (_, t) in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * k) as f32);
        }
        grad_weights.data_mut().iter_mut().for_each(|v| *v *= k);
    }
    record.grad_norm = grad_norm;
    sgd_update_params(
        &mut state.params,
        &grads,
        &mut state.momentum,
        lr,
        config.momentum,
        config.weight_decay,
    )?;
    sgd_update(
        state.class_weights.data_mut(),
        grad_weights.data(),
        state.class_momentum.data_mut(),
        lr,
        config.momentum,
        config.weight_decay,
    )?;
    state.step += 1;
    Ok(record)
}

/// Seeded order of the training indices for `epoch`.
pub fn epoch_order(train_indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train_indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e90c);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: TrainLog,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.state.to_checkpoint()
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOG_STEM: &str = "train_log";

/// Train on the train split of `dataset`. When `out_dir` is given, a
/// checkpoint is written at every milestone (state at the start of that
/// epoch) and at the end, together with the log as JSON lines and CSV.
pub fn train(config: &TrainConfig, dataset: &LabeledDataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("dataset has no training images"));
    }
    if dataset.input_size() != config.network.input_size {
        return Err(Error::invalid(format!(
            "dataset images are {} px, network expects {}",
            dataset.input_size(),
            config.network.input_size
        )));
    }
    let mut state = TrainState::new(&config.network, dataset.n_identities(), config.seed)?;
    let sample: Vec<ImageBuffer> = epoch_order(&train_idx, config.seed, usize::MAX)
        .iter()
        .take(CENTERING_SAMPLE)
        .map(|&i| dataset.images[i].clone())
        .collect();
    center_output_bias(&mut state.params, &sample)?;
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    }
    let save = |state: &TrainState, name: &str, log: &TrainLog, written: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(name);
            state.to_checkpoint().save(&path)?;
            log.save(dir, LOG_STEM)?;
            written.push(path);
        }
        Ok(())
    };

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        if config.lr_milestones.contains(&epoch) {
            save(&state, &checkpoint_name(epoch), &log, &mut checkpoints)?;
        }
        let order = epoch_order(&train_idx, config.seed, epoch);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ImageBuffer> = chunk.iter().map(|&i| dataset.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            match train_step(&mut state, &batch, &labels, config) {
                Ok(rec) => {
                    ::log::debug!(
                        "epoch {} step {} loss {:.4} dist {:.4}",
                        rec.epoch,
                        rec.step,
                        rec.total,
                        rec.dist
                    );
                    log.push(rec);
                }
                Err(e) => {
                    if let Some(dir) = out_dir {
                        log.save(dir, LOG_STEM)?;
                    }
                    return Err(e);
                }
            }
        }
    }
    state.epoch = config.epochs;
    save(&state, FINAL_CHECKPOINT, &log, &mut checkpoints)?;
    Ok(TrainOutcome {
        state,
        log,
        checkpoints,
    })
}
