use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{ImageBuffer, CHANNELS};
use crate::numerics::kernels::{self, ConvGeometry};
use crate::numerics::{gemm, Real, Tensor};

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

/// Images per backward work unit. Gradients are reduced chunk by chunk in
/// index order, so results do not depend on the number of worker threads.
const BACKWARD_CHUNK: usize = 8;

pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub channel_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub input_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            channel_widths: vec![16, 32, 64, 128],
            embedding_dim: 128,
            input_size: 112,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return Err(Error::invalid(format!(
                "channel widths must be a non-empty list of positive values, got {:?}",
                self.channel_widths
            )));
        }
        if self.embedding_dim < 2 {
            return Err(Error::invalid("embedding_dim must be >= 2"));
        }
        if self.input_size == 0 {
            return Err(Error::invalid("input_size must be positive"));
        }
        Ok(())
    }

    /// Geometry of each 3×3 stride-2 stage.
    pub fn geometries(&self) -> Vec<ConvGeometry> {
        let mut out = Vec::with_capacity(self.channel_widths.len());
        let (mut c, mut h) = (CHANNELS, self.input_size);
        for &w in &self.channel_widths {
            let g = ConvGeometry::new(c, h, h, w, (3, 3), 2, 1).expect("valid stage geometry");
            h = g.out_h();
            c = w;
            out.push(g);
        }
        out
    }

    pub fn last_width(&self) -> usize {
        *self.channel_widths.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T: Real> {
    /// `[C_out, C_in, 3, 3]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub prelu: Tensor<T>,
}

/// Parameters of the embedding network. Also used as the container for
/// parameter gradients and momentum buffers.
#[derive(Debug)]
pub struct NetworkParams<T: Real> {
    pub config: NetworkConfig,
    pub stages: Vec<StageParams<T>>,
    /// `[embedding_dim, last_width]`
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
    id: u64,
    version: u64,
}

impl<T: Real> Clone for NetworkParams<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            stages: self.stages.clone(),
            fc_weight: self.fc_weight.clone(),
            fc_bias: self.fc_bias.clone(),
            id: NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl<T: Real> PartialEq for NetworkParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stages == other.stages
            && self.fc_weight == other.fc_weight
            && self.fc_bias == other.fc_bias
    }
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let stages = config
            .geometries()
            .iter()
            .map(|g| StageParams {
                weight: Tensor::zeros(&[g.out_channels, g.in_channels, 3, 3]),
                bias: Tensor::zeros(&[g.out_channels]),
                prelu: Tensor::zeros(&[g.out_channels]),
            })
            .collect();
        Self {
            config: config.clone(),
            stages,
            fc_weight: Tensor::zeros(&[config.embedding_dim, config.last_width()]),
            fc_bias: Tensor::zeros(&[config.embedding_dim]),
            id: NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Stable parameter order: `stage{i}.weight|bias|prelu`, then `fc.weight`,
    /// `fc.bias`.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.stages.len() {
            for part in ["weight", "bias", "prelu"] {
                names.push(format!("stage{i}.{part}"));
            }
        }
        names.push("fc.weight".into());
        names.push("fc.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut refs: Vec<&Tensor<T>> = Vec::new();
        for s in &self.stages {
            refs.extend([&s.weight, &s.bias, &s.prelu]);
        }
        refs.extend([&self.fc_weight, &self.fc_bias]);
        self.names().into_iter().zip(refs).collect()
    }

    /// Mutable access; invalidates forward caches taken before the call.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.version += 1;
        let names = self.names();
        let mut refs: Vec<&mut Tensor<T>> = Vec::new();
        for s in &mut self.stages {
            refs.push(&mut s.weight);
            refs.push(&mut s.bias);
            refs.push(&mut s.prelu);
        }
        refs.push(&mut self.fc_weight);
        refs.push(&mut self.fc_bias);
        names.into_iter().zip(refs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    weight: s.weight.cast(),
                    bias: s.bias.cast(),
                    prelu: s.prelu.cast(),
                })
                .collect(),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
            id: NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    /// Rebuild from named tensors (e.g. a checkpoint), checking every shape.
    pub fn from_named(config: &NetworkConfig, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        for (name, slot) in params.tensors_mut() {
            let t = lookup(&name).ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        params.version = 0;
        Ok(params)
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }
}

/// Fan-in scaled normal init for kernels and the final layer, zero biases,
/// PReLU slopes 0.25.
pub fn init_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<NetworkParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<T>::zeros(config);
    let fill = |t: &mut Tensor<T>, fan_in: usize, rng: &mut ChaCha8Rng| {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        for v in t.data_mut() {
            *v = T::cast_from(normal.sample(rng));
        }
    };
    for (stage, g) in params.stages.iter_mut().zip(config.geometries()) {
        fill(&mut stage.weight, g.patch_len(), &mut rng);
        stage.prelu.data_mut().fill(T::cast_from(PRELU_INIT));
    }
    fill(&mut params.fc_weight, config.last_width(), &mut rng);
    params.version = 0;
    Ok(params)
}

#[derive(Debug)]
struct ImageCache<T> {
    cols: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    pooled: Vec<T>,
}

/// Intermediate activations from [`embed`], consumed by [`network_backward`].
#[derive(Debug)]
pub struct ForwardCache<T> {
    params_id: u64,
    params_version: u64,
    images: Vec<ImageCache<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.images.len()
    }

    /// Smallest `|x|` over all PReLU inputs, i.e. the distance to the nearest
    /// kink. Finite-difference checks need this to exceed their step size.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.images
            .iter()
            .flat_map(|c| c.pre.iter().flatten())
            .map(|v| v.as_f64().abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_image(config: &NetworkConfig, img: &ImageBuffer) -> Result<()> {
    if img.width() != config.input_size || img.height() != config.input_size {
        return Err(Error::invalid(format!(
            "network expects {0}x{0} images, got {1}x{2}",
            config.input_size,
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn forward_one<T: Real>(
    params: &NetworkParams<T>,
    geos: &[ConvGeometry],
    img: &ImageBuffer,
    keep: bool,
) -> (Vec<T>, Option<ImageCache<T>>) {
    let mut act: Vec<T> = img.to_chw();
    let mut cols_all = Vec::new();
    let mut pre_all = Vec::new();
    for (stage, g) in params.stages.iter().zip(geos) {
        let mut cols = vec![T::zero(); g.patch_len() * g.positions()];
        let mut pre = vec![T::zero(); g.output_len()];
        kernels::conv2d_forward(g, &act, stage.weight.data(), Some(stage.bias.data()), &mut pre, &mut cols);
        let mut out = vec![T::zero(); g.output_len()];
        kernels::prelu_forward(&pre, stage.prelu.data(), &mut out);
        if keep {
            cols_all.push(cols);
            pre_all.push(pre);
        }
        act = out;
    }
    let last = geos.last().unwrap();
    let hw = last.positions();
    let inv = T::cast_from(1.0 / hw as f64);
    let pooled: Vec<T> = act.chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    let d = params.config.embedding_dim;
    let mut emb = params.fc_bias.data().to_vec();
    gemm(d, pooled.len(), 1, T::one(), params.fc_weight.data(), false, &pooled, false, T::one(), &mut emb);
    let cache = keep.then(|| ImageCache {
        cols: cols_all,
        pre: pre_all,
        pooled,
    });
    (emb, cache)
}

/// Embed a batch. Rows of the result are unnormalized embeddings; each row
/// depends only on its own image.
pub fn embed<T: Real>(params: &NetworkParams<T>, batch: &[ImageBuffer]) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for img in batch {
        check_image(&params.config, img)?;
    }
    let geos = params.config.geometries();
    let results: Vec<(Vec<T>, Option<ImageCache<T>>)> = batch
        .par_iter()
        .map(|img| forward_one(params, &geos, img, true))
        .collect();
    let d = params.config.embedding_dim;
    let mut data = Vec::with_capacity(batch.len() * d);
    let mut images = Vec::with_capacity(batch.len());
    for (e, c) in results {
        data.extend(e);
        images.push(c.unwrap());
    }
    Ok((
        Tensor::new(vec![batch.len(), d], data)?,
        ForwardCache {
            params_id: params.id,
            params_version: params.version,
            images,
        },
    ))
}

/// Forward pass without keeping activations.
pub fn embed_inference<T: Real>(params: &NetworkParams<T>, batch: &[ImageBuffer]) -> Result<Tensor<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for img in batch {
        check_image(&params.config, img)?;
    }
    let geos = params.config.geometries();
    let rows: Vec<Vec<T>> = batch
        .par_iter()
        .map(|img| forward_one(params, &geos, img, false).0)
        .collect();
    Tensor::new(vec![batch.len(), params.config.embedding_dim], rows.concat())
}

fn backward_one<T: Real>(
    params: &NetworkParams<T>,
    geos: &[ConvGeometry],
    cache: &ImageCache<T>,
    grad_emb: &[T],
    grads: &mut NetworkParams<T>,
    scratch: &mut Vec<T>,
) {
    let d = params.config.embedding_dim;
    let c_last = params.config.last_width();
    gemm(d, 1, c_last, T::one(), grad_emb, false, &cache.pooled, false, T::one(), grads.fc_weight.data_mut());
    grads.fc_bias.add_assign(&Tensor::from_vec(grad_emb.to_vec()));
    let mut grad_pooled = vec![T::zero(); c_last];
    gemm(c_last, d, 1, T::one(), params.fc_weight.data(), true, grad_emb, false, T::zero(), &mut grad_pooled);

    let last = geos.last().unwrap();
    let hw = last.positions();
    let inv = T::cast_from(1.0 / hw as f64);
    let mut grad_act: Vec<T> = grad_pooled
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
        .collect();

    for i in (0..geos.len()).rev() {
        let g = &geos[i];
        let stage = &params.stages[i];
        let gs = &mut grads.stages[i];
        let mut grad_pre = vec![T::zero(); g.output_len()];
        kernels::prelu_backward(&cache.pre[i], stage.prelu.data(), &grad_act, &mut grad_pre, gs.prelu.data_mut());
        let mut grad_in = if i > 0 { Some(vec![T::zero(); g.input_len()]) } else { None };
        kernels::conv2d_backward(
            g,
            &cache.cols[i],
            stage.weight.data(),
            &grad_pre,
            gs.weight.data_mut(),
            Some(gs.bias.data_mut()),
            grad_in.as_deref_mut(),
            scratch,
        );
        if let Some(gi) = grad_in {
            grad_act = gi;
        }
    }
}

/// Parameter gradients for upstream embedding gradients `grad_embeddings`
/// (`B×embedding_dim`), using the activations cached by [`embed`].
pub fn network_backward<T: Real>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_embeddings: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    if cache.params_id != params.id || cache.params_version != params.version {
        return Err(Error::StaleCache);
    }
    let d = params.config.embedding_dim;
    if grad_embeddings.shape() != [cache.images.len(), d] {
        return Err(Error::shape(
            "network_backward",
            format!(
                "gradient {:?} vs batch {}x{d}",
                grad_embeddings.shape(),
                cache.images.len()
            ),
        ));
    }
    let geos = params.config.geometries();
    let partials: Vec<NetworkParams<T>> = cache
        .images
        .par_chunks(BACKWARD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grads = params.zeros_like();
            let mut scratch = Vec::new();
            for (j, img) in chunk.iter().enumerate() {
                let row = ci * BACKWARD_CHUNK + j;
                backward_one(params, &geos, img, grad_embeddings.row(row), &mut grads, &mut scratch);
            }
            grads
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap();
    for p in iter {
        total.accumulate(&p);
    }
    Ok(total)
}

/// Data-dependent init of the final bias: shift it so the embeddings of
/// `sample` have zero mean. Without this the pooled features of similar
/// images map to nearly parallel embeddings at init.
pub fn center_output_bias<T: Real>(params: &mut NetworkParams<T>, sample: &[ImageBuffer]) -> Result<()> {
    let emb = embed_inference(params, sample)?;
    let d = params.config.embedding_dim;
    let n = sample.len() as f64;
    let mut mean = vec![0.0; d];
    for row in emb.data().chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.as_f64() / n;
        }
    }
    for (b, m) in params.fc_bias.data_mut().iter_mut().zip(mean) {
        *b = T::cast_from(b.as_f64() - m);
    }
    params.version += 1;
    Ok(())
}
