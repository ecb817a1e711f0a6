//! Procedural identity-labelled image sets, a directory loader and
//! verification-pair construction.
//!
//! Each identity is a fixed pattern of smooth Gaussian blobs and
//! low-frequency plane waves with its own colours. A sample of an identity is
//! that pattern rendered under a small random translation, rotation and
//! brightness shift. Rendering is analytic (no resampling), so images are
//! exact functions of the seed.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{resample_bicubic, ImageBuffer, CHANNELS};
use crate::io::write_atomic;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Shared background level, so the mean colour of an image says little about
/// who it is.
const BACKGROUND: f64 = 0.0;
const CLUTTER_BLOBS: usize = 4;


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub images_per_identity: usize,
    /// Held-out images per identity (never used for training).
    pub eval_per_identity: usize,
    pub input_size: usize,
    pub translation_px: f64,
    pub rotation_deg: f64,
    pub brightness: f64,
    /// Std range of the small identity blobs, as a fraction of the image size.
    pub fine_sigma: (f64, f64),
    /// Std range of the large identity blobs and of the clutter blobs.
    pub coarse_sigma: (f64, f64),
    /// Per-channel amplitude bound of the large identity blobs.
    pub coarse_amplitude: f64,
    /// Per-channel amplitude bound of the per-image clutter blobs.
    pub clutter: f64,
    /// Amplitude of the identity-specific fine gratings (0 disables them).
    pub texture: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_identities: 50,
            images_per_identity: 40,
            eval_per_identity: 10,
            input_size: 112,
            translation_px: 4.0,
            rotation_deg: 8.0,
            brightness: 0.08,
            fine_sigma: (0.01, 0.03),
            coarse_sigma: (0.08, 0.16),
            coarse_amplitude: 0.3,
            clutter: 0.2,
            texture: 0.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::invalid("n_identities must be >= 2"));
        }
        if self.images_per_identity < 2 {
            return Err(Error::invalid("images_per_identity must be >= 2"));
        }
        if self.eval_per_identity >= self.images_per_identity {
            return Err(Error::invalid(
                "eval_per_identity must leave at least one training image per identity",
            ));
        }
        if self.input_size < 8 {
            return Err(Error::invalid("input_size must be >= 8"));
        }
        for (name, (lo, hi)) in [("fine_sigma", self.fine_sigma), ("coarse_sigma", self.coarse_sigma)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        for (name, v) in [
            ("coarse_amplitude", self.coarse_amplitude),
            ("clutter", self.clutter),
            ("texture", self.texture),
            ("translation_px", self.translation_px),
            ("rotation_deg", self.rotation_deg),
            ("brightness", self.brightness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// Name of each label id (directory name on disk).
    pub identity_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_identities(&self) -> usize {
        self.identity_names.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn input_size(&self) -> usize {
        self.images.first().map_or(0, |i| i.width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// Image-index pairs into a [`LabeledDataset`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationPairs {
    pub pairs: Vec<Pair>,
}

impl VerificationPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.same).count()
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    inv_two_var: f64,
    amp: [f64; 3],
}

/// High-frequency plane wave under a centred Gaussian envelope.
struct Grating {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct IdentityPattern {
    blobs: Vec<Blob>,
    gratings: Vec<Grating>,
}

fn color(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 3] {
    if scale <= 0.0 {
        return [0.0; 3];
    }
    [
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    ]
}

fn blob(rng: &mut ChaCha8Rng, size: f64, sigma: (f64, f64), amp: [f64; 3]) -> Blob {
    let s = rng.gen_range(sigma.0..=sigma.1) * size;
    Blob {
        cx: rng.gen_range(0.15..0.85) * size,
        cy: rng.gen_range(0.15..0.85) * size,
        inv_two_var: 1.0 / (2.0 * s * s),
        amp,
    }
}

/// Identity is carried at two scales. Small bright blobs are the most
/// discriminative cue at full resolution but vanish when the image is
/// degraded; large faint blobs survive degradation but compete with
/// per-image clutter at the same scale.
impl IdentityPattern {
    fn sample(rng: &mut ChaCha8Rng, size: f64, spec: &DatasetSpec) -> Self {
        let n_fine = rng.gen_range(8..=16);
        let mut blobs: Vec<Blob> = (0..n_fine)
            .map(|_| {
                let c = color(rng, 0.5);
                blob(rng, size, spec.fine_sigma, [c[0] + 0.5, c[1] + 0.5, c[2] + 0.5])
            })
            .collect();
        for _ in 0..3 {
            let c = color(rng, spec.coarse_amplitude);
            blobs.push(blob(rng, size, spec.coarse_sigma, c.map(|v| v + spec.coarse_amplitude)));
        }
        let gratings = if spec.texture > 0.0 {
            (0..2)
                .map(|_| {
                    let theta = rng.gen_range(0.0..std::f64::consts::PI);
                    let k = std::f64::consts::TAU / (rng.gen_range(0.025..0.05) * size);
                    Grating {
                        kx: k * theta.cos(),
                        ky: k * theta.sin(),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                        amp: color(rng, spec.texture).map(|v| v.abs() + 0.5 * spec.texture),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { blobs, gratings }
    }

    fn render(&self, size: usize, view: &View) -> ImageBuffer {
        let c = (size as f64 - 1.0) / 2.0;
        let (sin, cos) = view.rot.sin_cos();
        let mut data = Vec::with_capacity(size * size * CHANNELS);
        for y in 0..size {
            for x in 0..size {
                // Inverse-map the pixel into pattern coordinates.
                let px = x as f64 - c - view.tx;
                let py = y as f64 - c - view.ty;
                let u = cos * px + sin * py + c;
                let v = -sin * px + cos * py + c;
                let mut rgb = [BACKGROUND; 3];
                for b in self.blobs.iter().chain(&view.clutter) {
                    let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                    let g = (-d2 * b.inv_two_var).exp();
                    for ch in 0..CHANNELS {
                        rgb[ch] += b.amp[ch] * g;
                    }
                }
                if !self.gratings.is_empty() {
                    let r2 = (u - c).powi(2) + (v - c).powi(2);
                    let envelope = (-r2 / (2.0 * (0.3 * size as f64).powi(2))).exp();
                    for gr in &self.gratings {
                        let s = envelope * (gr.kx * u + gr.ky * v + gr.phase).sin();
                        for ch in 0..CHANNELS {
                            rgb[ch] += gr.amp[ch] * s;
                        }
                    }
                }
                data.extend(rgb.iter().map(|v| (v + view.brightness).clamp(0.0, 1.0)));
            }
        }
        ImageBuffer::new(size, size, data).expect("consistent size")
    }
}

/// Per-image nuisance: pose, brightness and clutter.
struct View {
    tx: f64,
    ty: f64,
    rot: f64,
    brightness: f64,
    clutter: Vec<Blob>,
}

impl View {
    fn sample(rng: &mut ChaCha8Rng, size: f64, spec: &DatasetSpec) -> Self {
        let mut u = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let tx = u(spec.translation_px);
        let ty = u(spec.translation_px);
        let rot = u(spec.rotation_deg).to_radians();
        let brightness = u(spec.brightness);
        let clutter = if spec.clutter > 0.0 {
            (0..CLUTTER_BLOBS)
                .map(|_| {
                    let c = color(rng, spec.clutter);
                    blob(rng, size, spec.coarse_sigma, c)
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            tx,
            ty,
            rot,
            brightness,
            clutter,
        }
    }
}

fn identity_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn identity_name(id: usize) -> String {
    format!("id{id:04}")
}

/// Generate a dataset. The last `eval_per_identity` images of each identity
/// form the eval split.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let size = spec.input_size;
    let per_identity: Vec<Vec<ImageBuffer>> = (0..spec.n_identities)
        .into_par_iter()
        .map(|id| {
            let mut rng = identity_rng(spec.seed, id as u64);
            let pattern = IdentityPattern::sample(&mut rng, size as f64, spec);
            (0..spec.images_per_identity)
                .map(|_| pattern.render(size, &View::sample(&mut rng, size as f64, spec)))
                .collect()
        })
        .collect();
    let train_per = spec.images_per_identity - spec.eval_per_identity;
    let mut ds = LabeledDataset {
        images: Vec::new(),
        labels: Vec::new(),
        splits: Vec::new(),
        identity_names: (0..spec.n_identities).map(identity_name).collect(),
    };
    for (id, imgs) in per_identity.into_iter().enumerate() {
        for (j, img) in imgs.into_iter().enumerate() {
            ds.images.push(img);
            ds.labels.push(id);
            ds.splits.push(if j < train_per { Split::Train } else { Split::Eval });
        }
    }
    Ok(ds)
}

fn file_name(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("train_{index:04}.png"),
        Split::Eval => format!("eval_{index:04}.png"),
    }
}

fn is_eval_file(path: &Path) -> bool {
    path.file_name().is_some_and(|n| n.to_string_lossy().starts_with("eval"))
}

/// Write `root/<identity>/<split>_<n>.png` and a manifest with one
/// `identity,filename` row per image.
pub fn save_dataset(ds: &LabeledDataset, root: &Path) -> Result<()> {
    let mut manifest = String::new();
    let mut counters = vec![0usize; ds.n_identities()];
    for i in 0..ds.len() {
        let label = ds.labels[i];
        let name = &ds.identity_names[label];
        let file = file_name(ds.splits[i], counters[label]);
        counters[label] += 1;
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::path(&dir, e))?;
        ds.images[i].save_png(&dir.join(&file))?;
        writeln!(manifest, "{name},{file}").unwrap();
    }
    write_atomic(&root.join(MANIFEST_NAME), manifest.as_bytes())
}

/// Load `root/<identity>/<image>.png`. Images are bicubic-resized to
/// `input_size` when needed; files whose name starts with `eval` are tagged as
/// the eval split, everything else as train.
pub fn load_dataset(root: &Path, input_size: usize) -> Result<LabeledDataset> {
    let entries = fs::read_dir(root).map_err(|e| Error::path(root, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut ds = LabeledDataset {
        images: Vec::new(),
        labels: Vec::new(),
        splits: Vec::new(),
        identity_names: Vec::new(),
    };
    for dir in dirs {
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::path(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        if files.is_empty() {
            continue;
        }
        // Train files first, matching the order `save_dataset` writes.
        files.sort_by_key(|p| (is_eval_file(p), p.clone()));
        let label = ds.identity_names.len();
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        if files.len() < 2 {
            log::warn!("identity `{name}` has fewer than 2 images; it will be excluded from pairs");
        }
        ds.identity_names.push(name);
        for f in files {
            let mut img = ImageBuffer::load_png(&f)?;
            if img.width() != input_size || img.height() != input_size {
                img = resample_bicubic(&img, input_size, input_size)?;
                img.resolution = input_size;
            }
            let eval = is_eval_file(&f);
            ds.images.push(img);
            ds.labels.push(label);
            ds.splits.push(if eval { Split::Eval } else { Split::Train });
        }
    }
    if ds.is_empty() {
        return Err(Error::path(root, "no identity directories with PNG images"));
    }
    Ok(ds)
}

/// Build `n_pairs` verification pairs (⌊n/2⌋ positive, the rest negative)
/// from the eval split, or from all images when there is no eval split.
/// Identities with fewer than two candidate images are excluded.
pub fn make_pairs(ds: &LabeledDataset, n_pairs: usize, seed: u64) -> Result<VerificationPairs> {
    let mut pool = ds.indices(Split::Eval);
    if pool.is_empty() {
        pool = (0..ds.len()).collect();
    }
    let mut by_id: Vec<Vec<usize>> = vec![Vec::new(); ds.n_identities()];
    for &i in &pool {
        by_id[ds.labels[i]].push(i);
    }
    let eligible: Vec<usize> = (0..by_id.len()).filter(|&id| by_id[id].len() >= 2).collect();
    if eligible.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 identities with 2+ images, found {}",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n_pairs / 2;
    let n_neg = n_pairs - n_pos;

    let mut positives: Vec<Pair> = eligible
        .iter()
        .flat_map(|&id| {
            let imgs = &by_id[id];
            (0..imgs.len()).flat_map(move |x| {
                (x + 1..imgs.len()).map(move |y| Pair {
                    a: imgs[x],
                    b: imgs[y],
                    same: true,
                })
            })
        })
        .collect();
    positives.shuffle(&mut rng);
    let mut out: Vec<Pair> = positives.iter().copied().cycle().take(n_pos).collect();

    let negatives_available: usize = {
        let counts: Vec<usize> = eligible.iter().map(|&id| by_id[id].len()).collect();
        let total: usize = counts.iter().sum();
        (total * total - counts.iter().map(|c| c * c).sum::<usize>()) / 2
    };
    let mut seen = HashSet::new();
    let mut drawn = 0;
    while drawn < n_neg {
        let ia = eligible[rng.gen_range(0..eligible.len())];
        let ib = eligible[rng.gen_range(0..eligible.len())];
        if ia == ib {
            continue;
        }
        let a = by_id[ia][rng.gen_range(0..by_id[ia].len())];
        let b = by_id[ib][rng.gen_range(0..by_id[ib].len())];
        let key = (a.min(b), a.max(b));
        if seen.len() < negatives_available && !seen.insert(key) {
            continue;
        }
        out.push(Pair { a, b, same: false });
        drawn += 1;
    }
    out.shuffle(&mut rng);
    Ok(VerificationPairs { pairs: out })
}
