//! Sectioned `key = value` experiment configuration.
//!
//! ```ini
//! [data]
//! n_identities = 50
//! [network]
//! channel_widths = 16,32,64,128
//! [loss]
//! dist = logexp:1
//! [augment]
//! plan = 7:1,14:1,20:2
//! [optim]
//! epochs = 20
//! [eval]
//! resolutions = 7,14,20,28,56,112
//! ```
//!
//! Every section and key is optional; unknown sections or keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::imageops::AugmentationPlan;
use crate::losses::DistanceKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub pairs: usize,
    pub pair_seed: u64,
    pub resolutions: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pairs: 600,
            pair_seed: 0,
            resolutions: vec![7, 14, 20, 28, 56, 112],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DatasetSpec,
    /// Load images from this directory instead of generating them.
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

fn config_err(section: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        section: section.into(),
        key: key.into(),
        message: message.into(),
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(section, key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn parse_range(section: &str, key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(section, key, value)?[..] {
        [lo, hi] => Ok((lo, hi)),
        _ => Err(config_err(section, key, "expected `lo, hi`")),
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "dir",
            "n_identities",
            "images_per_identity",
            "eval_per_identity",
            "translation_px",
            "rotation_deg",
            "brightness",
            "fine_sigma",
            "coarse_sigma",
            "coarse_amplitude",
            "clutter",
            "texture",
            "seed",
        ],
    ),
    ("network", &["channel_widths", "embedding_dim", "input_size"]),
    ("loss", &["dist", "lambda", "scale", "margin"]),
    ("augment", &["plan", "flip_prob"]),
    (
        "optim",
        &["epochs", "batch_size", "lr", "milestones", "momentum", "weight_decay", "grad_clip", "seed"],
    ),
    ("eval", &["pairs", "pair_seed", "resolutions"]),
];

impl ExperimentConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| config_err("", "", e.to_string()))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(config_err("", k, "key outside any section"));
                }
                continue;
            };
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| *s == section) else {
                return Err(config_err(section, "", "unknown section"));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(config_err(section, k, "unknown key"));
                }
            }
        }
        let get = |section: &str, key: &str| ini.get_from(Some(section), key);

        let mut cfg = ExperimentConfig::default();
        let net = &mut cfg.train.network;
        if let Some(v) = get("network", "channel_widths") {
            net.channel_widths = parse_list("network", "channel_widths", v)?;
        }
        if let Some(v) = get("network", "embedding_dim") {
            net.embedding_dim = parse("network", "embedding_dim", v)?;
        }
        if let Some(v) = get("network", "input_size") {
            net.input_size = parse("network", "input_size", v)?;
        }
        net.validate()
            .map_err(|e| config_err("network", "", e.to_string()))?;
        let input_size = net.input_size;

        let d = &mut cfg.data;
        d.input_size = input_size;
        macro_rules! field {
            ($section:literal, $key:literal, $slot:expr) => {
                if let Some(v) = get($section, $key) {
                    $slot = parse($section, $key, v)?;
                }
            };
        }
        field!("data", "n_identities", d.n_identities);
        field!("data", "images_per_identity", d.images_per_identity);
        field!("data", "eval_per_identity", d.eval_per_identity);
        field!("data", "translation_px", d.translation_px);
        field!("data", "rotation_deg", d.rotation_deg);
        field!("data", "brightness", d.brightness);
        field!("data", "coarse_amplitude", d.coarse_amplitude);
        field!("data", "clutter", d.clutter);
        field!("data", "texture", d.texture);
        if let Some(v) = get("data", "fine_sigma") {
            d.fine_sigma = parse_range("data", "fine_sigma", v)?;
        }
        if let Some(v) = get("data", "coarse_sigma") {
            d.coarse_sigma = parse_range("data", "coarse_sigma", v)?;
        }
        field!("data", "seed", d.seed);
        cfg.data_dir = get("data", "dir").map(PathBuf::from);
        if cfg.data_dir.is_none() {
            d.validate().map_err(|e| config_err("data", "", e.to_string()))?;
        }

        let t = &mut cfg.train;
        if let Some(v) = get("loss", "dist") {
            t.loss.dist = DistanceKind::parse(v).map_err(|e| config_err("loss", "dist", e.to_string()))?;
        }
        field!("loss", "lambda", t.loss.lambda);
        field!("loss", "scale", t.loss.cosface_scale);
        field!("loss", "margin", t.loss.cosface_margin);
        t.loss
            .validate()
            .map_err(|e| config_err("loss", "", e.to_string()))?;

        t.plan = match get("augment", "plan") {
            Some(v) => AugmentationPlan::parse(v, input_size)
                .map_err(|e| config_err("augment", "plan", e.to_string()))?,
            None => AugmentationPlan::multi_resolution(input_size),
        };
        field!("augment", "flip_prob", t.flip_prob);

        field!("optim", "epochs", t.epochs);
        field!("optim", "batch_size", t.batch_size);
        field!("optim", "lr", t.lr);
        if let Some(v) = get("optim", "milestones") {
            t.lr_milestones = parse_list("optim", "milestones", v)?;
        }
        field!("optim", "momentum", t.momentum);
        field!("optim", "weight_decay", t.weight_decay);
        field!("optim", "grad_clip", t.grad_clip);
        field!("optim", "seed", t.seed);
        t.validate().map_err(|e| config_err("optim", "", e.to_string()))?;

        let e = &mut cfg.eval;
        field!("eval", "pairs", e.pairs);
        field!("eval", "pair_seed", e.pair_seed);
        if let Some(v) = get("eval", "resolutions") {
            e.resolutions = parse_list("eval", "resolutions", v)?;
        } else {
            e.resolutions.retain(|&r| r < input_size);
            e.resolutions.push(input_size);
        }
        if e.resolutions.iter().any(|&r| r == 0 || r > input_size) {
            return Err(config_err("eval", "resolutions", format!("values must lie in 1..={input_size}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let mut cfg = Self::from_ini_str(&text)?;
        // Relative data directories are resolved against the config file.
        if let (Some(dir), Some(parent)) = (&cfg.data_dir, path.parent()) {
            if dir.is_relative() {
                cfg.data_dir = Some(parent.join(dir));
            }
        }
        Ok(cfg)
    }

    /// Override every seed-bearing field.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.pair_seed = seed;
        self
    }
}
