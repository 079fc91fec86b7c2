//! Run configuration as UTF-8 `key=value` lines.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::assessment::LossWeights;
use crate::backbone::BackboneConfig;
use crate::dropping::Combine;
use crate::error::{Result, SacError};
use crate::model::{Augment, DropLevel, InferenceMode, InferenceOptions, ModelDims, StepOptions};

/// Augmentation variant selected by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    None,
    Sac,
    RandomDrop,
    RandomCrop,
}

impl FromStr for AugmentKind {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentKind::None),
            "sac" => Ok(AugmentKind::Sac),
            "random_drop" => Ok(AugmentKind::RandomDrop),
            "random_crop" => Ok(AugmentKind::RandomCrop),
            _ => Err(SacError::InvalidArgument(format!(
                "augment must be none|sac|random_drop|random_crop, got {s:?}"
            ))),
        }
    }
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Sac => "sac",
            AugmentKind::RandomDrop => "random_drop",
            AugmentKind::RandomCrop => "random_crop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub d_phi: f64,
    pub d_e: usize,
    pub d_j: usize,
    pub word_dim: usize,
    pub channels: Vec<usize>,
    pub pooled_blocks: usize,
    pub d_v: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub inference_mode: InferenceMode,
    pub combine: Combine,
    pub aug_prob: f64,
    /// Train the joint attention and fine head; `false` gives the plain backbone baseline.
    pub sac: bool,
    pub augment: AugmentKind,
    pub drop_level: DropLevel,
    pub random_drop_prob: f64,
    pub w_coarse: f64,
    pub w_fine: f64,
    pub w_aug: f64,
    pub loc_ratio: f64,
    pub checkpoint_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 10,
            alpha: 0.5,
            d_phi: 0.1,
            d_e: 1024,
            d_j: 1024,
            word_dim: 300,
            channels: vec![16, 32, 48, 64],
            pooled_blocks: 3,
            d_v: 128,
            epochs: 20,
            batch_size: 12,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_decay: 0.9,
            lr_decay_every: 2,
            inference_mode: InferenceMode::Fused,
            combine: Combine::Or,
            aug_prob: 1.0,
            sac: true,
            augment: AugmentKind::Sac,
            drop_level: DropLevel::Image,
            random_drop_prob: 0.3,
            w_coarse: 1.0,
            w_fine: 1.0,
            w_aug: 1.0,
            loc_ratio: 0.1,
            checkpoint_every: 5,
        }
    }
}

/// Every key accepted by [`Config::set`], in the order [`Config::to_text`] writes them.
pub const KEYS: [&str; 29] = [
    "seed",
    "k",
    "alpha",
    "d_phi",
    "d_e",
    "d_j",
    "word_dim",
    "channels",
    "pooled_blocks",
    "d_v",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay",
    "lr_decay_every",
    "inference_mode",
    "combine",
    "aug_prob",
    "sac",
    "augment",
    "drop_level",
    "random_drop_prob",
    "w_coarse",
    "w_fine",
    "w_aug",
    "loc_ratio",
    "checkpoint_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| SacError::Config {
        key: key.to_string(),
        msg: format!("cannot parse {value:?}: {e}"),
    })
}

impl Config {
    /// Reduced dimensions for 32×32 synthetic images that keep a full
    /// 20-epoch run within a couple of minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            d_e: 32,
            d_j: 32,
            word_dim: 16,
            channels: vec![16, 32, 48, 64],
            pooled_blocks: 2,
            d_v: 64,
            lr: 0.01,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            _ => Err(SacError::Config {
                key: "preset".into(),
                msg: format!("unknown preset {name:?} (paper|desk)"),
            }),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "d_phi" => self.d_phi = parse(key, v)?,
            "d_e" => self.d_e = parse(key, v)?,
            "d_j" => self.d_j = parse(key, v)?,
            "word_dim" => self.word_dim = parse(key, v)?,
            "channels" => {
                self.channels = v.split(',').map(|c| parse(key, c)).collect::<Result<_>>()?;
            }
            "pooled_blocks" => self.pooled_blocks = parse(key, v)?,
            "d_v" => self.d_v = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, v)?,
            "inference_mode" | "mode" => self.inference_mode = parse(key, v)?,
            "combine" => self.combine = parse(key, v)?,
            "aug_prob" => self.aug_prob = parse(key, v)?,
            "sac" => self.sac = parse(key, v)?,
            "augment" => self.augment = parse(key, v)?,
            "drop_level" => self.drop_level = parse(key, v)?,
            "random_drop_prob" => self.random_drop_prob = parse(key, v)?,
            "w_coarse" => self.w_coarse = parse(key, v)?,
            "w_fine" => self.w_fine = parse(key, v)?,
            "w_aug" => self.w_aug = parse(key, v)?,
            "loc_ratio" => self.loc_ratio = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => {
                return Err(SacError::Config {
                    key: key.to_string(),
                    msg: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "k" => self.k.to_string(),
            "alpha" => self.alpha.to_string(),
            "d_phi" => self.d_phi.to_string(),
            "d_e" => self.d_e.to_string(),
            "d_j" => self.d_j.to_string(),
            "word_dim" => self.word_dim.to_string(),
            "channels" => self
                .channels
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "pooled_blocks" => self.pooled_blocks.to_string(),
            "d_v" => self.d_v.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "inference_mode" => self.inference_mode.to_string(),
            "combine" => self.combine.to_string(),
            "aug_prob" => self.aug_prob.to_string(),
            "sac" => self.sac.to_string(),
            "augment" => self.augment.name().to_string(),
            "drop_level" => self.drop_level.to_string(),
            "random_drop_prob" => self.random_drop_prob.to_string(),
            "w_coarse" => self.w_coarse.to_string(),
            "w_fine" => self.w_fine.to_string(),
            "w_aug" => self.w_aug.to_string(),
            "loc_ratio" => self.loc_ratio.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SacError::Config {
                key: line.to_string(),
                msg: format!("line {} is not key=value", i + 1),
            })?;
            let key = key.trim();
            if key == "preset" {
                *self = Self::preset(value.trim())?;
            } else {
                self.set(key, value)?;
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(SacError::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| {
            Err(SacError::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if self.k < 1 {
            return fail("k", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha", "must lie in [0, 1]");
        }
        if !(self.d_phi > 0.0 && self.d_phi < 1.0) {
            return fail("d_phi", "must lie in (0, 1)");
        }
        for (key, v) in [
            ("d_e", self.d_e),
            ("d_j", self.d_j),
            ("word_dim", self.word_dim),
            ("d_v", self.d_v),
            ("batch_size", self.batch_size),
            ("lr_decay_every", self.lr_decay_every),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return fail(key, "must be positive");
            }
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return fail("channels", "must be a non-empty list of positive integers");
        }
        if self.pooled_blocks > self.channels.len() {
            return fail("pooled_blocks", "exceeds the number of conv blocks");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must lie in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return fail("weight_decay", "must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return fail("aug_prob", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.random_drop_prob) {
            return fail("random_drop_prob", "must lie in [0, 1)");
        }
        if !(self.loc_ratio > 0.0 && self.loc_ratio < 1.0) {
            return fail("loc_ratio", "must lie in (0, 1)");
        }
        for (key, w) in [
            ("w_coarse", self.w_coarse),
            ("w_fine", self.w_fine),
            ("w_aug", self.w_aug),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(key, "must be a finite non-negative weight");
            }
        }
        if self.augment == AugmentKind::Sac && !self.sac {
            return fail("augment", "sac dropping needs sac=true");
        }
        Ok(())
    }

    pub fn dims(&self, num_classes: usize) -> ModelDims {
        ModelDims {
            backbone: BackboneConfig {
                channels: self.channels.clone(),
                pooled_blocks: self.pooled_blocks,
                d_v: self.d_v,
                num_classes,
            },
            word_dim: self.word_dim,
            d_e: self.d_e,
            d_j: self.d_j,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn step_options(&self, batch: usize) -> StepOptions {
        let augment = if !self.sac && self.augment == AugmentKind::Sac {
            Augment::None
        } else {
            match self.augment {
                AugmentKind::None => Augment::None,
                AugmentKind::Sac => Augment::Attention {
                    level: self.drop_level,
                    combine: self.combine,
                    d_phi: self.d_phi,
                },
                AugmentKind::RandomDrop => Augment::RandomDrop {
                    p: self.random_drop_prob,
                },
                AugmentKind::RandomCrop => Augment::RandomCrop,
            }
        };
        StepOptions {
            sac: self.sac,
            k: self.k,
            augment,
            aug_prob: self.aug_prob,
            weights: LossWeights {
                coarse: self.w_coarse,
                fine: self.w_fine,
                aug: self.w_aug,
            },
            scale: 1.0 / batch as f64,
        }
    }

    pub fn inference(&self, mode: InferenceMode) -> InferenceOptions {
        InferenceOptions {
            mode,
            k: self.k,
            alpha: self.alpha,
            loc_ratio: self.loc_ratio,
        }
    }

    /// The plain backbone baseline matched to this configuration.
    pub fn baseline(&self) -> Self {
        Self {
            sac: false,
            augment: AugmentKind::None,
            inference_mode: InferenceMode::BackboneOnly,
            ..self.clone()
        }
    }
}
