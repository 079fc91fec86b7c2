//! Accuracy under the three inference modes.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::Config;
use crate::error::{Result, SacError};
use crate::localization::CropBox;
use crate::model::{InferenceMode, InferenceOptions, Prediction, SacModel};
use crate::synthdata::{Dataset, Sample, Split};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredClass {
    pub class: usize,
    pub score: f64,
}

/// One line of the prediction report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub image: String,
    pub truth: Option<usize>,
    pub topk: Vec<ScoredClass>,
    pub topk2: Option<Vec<ScoredClass>>,
    pub top1: usize,
    pub crop: Option<CropBox>,
}

impl PredictionRecord {
    pub fn new(image: String, truth: Option<usize>, p: &Prediction) -> Self {
        let scored = |classes: &[usize], scores: &[f64]| {
            classes
                .iter()
                .zip(scores)
                .map(|(&class, &score)| ScoredClass { class, score })
                .collect::<Vec<_>>()
        };
        Self {
            image,
            truth,
            topk: scored(&p.topk.classes, &p.topk.scores),
            topk2: p
                .fused
                .as_ref()
                .and_then(|f| f.topk2.as_ref())
                .map(|t| scored(&t.classes, &t.scores)),
            top1: p.label,
            crop: p.crop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: InferenceMode,
    pub split: Split,
    pub n: usize,
    pub top1: f64,
    /// Fraction of images whose label is in the coarse top-k.
    pub hit_at_k: f64,
    pub secs_per_image: f64,
    #[serde(skip)]
    pub records: Vec<PredictionRecord>,
}

/// Fails when `mode` needs a branch the checkpoint was never trained with.
pub fn check_mode(config: &Config, mode: InferenceMode) -> Result<()> {
    if !config.sac && mode != InferenceMode::BackboneOnly {
        return Err(SacError::InvalidArgument(format!(
            "{mode} inference needs the self-assessment branch, but this checkpoint was trained without it"
        )));
    }
    Ok(())
}

pub fn evaluate(
    model: &SacModel,
    config: &Config,
    data: &Dataset,
    split: Split,
    mode: InferenceMode,
) -> Result<EvalReport> {
    check_mode(config, mode)?;
    evaluate_with(model, &data.split(split), split, &config.inference(mode))
}

pub fn evaluate_with(
    model: &SacModel,
    samples: &[&Sample],
    split: Split,
    opts: &InferenceOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(SacError::InvalidArgument(format!(
            "no {split:?} images to evaluate"
        )));
    }
    let table = match opts.mode {
        InferenceMode::BackboneOnly => None,
        _ => Some(model.class_table()?),
    };
    let start = Instant::now();
    let preds: Vec<Prediction> = samples
        .par_iter()
        .map(|s| model.predict(&s.image(), opts, table.as_ref()))
        .collect::<Result<_>>()?;
    let secs = start.elapsed().as_secs_f64();
    let n = samples.len();
    let correct = samples
        .iter()
        .zip(&preds)
        .filter(|(s, p)| p.label == s.class_id)
        .count();
    let hits = samples
        .iter()
        .zip(&preds)
        .filter(|(s, p)| p.topk.contains(s.class_id))
        .count();
    Ok(EvalReport {
        mode: opts.mode,
        split,
        n,
        top1: correct as f64 / n as f64,
        hit_at_k: hits as f64 / n as f64,
        secs_per_image: secs / n as f64,
        records: samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| PredictionRecord::new(s.path.display().to_string(), Some(s.class_id), p))
            .collect(),
    })
}
