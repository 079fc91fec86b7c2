//! Attention, drop-mask and localization dumps for a single image.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Config;
use super::evaluate::{check_mode, PredictionRecord};
use crate::backbone::Image;
use crate::dropping::{attention_masks, combine_masks, CombinedKeepMask};
use crate::error::{Result, SacError};
use crate::localization::{
    bilinear_upsample, crop, nearest_upsample, pool_correlation, threshold_bbox, CropBox, Heatmap,
};
use crate::model::{InferenceMode, Prediction, SacModel};
use crate::synthdata::{load_image, save_gray, save_image};

pub struct VisualOutput {
    pub files: Vec<PathBuf>,
    /// Per-class heatmaps before 8-bit quantization, in top-k order.
    pub class_heatmaps: Vec<Heatmap>,
    /// Column sums of the attention map, in top-k order.
    pub attention_column_sums: Vec<f64>,
    pub record: VisualRecord,
}

#[derive(Clone, Debug, Serialize)]
pub struct VisualRecord {
    #[serde(flatten)]
    pub prediction: PredictionRecord,
    pub topk_names: Vec<String>,
    pub top1_name: String,
    pub alpha: f64,
    pub dropped_cells: usize,
}

/// Dropped cells dimmed to a quarter of their brightness.
fn keep_overlay(image: &Image, keep: &CombinedKeepMask, m: usize, n: usize) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let mut data = image.data().to_vec();
    for c in 0..3 {
        for r in 0..h {
            for col in 0..w {
                let cell = (r * m / h) * n + col * n / w;
                if keep.values[cell] == 0 {
                    data[(c * h + r) * w + col] *= 0.25;
                }
            }
        }
    }
    Image::new_unchecked_size(h, w, data)
}

fn fused_prediction(model: &SacModel, config: &Config, image: &Image) -> Result<Prediction> {
    check_mode(config, InferenceMode::Fused)?;
    let table = model.class_table()?;
    model.predict(image, &config.inference(InferenceMode::Fused), Some(&table))
}

/// Writes `k` per-class heatmaps, the pooled heatmap, the keep-mask overlay,
/// the localization crop and `prediction.json` into `out_dir`.
pub fn visualize(
    model: &SacModel,
    config: &Config,
    image_path: &Path,
    out_dir: &Path,
) -> Result<VisualOutput> {
    let image = load_image(image_path)?;
    let (h, w) = (image.height(), image.width());
    let pred = fused_prediction(model, config, &image)?;
    let m = pred
        .attention
        .as_ref()
        .expect("fused prediction carries attention");
    let (gm, gn) = pred.grid;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut class_heatmaps = Vec::new();
    let mut sums = Vec::new();
    for (j, &class) in pred.topk.classes.iter().enumerate() {
        let col = m.column(j);
        sums.push(col.iter().sum());
        let heat = nearest_upsample(&Heatmap::new(gm, gn, col)?, h, w)?;
        let path = out_dir.join(format!("heatmap_{j:02}_class{class}.png"));
        save_gray(&path, h, w, &heat.to_gray8())?;
        files.push(path);
        class_heatmaps.push(heat);
    }
    let pooled = bilinear_upsample(&pool_correlation(m, gm, gn)?, h, w)?;
    let path = out_dir.join("heatmap_pooled.png");
    save_gray(&path, h, w, &pooled.to_gray8())?;
    files.push(path);

    let keep = combine_masks(&attention_masks(m, config.d_phi)?, config.combine)?;
    let path = out_dir.join("keep_overlay.png");
    save_image(&path, &keep_overlay(&image, &keep, gm, gn)?)?;
    files.push(path);

    let b = threshold_bbox(&pooled, config.loc_ratio)?;
    let path = out_dir.join("crop.png");
    save_image(&path, &crop(&image, &b)?)?;
    files.push(path);

    let mut prediction = PredictionRecord::new(image_path.display().to_string(), None, &pred);
    prediction.crop = Some(b);
    let record = VisualRecord {
        topk_names: pred
            .topk
            .classes
            .iter()
            .map(|&c| model.class_names[c].clone())
            .collect(),
        top1_name: model.class_names[pred.label].clone(),
        prediction,
        alpha: config.alpha,
        dropped_cells: keep.dropped(),
    };
    let path = out_dir.join("prediction.json");
    fs::write(
        &path,
        serde_json::to_string(&record).expect("record serializes") + "\n",
    )?;
    files.push(path);
    Ok(VisualOutput {
        files,
        class_heatmaps,
        attention_column_sums: sums,
        record,
    })
}

/// Localized classification of one image; writes the crop to `crop_path`.
pub fn localize_image(
    model: &SacModel,
    config: &Config,
    image_path: &Path,
    crop_path: &Path,
) -> Result<(CropBox, PredictionRecord)> {
    check_mode(config, InferenceMode::Localized)?;
    let image = load_image(image_path)?;
    let table = model.class_table()?;
    let pred = model.predict(
        &image,
        &config.inference(InferenceMode::Localized),
        Some(&table),
    )?;
    let b = pred
        .crop
        .ok_or_else(|| SacError::InvalidArgument("localized prediction produced no crop".into()))?;
    if let Some(dir) = crop_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_image(crop_path, &crop(&image, &b)?)?;
    Ok((
        b,
        PredictionRecord::new(image_path.display().to_string(), None, &pred),
    ))
}
