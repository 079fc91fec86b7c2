//! Matched-seed ablations: dropping variants and one-knob sweeps.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::config::{AugmentKind, Config};
use super::evaluate::{evaluate, evaluate_with};
use super::train::train;
use crate::error::{Result, SacError};
use crate::model::InferenceMode;
use crate::synthdata::{Dataset, Split};

pub const ALPHAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const KS: [usize; 5] = [2, 5, 10, 20, 50];
pub const D_PHIS: [f64; 4] = [0.05, 0.1, 0.2, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub top1: f64,
    pub init_fingerprint: u64,
}

/// The four dropping variants, all with the self-assessment branch.
pub const DROP_VARIANTS: [(&str, AugmentKind); 4] = [
    ("no_drop", AugmentKind::None),
    ("random_drop", AugmentKind::RandomDrop),
    ("random_crop", AugmentKind::RandomCrop),
    ("sac_drop", AugmentKind::Sac),
];

/// Trains every variant from the same seed and reports fused test accuracy.
pub fn compare_dropping(config: &Config, data: &Dataset) -> Result<Vec<VariantRow>> {
    DROP_VARIANTS
        .iter()
        .map(|&(name, augment)| {
            let cfg = Config {
                sac: true,
                augment,
                ..config.clone()
            };
            let out = train(&cfg, data, None)?;
            let e = evaluate(&out.model, &cfg, data, Split::Test, InferenceMode::Fused)?;
            Ok(VariantRow {
                variant: name.to_string(),
                top1: e.top1,
                init_fingerprint: out.init_fingerprint,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKnob {
    Alpha,
    K,
    DPhi,
}

impl FromStr for SweepKnob {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepKnob::Alpha),
            "k" => Ok(SweepKnob::K),
            "d_phi" => Ok(SweepKnob::DPhi),
            _ => Err(SacError::InvalidArgument(format!(
                "sweep knob must be alpha|k|d_phi, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for SweepKnob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKnob::Alpha => "alpha",
            SweepKnob::K => "k",
            SweepKnob::DPhi => "d_phi",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub knob: SweepKnob,
    pub value: f64,
    pub top1: f64,
}

/// α only changes inference, so one trained model serves every value; `k`
/// and `d_phi` retrain per value. `k` values above the class count are skipped.
pub fn sweep(config: &Config, data: &Dataset, knob: SweepKnob) -> Result<Vec<SweepRow>> {
    let cfg = Config {
        sac: true,
        ..config.clone()
    };
    let fused = |c: &Config| -> Result<f64> {
        let out = train(c, data, None)?;
        Ok(evaluate(&out.model, c, data, Split::Test, InferenceMode::Fused)?.top1)
    };
    match knob {
        SweepKnob::Alpha => {
            let out = train(&cfg, data, None)?;
            let test = data.split(Split::Test);
            ALPHAS
                .iter()
                .map(|&alpha| {
                    let opts = Config {
                        alpha,
                        ..cfg.clone()
                    }
                    .inference(InferenceMode::Fused);
                    Ok(SweepRow {
                        knob,
                        value: alpha,
                        top1: evaluate_with(&out.model, &test, Split::Test, &opts)?.top1,
                    })
                })
                .collect()
        }
        SweepKnob::K => KS
            .iter()
            .filter(|&&k| k <= data.num_classes())
            .map(|&k| {
                Ok(SweepRow {
                    knob,
                    value: k as f64,
                    top1: fused(&Config { k, ..cfg.clone() })?,
                })
            })
            .collect(),
        SweepKnob::DPhi => D_PHIS
            .iter()
            .map(|&d_phi| {
                Ok(SweepRow {
                    knob,
                    value: d_phi,
                    top1: fused(&Config {
                        d_phi,
                        ..cfg.clone()
                    })?,
                })
            })
            .collect(),
    }
}
