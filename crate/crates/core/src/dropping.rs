//! Attention-driven region dropping: per-class masks, their combination, and
//! application to feature maps or input pixels.

use std::fmt;
use std::str::FromStr;

use crate::backbone::Image;
use crate::diffcore::Tensor;
use crate::error::{Result, SacError};
use crate::joint_attention::AttentionMap;

/// Binary keep mask over `f` cells for one candidate class. `0` marks a dropped cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropMask {
    pub values: Vec<u8>,
    pub class_index: usize,
    pub threshold: OrderedThreshold,
}

/// The threshold a mask was built with (kept as raw bits so masks stay `Eq`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderedThreshold(u64);

impl OrderedThreshold {
    pub fn value(self) -> f64 {
        f64::from_bits(self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinedKeepMask {
    pub values: Vec<u8>,
}

impl CombinedKeepMask {
    pub fn all(f: usize, keep: bool) -> Self {
        Self {
            values: vec![u8::from(keep); f],
        }
    }

    pub fn dropped(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Combine {
    /// A cell is kept when any class keeps it.
    #[default]
    Or,
    /// A cell is dropped when any class drops it.
    And,
}

impl FromStr for Combine {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "or" => Ok(Combine::Or),
            "and" => Ok(Combine::And),
            _ => Err(SacError::InvalidArgument(format!(
                "combine must be or|and, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Or => "or",
            Combine::And => "and",
        })
    }
}

/// `mask[i] = 0` iff `column[i] > d_phi · global_max`.
pub fn drop_mask(
    column: &[f64],
    class_index: usize,
    d_phi: f64,
    global_max: f64,
) -> Result<DropMask> {
    if !(d_phi > 0.0 && d_phi < 1.0) {
        return Err(SacError::InvalidArgument(format!(
            "d_phi {d_phi} outside (0, 1)"
        )));
    }
    let t = d_phi * global_max;
    Ok(DropMask {
        values: column.iter().map(|&v| u8::from(v <= t)).collect(),
        class_index,
        threshold: OrderedThreshold(t.to_bits()),
    })
}

/// One mask per column of `M`, thresholded against the global maximum.
pub fn attention_masks(m: &AttentionMap, d_phi: f64) -> Result<Vec<DropMask>> {
    let g = m.max();
    (0..m.k())
        .map(|c| drop_mask(&m.column(c), c, d_phi, g))
        .collect()
}

pub fn combine_masks(masks: &[DropMask], mode: Combine) -> Result<CombinedKeepMask> {
    let first = masks
        .first()
        .ok_or_else(|| SacError::InvalidArgument("combine_masks needs at least one mask".into()))?;
    let f = first.values.len();
    let mut out = first.values.clone();
    for m in &masks[1..] {
        if m.values.len() != f {
            return Err(SacError::shape("combine_masks", f, m.values.len()));
        }
        for (o, &v) in out.iter_mut().zip(&m.values) {
            *o = match mode {
                Combine::Or => *o | v,
                Combine::And => *o & v,
            };
        }
    }
    Ok(CombinedKeepMask { values: out })
}

/// `F′[:, i] = F[:, i] · keep[i]` for `F` of shape `d_f × f`.
pub fn apply_feature_drop(features: &Tensor, keep: &CombinedKeepMask) -> Result<Tensor> {
    let s = features.shape();
    if s.len() != 2 || s[1] != keep.values.len() {
        return Err(SacError::shape(
            "apply_feature_drop",
            format!("[d_f, {}]", keep.values.len()),
            format!("{s:?}"),
        ));
    }
    let mut out = features.clone();
    mask_columns(out.data_mut(), &keep.values);
    Ok(out)
}

/// Zero every column `i` with `keep[i] == 0` of a row-major buffer with
/// `keep.len()` columns. Also the backward of [`apply_feature_drop`].
pub fn mask_columns(data: &mut [f64], keep: &[u8]) {
    for row in data.chunks_mut(keep.len()) {
        for (v, &k) in row.iter_mut().zip(keep) {
            if k == 0 {
                *v = 0.0;
            }
        }
    }
}

/// Zero the pixels of every dropped cell, with the `m × n` grid upsampled by
/// nearest cell.
pub fn image_level_erase(
    image: &Image,
    keep: &CombinedKeepMask,
    m: usize,
    n: usize,
) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    if m == 0 || n == 0 || keep.values.len() != m * n || h % m != 0 || w % n != 0 {
        return Err(SacError::shape(
            "image_level_erase",
            format!("grid {m}x{n} dividing a {h}x{w} image with {} cells", m * n),
            format!("{} mask cells", keep.values.len()),
        ));
    }
    let (bh, bw) = (h / m, w / n);
    let mut out = image.clone();
    let data = out.data_mut();
    for c in 0..3 {
        for r in 0..h {
            for col in 0..w {
                if keep.values[(r / bh) * n + col / bw] == 0 {
                    data[(c * h + r) * w + col] = 0.0;
                }
            }
        }
    }
    Ok(out)
}
