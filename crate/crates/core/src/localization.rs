//! Attention-based region localization: pool `M` over classes, upsample to
//! image size, threshold, and crop.

use crate::backbone::Image;
use crate::error::{Result, SacError};
use crate::joint_attention::AttentionMap;

/// Default threshold ratio against the heatmap maximum.
pub const DEFAULT_RATIO: f64 = 0.1;

/// Row-major `rows × cols` real grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(SacError::shape(
                "heatmap",
                format!("{rows}x{cols} values"),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("heatmap".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row and column of the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Values scaled to `0..=255` by per-map min-max normalization.
    pub fn to_gray8(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.max();
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Inclusive box; `x` indexes rows and `y` indexes columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct CropBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl CropBox {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            x1: 0,
            y1: 0,
            x2: rows - 1,
            y2: cols - 1,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.x1..=self.x2).contains(&r) && (self.y1..=self.y2).contains(&c)
    }

    pub fn contains_box(&self, other: &CropBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn height(&self) -> usize {
        self.x2 - self.x1 + 1
    }

    pub fn width(&self) -> usize {
        self.y2 - self.y1 + 1
    }
}

/// `grid[r][c] = Σ_j M[r·n + c][j]`.
pub fn pool_correlation(m: &AttentionMap, rows: usize, cols: usize) -> Result<Heatmap> {
    if m.cells() != rows * cols {
        return Err(SacError::shape(
            "pool_correlation",
            format!("{} cells for a {rows}x{cols} grid", rows * cols),
            m.cells(),
        ));
    }
    let values = m
        .weights
        .view2()
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .collect();
    Heatmap::new(rows, cols, values)
}

fn axis_coords(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let s = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Align-corners bilinear resampling of a `rows × cols × channels` buffer.
fn resample(
    src: &[f64],
    rows: usize,
    cols: usize,
    channels: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let (ry, cx) = (axis_coords(rows, h), axis_coords(cols, w));
    let mut out = vec![0.0; channels * h * w];
    for ch in 0..channels {
        let plane = &src[ch * rows * cols..(ch + 1) * rows * cols];
        for (r, &(r0, r1, fr)) in ry.iter().enumerate() {
            for (c, &(c0, c1, fc)) in cx.iter().enumerate() {
                let top = plane[r0 * cols + c0] * (1.0 - fc) + plane[r0 * cols + c1] * fc;
                let bot = plane[r1 * cols + c0] * (1.0 - fc) + plane[r1 * cols + c1] * fc;
                out[(ch * h + r) * w + c] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    out
}

/// Align-corners bilinear upsampling; a length-1 axis is replicated.
pub fn bilinear_upsample(grid: &Heatmap, h: usize, w: usize) -> Result<Heatmap> {
    if h < 1 || w < 1 {
        return Err(SacError::InvalidArgument(format!(
            "target size {h}x{w} must be positive"
        )));
    }
    Heatmap::new(h, w, resample(&grid.values, grid.rows, grid.cols, 1, h, w))
}

/// Nearest-cell upsampling; requires the target to be a multiple of the grid.
pub fn nearest_upsample(grid: &Heatmap, h: usize, w: usize) -> Result<Heatmap> {
    if !h.is_multiple_of(grid.rows) || !w.is_multiple_of(grid.cols) || h == 0 || w == 0 {
        return Err(SacError::shape(
            "nearest_upsample",
            format!("multiple of {}x{}", grid.rows, grid.cols),
            format!("{h}x{w}"),
        ));
    }
    let (bh, bw) = (h / grid.rows, w / grid.cols);
    let values = (0..h * w)
        .map(|i| grid.get(i / w / bh, (i % w) / bw))
        .collect();
    Heatmap::new(h, w, values)
}

/// Box spanning every cell with value `≥ ratio · max`.
pub fn threshold_bbox(heatmap: &Heatmap, ratio: f64) -> Result<CropBox> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SacError::InvalidArgument(format!(
            "ratio {ratio} outside (0, 1)"
        )));
    }
    let g_max = heatmap.max();
    if g_max.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(SacError::NoActivatedRegion);
    }
    let g_min = ratio * g_max;
    let mut b = CropBox {
        x1: usize::MAX,
        y1: usize::MAX,
        x2: 0,
        y2: 0,
    };
    for r in 0..heatmap.rows {
        for c in 0..heatmap.cols {
            if heatmap.get(r, c) >= g_min {
                b.x1 = b.x1.min(r);
                b.y1 = b.y1.min(c);
                b.x2 = b.x2.max(r);
                b.y2 = b.y2.max(c);
            }
        }
    }
    Ok(b)
}

/// `M′ = (M ≥ γ_min)·M`.
pub fn suppress_below(heatmap: &Heatmap, ratio: f64) -> Heatmap {
    let g_min = ratio * heatmap.max();
    Heatmap {
        rows: heatmap.rows,
        cols: heatmap.cols,
        values: heatmap
            .values
            .iter()
            .map(|&v| if v >= g_min { v } else { 0.0 })
            .collect(),
    }
}

/// Inclusive sub-image, without resizing.
pub fn crop_raw(image: &Image, b: &CropBox) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    if b.x1 > b.x2 || b.y1 > b.y2 || b.x2 >= h || b.y2 >= w {
        return Err(SacError::InvalidArgument(format!(
            "crop box {b:?} outside a {h}x{w} image"
        )));
    }
    let (ch, cw) = (b.height(), b.width());
    let mut data = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        for r in b.x1..=b.x2 {
            let start = (c * h + r) * w;
            data.extend_from_slice(&image.data()[start + b.y1..=start + b.y2]);
        }
    }
    Image::new_unchecked_size(ch, cw, data)
}

/// Align-corners bilinear resize.
pub fn resize(image: &Image, h: usize, w: usize) -> Result<Image> {
    if (image.height(), image.width()) == (h, w) {
        return Ok(image.clone());
    }
    let data = resample(image.data(), image.height(), image.width(), 3, h, w);
    Image::new_unchecked_size(h, w, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Crop then resize back to the source size.
pub fn crop(image: &Image, b: &CropBox) -> Result<Image> {
    resize(&crop_raw(image, b)?, image.height(), image.width())
}

/// Full localization from an attention map over an `rows × cols` grid.
pub fn localize(
    image: &Image,
    m: &AttentionMap,
    rows: usize,
    cols: usize,
    ratio: f64,
) -> Result<(CropBox, Image)> {
    let grid = pool_correlation(m, rows, cols)?;
    let heat = bilinear_upsample(&grid, image.height(), image.width())?;
    let b = threshold_bbox(&heat, ratio)?;
    Ok((b, crop(image, &b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{softmax_slice, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(f: usize, k: usize, rng: &mut ChaCha8Rng) -> AttentionMap {
        let raw: Vec<f64> = (0..f * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        AttentionMap {
            weights: Tensor::matrix(f, k, softmax_slice(&raw).unwrap()).unwrap(),
        }
    }

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new_unchecked_size(h, w, (0..3 * h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn pool_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let single = random_map(6, 1, &mut rng);
        assert_eq!(
            pool_correlation(&single, 2, 3).unwrap().values,
            single.weights.data()
        );
        let uniform = AttentionMap {
            weights: Tensor::matrix(6, 3, vec![1.0 / 18.0; 18]).unwrap(),
        };
        for v in pool_correlation(&uniform, 2, 3).unwrap().values {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        let m = random_map(6, 3, &mut rng);
        let g = pool_correlation(&m, 2, 3).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for j in 0..3 {
                    s += m.get(r * 3 + c, j);
                }
                assert_eq!(g.get(r, c), s);
            }
        }
        assert!(pool_correlation(&m, 3, 3).is_err());
    }

    #[test]
    fn upsample_examples() {
        let c = Heatmap::new(2, 3, vec![0.7; 6]).unwrap();
        for v in bilinear_upsample(&c, 9, 11).unwrap().values {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Heatmap::new(3, 4, (0..12).map(|_| rng.gen()).collect()).unwrap();
        let up = bilinear_upsample(&g, 16, 16).unwrap();
        assert_eq!(up.get(0, 0), g.get(0, 0));
        assert_eq!(up.get(15, 15), g.get(2, 3));
        let ramp = bilinear_upsample(&Heatmap::new(1, 2, vec![0.0, 1.0]).unwrap(), 1, 5).unwrap();
        assert_eq!(ramp.values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(bilinear_upsample(&g, 0, 4).is_err());
        let one = bilinear_upsample(&Heatmap::new(1, 1, vec![3.0]).unwrap(), 4, 4).unwrap();
        assert!(one.values.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn bbox_examples() {
        let mut v = vec![0.0; 8 * 8];
        v[3 * 8 + 5] = 2.0;
        let b = threshold_bbox(&Heatmap::new(8, 8, v).unwrap(), 0.1).unwrap();
        assert_eq!(
            b,
            CropBox {
                x1: 3,
                y1: 5,
                x2: 3,
                y2: 5
            }
        );
        let b = threshold_bbox(&Heatmap::new(5, 7, vec![0.3; 35]).unwrap(), 0.1).unwrap();
        assert_eq!(b, CropBox::full(5, 7));
        assert!(matches!(
            threshold_bbox(&Heatmap::new(4, 4, vec![0.0; 16]).unwrap(), 0.1),
            Err(SacError::NoActivatedRegion)
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = Heatmap::new(16, 16, (0..256).map(|_| rng.gen::<f64>().powi(6)).collect()).unwrap();
        let b = threshold_bbox(&h, 0.1).unwrap();
        let t = 0.1 * h.max();
        let sel: Vec<(usize, usize)> = (0..256)
            .filter(|i| h.values[*i] >= t)
            .map(|i| (i / 16, i % 16))
            .collect();
        assert_eq!(b.x1, sel.iter().map(|p| p.0).min().unwrap());
        assert_eq!(b.x2, sel.iter().map(|p| p.0).max().unwrap());
        assert_eq!(b.y1, sel.iter().map(|p| p.1).min().unwrap());
        assert_eq!(b.y2, sel.iter().map(|p| p.1).max().unwrap());
    }

    #[test]
    fn suppress_matches_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Heatmap::new(6, 6, (0..36).map(|_| rng.gen::<f64>().powi(4)).collect()).unwrap();
        let s = suppress_below(&h, 0.1);
        let t = 0.1 * h.max();
        for (a, b) in s.values.iter().zip(&h.values) {
            assert_eq!(*a, if *b >= t { *b } else { 0.0 });
        }
    }

    #[test]
    fn crop_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(16, 16, &mut rng);
        let full = CropBox::full(16, 16);
        let once = crop(&img, &full).unwrap();
        assert_eq!(once, img);
        assert_eq!(crop(&once, &full).unwrap(), once);
        let dot = crop(
            &img,
            &CropBox {
                x1: 4,
                y1: 7,
                x2: 4,
                y2: 7,
            },
        )
        .unwrap();
        for c in 0..3 {
            let v = img.get(c, 4, 7);
            for r in 0..16 {
                for col in 0..16 {
                    assert_eq!(dot.get(c, r, col), v);
                }
            }
        }
        let raw = crop_raw(
            &img,
            &CropBox {
                x1: 2,
                y1: 3,
                x2: 5,
                y2: 9,
            },
        )
        .unwrap();
        assert_eq!((raw.height(), raw.width()), (4, 7));
        assert_eq!(raw.get(1, 0, 0), img.get(1, 2, 3));
        assert!(crop(
            &img,
            &CropBox {
                x1: 0,
                y1: 0,
                x2: 16,
                y2: 3
            }
        )
        .is_err());
    }

    #[test]
    fn nearest_upsample_preserves_block_sums() {
        let g = Heatmap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let up = nearest_upsample(&g, 8, 8).unwrap();
        assert!((up.values.iter().sum::<f64>() - 16.0).abs() < 1e-12);
        assert_eq!(up.get(7, 0), 0.3);
        assert!(nearest_upsample(&g, 7, 8).is_err());
    }

    proptest::proptest! {
        #[test]
        fn bbox_contains_argmax_and_is_monotone(seed in 0u64..100_000, power in 1i32..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = Heatmap::new(12, 10, (0..120).map(|_| rng.gen::<f64>().powi(power)).collect()).unwrap();
            let b = threshold_bbox(&h, 0.1).unwrap();
            let (r, c) = h.argmax();
            proptest::prop_assert!(b.contains(r, c));
            let lower = threshold_bbox(&h, 0.05).unwrap();
            proptest::prop_assert!(lower.contains_box(&b));
        }

        #[test]
        fn upsample_commutes_with_scaling(seed in 0u64..100_000, s in 0.01f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Heatmap::new(3, 5, (0..15).map(|_| rng.gen()).collect()).unwrap();
            let sg = Heatmap::new(3, 5, g.values.iter().map(|v| v * s).collect()).unwrap();
            let a = bilinear_upsample(&sg, 16, 20).unwrap();
            let b = bilinear_upsample(&g, 16, 20).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                proptest::prop_assert!((x - s * y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
