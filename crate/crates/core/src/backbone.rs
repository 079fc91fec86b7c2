//! Convolutional feature extractor, coarse classifier head and top-k class search.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::diffcore::{Linear, Parameterized, Tensor};
use crate::error::{Result, SacError};

pub const MIN_IMAGE_SIDE: usize = 16;

/// RGB image stored channel-major (`3 × H × W`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(SacError::InvalidArgument(format!(
                "image {height}x{width} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        Self::new_unchecked_size(height, width, data)
    }

    /// Like [`Image::new`] but without the minimum side; crops may be tiny
    /// before they are resized back to the model input.
    pub fn new_unchecked_size(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SacError::InvalidArgument("image with a zero side".into()));
        }
        if data.len() != 3 * height * width {
            return Err(SacError::shape(
                "Image::new",
                format!("{} values for 3x{height}x{width}", 3 * height * width),
                data.len(),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SacError::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; 3 * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Backbone output: spatial features `F` (`d_f × m × n`) and the visual vector `V`.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    /// Shape `[d_f, m, n]`.
    pub features: Tensor,
    pub visual: Tensor,
    pub m: usize,
    pub n: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    /// Number of spatial cells `f = m·n`.
    pub fn cells(&self) -> usize {
        self.m * self.n
    }

    /// `F` flattened to `d_f × f`, cells in row-major order.
    pub fn flat(&self) -> Tensor {
        Tensor::matrix(self.channels(), self.cells(), self.features.data().to_vec())
            .expect("feature map shape")
    }
}

/// The `k` most confident classes, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKPrediction {
    pub classes: Vec<usize>,
    pub scores: Vec<f64>,
    pub num_classes: usize,
}

impl TopKPrediction {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.contains(&class)
    }
}

/// Returns the `k` highest-scoring classes in non-increasing score order;
/// equal scores go to the lower class index.
pub fn topk_search(scores: &[f64], k: usize) -> Result<TopKPrediction> {
    let n = scores.len();
    if k < 1 || k > n {
        return Err(SacError::InvalidArgument(format!(
            "top-k with k={k} over {n} classes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(TopKPrediction {
        scores: order.iter().map(|&c| scores[c]).collect(),
        classes: order,
        num_classes: n,
    })
}

/// Minimal interface a feature extractor must offer to the SAC branch.
pub trait VisualBackbone {
    fn extract_features(&self, image: &Image) -> Result<FeatureMap>;
    fn coarse_logits(&self, visual: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    /// The first `pooled_blocks` blocks end with a 2×2 average pool.
    pub pooled_blocks: usize,
    pub d_v: usize,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 48, 64],
            pooled_blocks: 3,
            d_v: 128,
            num_classes: 40,
        }
    }
}

impl BackboneConfig {
    pub fn d_f(&self) -> usize {
        *self.channels.last().expect("at least one block")
    }

    /// Feature grid `(m, n)` for an input of the given size.
    pub fn grid_for(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let scale = 1usize << self.pooled_blocks;
        if height < MIN_IMAGE_SIDE.max(scale)
            || width < MIN_IMAGE_SIDE.max(scale)
            || !height.is_multiple_of(scale)
            || !width.is_multiple_of(scale)
        {
            return Err(SacError::InvalidArgument(format!(
                "image {height}x{width} is below the receptive-field minimum or not divisible by {scale}"
            )));
        }
        Ok((height / scale, width / scale))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(SacError::InvalidArgument(
                "backbone channels must be positive".into(),
            ));
        }
        if self.pooled_blocks > self.channels.len() {
            return Err(SacError::InvalidArgument(
                "more pooled blocks than convolution blocks".into(),
            ));
        }
        if self.d_v == 0 || self.num_classes == 0 {
            return Err(SacError::InvalidArgument(
                "d_v and class count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weight shape `[out, in·9]`.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv3x3 {
    fn new<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        // He-uniform for ReLU.
        let bound = (6.0 / (c_in * 9) as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[c_out, c_in * 9], bound, rng),
            bias: Tensor::zeros(&[c_out]).with_grad(true),
        }
    }

    fn c_in(&self) -> usize {
        self.weight.shape()[1] / 9
    }

    fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                out[(ch * oh + y) * ow + x] =
                    0.25 * (input[base] + input[base + 1] + input[base + w] + input[base + w + 1]);
            }
        }
    }
    out
}

fn avg_pool2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * dout[(ch * oh + y) * ow + x];
                let base = ch * h * w + 2 * y * w + 2 * x;
                din[base] = g;
                din[base + 1] = g;
                din[base + w] = g;
                din[base + w + 1] = g;
            }
        }
    }
    din
}

struct BlockCache {
    h: usize,
    w: usize,
    cols: Vec<f64>,
    /// Post-ReLU activations (pre-pool), used as the ReLU mask.
    activ: Vec<f64>,
    pooled: bool,
}

/// Forward state needed by [`ConvBackbone::backward`].
pub struct BackboneCache {
    blocks: Vec<BlockCache>,
    pooled_features: Tensor,
    pub output: FeatureMap,
}

/// Reference backbone: blocks of `conv3x3 → ReLU → [avg-pool 2×2]`, global average
/// pool, affine projection to `V`, and the coarse classifier head.
#[derive(Clone, Debug)]
pub struct ConvBackbone {
    pub config: BackboneConfig,
    pub convs: Vec<Conv3x3>,
    pub proj: Linear,
    pub head: Linear,
}

impl ConvBackbone {
    pub fn new<R: Rng>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut c_in = 3;
        let mut convs = Vec::with_capacity(config.channels.len());
        for &c_out in &config.channels {
            convs.push(Conv3x3::new(c_in, c_out, rng));
            c_in = c_out;
        }
        let proj = Linear::new(config.d_f(), config.d_v, rng);
        let head = Linear::new(config.d_v, config.num_classes, rng);
        Ok(Self {
            config,
            convs,
            proj,
            head,
        })
    }

    pub fn forward(&self, image: &Image) -> Result<BackboneCache> {
        let (m, n) = self.config.grid_for(image.height(), image.width())?;
        let (mut h, mut w) = (image.height(), image.width());
        let mut x = image.data().to_vec();
        let mut blocks = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let (c_in, c_out) = (conv.c_in(), conv.c_out());
            let cols = im2col(&x, c_in, h, w);
            let hw = h * w;
            let mut out = vec![0.0; c_out * hw];
            {
                let wv = conv.weight.view2();
                let cv = ArrayView2::from_shape((c_in * 9, hw), &cols).expect("cols");
                let mut ov = ArrayViewMut2::from_shape((c_out, hw), &mut out).expect("out");
                general_mat_mul(1.0, &wv, &cv, 0.0, &mut ov);
            }
            for (o, &b) in out.chunks_mut(hw).zip(conv.bias.data()) {
                o.iter_mut().for_each(|v| *v = (*v + b).max(0.0));
            }
            let pooled = i < self.config.pooled_blocks;
            x = if pooled {
                avg_pool2(&out, c_out, h, w)
            } else {
                out.clone()
            };
            blocks.push(BlockCache {
                h,
                w,
                cols,
                activ: out,
                pooled,
            });
            if pooled {
                h /= 2;
                w /= 2;
            }
        }
        debug_assert_eq!((h, w), (m, n));
        let d_f = self.config.d_f();
        let cells = (m * n) as f64;
        let gap: Vec<f64> = x
            .chunks(m * n)
            .map(|c| c.iter().sum::<f64>() / cells)
            .collect();
        let gap = Tensor::vector(gap)?;
        let visual = self.proj.forward(&gap)?;
        if !visual.is_finite() {
            return Err(SacError::NonFinite("backbone visual feature".into()));
        }
        Ok(BackboneCache {
            blocks,
            pooled_features: gap,
            output: FeatureMap {
                features: Tensor::new(vec![d_f, m, n], x)?,
                visual,
                m,
                n,
            },
        })
    }

    /// Backpropagates cotangents of `F` (optional, flattened `d_f × f`) and `V`
    /// into `grads`.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        d_features: Option<&[f64]>,
        d_visual: &Tensor,
        grads: &mut ConvBackbone,
    ) -> Result<()> {
        let fm = &cache.output;
        let cells = fm.cells();
        let d_gap = self
            .proj
            .backward(&cache.pooled_features, d_visual, &mut grads.proj)?;
        let mut dx = vec![0.0; fm.channels() * cells];
        for (ch, chunk) in dx.chunks_mut(cells).enumerate() {
            let g = d_gap.data()[ch] / cells as f64;
            chunk.iter_mut().for_each(|v| *v = g);
        }
        if let Some(df) = d_features {
            if df.len() != dx.len() {
                return Err(SacError::shape("backbone backward", dx.len(), df.len()));
            }
            dx.iter_mut().zip(df).for_each(|(a, b)| *a += b);
        }
        for (i, (conv, block)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let (c_in, c_out) = (conv.c_in(), conv.c_out());
            let hw = block.h * block.w;
            let mut d_out = if block.pooled {
                avg_pool2_backward(&dx, c_out, block.h, block.w)
            } else {
                std::mem::take(&mut dx)
            };
            for (g, a) in d_out.iter_mut().zip(&block.activ) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let gconv = &mut grads.convs[i];
            for (gb, row) in gconv.bias.data_mut().iter_mut().zip(d_out.chunks(hw)) {
                *gb += row.iter().sum::<f64>();
            }
            let dv = ArrayView2::from_shape((c_out, hw), &d_out).expect("dout");
            let cv = ArrayView2::from_shape((c_in * 9, hw), &block.cols).expect("cols");
            general_mat_mul(1.0, &dv, &cv.t(), 1.0, &mut gconv.weight.view2_mut());
            if i > 0 {
                let mut dcols = vec![0.0; c_in * 9 * hw];
                let mut dcv = ArrayViewMut2::from_shape((c_in * 9, hw), &mut dcols).expect("dcols");
                general_mat_mul(1.0, &conv.weight.view2().t(), &dv, 0.0, &mut dcv);
                dx = col2im(&dcols, c_in, block.h, block.w);
            }
        }
        Ok(())
    }
}

impl VisualBackbone for ConvBackbone {
    fn extract_features(&self, image: &Image) -> Result<FeatureMap> {
        Ok(self.forward(image)?.output)
    }

    fn coarse_logits(&self, visual: &Tensor) -> Result<Tensor> {
        self.head.forward(visual)
    }
}

impl Parameterized for ConvBackbone {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &c.weight));
            out.push((format!("backbone.conv{i}.bias"), &c.bias));
        }
        out.extend(self.proj.named_params("backbone.proj"));
        out.extend(self.head.named_params("backbone.head"));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &mut c.weight));
            out.push((format!("backbone.conv{i}.bias"), &mut c.bias));
        }
        out.extend(self.proj.named_params_mut("backbone.proj"));
        out.extend(self.head.named_params_mut("backbone.head"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{cross_entropy_with_grad, grad_check, softmax};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, side: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * side * side)
            .map(|_| rng.gen_range(0.0..=1.0))
            .collect();
        Image::new(side, side, data).unwrap()
    }

    #[test]
    fn zero_image_with_zero_projection_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bb = ConvBackbone::new(BackboneConfig::default(), &mut rng).unwrap();
        bb.proj.weight.fill(0.0);
        bb.proj.bias = Tensor::uniform(&[128], 1.0, &mut rng);
        let fm = bb
            .extract_features(&Image::filled(64, 64, 0.0).unwrap())
            .unwrap();
        assert_eq!(fm.visual.data(), bb.proj.bias.data());
    }

    #[test]
    fn constant_images_are_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bb = ConvBackbone::new(BackboneConfig::default(), &mut rng).unwrap();
        let a = bb
            .extract_features(&Image::filled(64, 64, 0.3).unwrap())
            .unwrap();
        let b = bb
            .extract_features(&Image::filled(64, 64, 0.3).unwrap())
            .unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.visual, b.visual);
    }

    #[test]
    fn default_architecture_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bb = ConvBackbone::new(BackboneConfig::default(), &mut rng).unwrap();
        let fm = bb.extract_features(&random_image(5, 64)).unwrap();
        assert_eq!(fm.features.shape(), &[64, 8, 8]);
        assert_eq!(fm.visual.len(), 128);
        assert_eq!(fm.cells(), 64);
    }

    #[test]
    fn too_small_image_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BackboneConfig {
            pooled_blocks: 5,
            channels: vec![4; 5],
            ..BackboneConfig::default()
        };
        let bb = ConvBackbone::new(cfg, &mut rng).unwrap();
        assert!(bb.extract_features(&random_image(1, 16)).is_err());
    }

    #[test]
    fn coarse_logits_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BackboneConfig {
            num_classes: 3,
            d_v: 4,
            ..BackboneConfig::default()
        };
        let mut bb = ConvBackbone::new(cfg, &mut rng).unwrap();
        bb.head.weight.fill(0.0);
        bb.head.bias = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let logits = bb.coarse_logits(&Tensor::zeros(&[4])).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0, 3.0]);
        assert!(bb.coarse_logits(&Tensor::zeros(&[5])).is_err());

        let cfg = BackboneConfig {
            num_classes: 1,
            d_v: 4,
            ..BackboneConfig::default()
        };
        let bb = ConvBackbone::new(cfg, &mut rng).unwrap();
        let pr = softmax(
            &bb.coarse_logits(&Tensor::uniform(&[4], 3.0, &mut rng))
                .unwrap(),
        )
        .unwrap();
        assert_eq!(pr.data(), &[1.0]);
    }

    #[test]
    fn coarse_head_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = BackboneConfig {
            num_classes: 5,
            d_v: 6,
            ..BackboneConfig::default()
        };
        let bb = ConvBackbone::new(cfg, &mut rng).unwrap();
        let v = Tensor::uniform(&[6], 1.0, &mut rng);
        let wlen = bb.head.weight.len();
        let packed = [bb.head.weight.data(), bb.head.bias.data()].concat();
        let report = grad_check(
            |p| {
                let mut head = bb.head.clone();
                head.weight.data_mut().copy_from_slice(&p[..wlen]);
                head.bias.data_mut().copy_from_slice(&p[wlen..]);
                let (loss, dl) = cross_entropy_with_grad(&head.forward(&v)?, 3)?;
                let mut g = Linear::zeros(6, 5);
                head.backward(&v, &dl, &mut g)?;
                Ok((loss, [g.weight.data(), g.bias.data()].concat()))
            },
            &packed,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn extract_features_gradient_check_on_small_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = BackboneConfig {
            channels: vec![3, 4, 4, 5],
            pooled_blocks: 3,
            d_v: 6,
            num_classes: 4,
        };
        let bb = ConvBackbone::new(cfg, &mut rng).unwrap();
        let image = random_image(22, 16);
        let dfeat = Tensor::uniform(&[5 * 4], 1.0, &mut rng);
        let dvis = Tensor::uniform(&[6], 1.0, &mut rng);
        let flat: Vec<f64> = bb
            .params()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        let load = |p: &[f64]| {
            let mut m = bb.clone();
            let mut off = 0;
            for (_, t) in m.params_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            m
        };
        let report = grad_check(
            |p| {
                let m = load(p);
                let cache = m.forward(&image)?;
                let value: f64 = cache
                    .output
                    .features
                    .data()
                    .iter()
                    .zip(dfeat.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + cache
                        .output
                        .visual
                        .data()
                        .iter()
                        .zip(dvis.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                let mut g = m.clone();
                g.zero_params();
                m.backward(&cache, Some(dfeat.data()), &dvis, &mut g)?;
                Ok((
                    value,
                    g.params()
                        .iter()
                        .flat_map(|(_, t)| t.data().to_vec())
                        .collect(),
                ))
            },
            &flat,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn topk_examples() {
        let t = topk_search(&[0.1, 0.5, 0.2, 0.15, 0.05], 3).unwrap();
        assert_eq!(t.classes, vec![1, 2, 3]);
        let t = topk_search(&[0.25; 4], 2).unwrap();
        assert_eq!(t.classes, vec![0, 1]);
        assert!(topk_search(&[0.1, 0.2], 3).is_err());
        assert!(topk_search(&[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut oracle: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        // Bubble sort, descending by score then ascending by index.
        for i in 0..oracle.len() {
            for j in 0..oracle.len() - 1 - i {
                let (a, b) = (oracle[j], oracle[j + 1]);
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    oracle.swap(j, j + 1);
                }
            }
        }
        let t = topk_search(&scores, 10).unwrap();
        let expected: Vec<usize> = oracle.iter().take(10).map(|p| p.1).collect();
        assert_eq!(t.classes, expected);
    }

    proptest::proptest! {
        #[test]
        fn topk_returns_k_largest(scores in proptest::collection::vec(-5i32..5, 1..30)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let n = scores.len();
            let full = topk_search(&scores, n).unwrap();
            let mut perm = full.classes.clone();
            perm.sort_unstable();
            proptest::prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for k in 1..=n {
                let t = topk_search(&scores, k).unwrap();
                proptest::prop_assert_eq!(&t.scores[..], &sorted[..k]);
                proptest::prop_assert!(t.scores.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}
