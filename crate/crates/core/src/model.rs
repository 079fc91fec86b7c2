//! The assembled classifier: backbone, class-name embedder, joint attention and
//! fine head, with per-sample training passes and the three inference modes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::Serialize;

use crate::assessment::{
    fuse_logits, sac_loss_with_grad, FusedPrediction, LossBreakdown, LossWeights,
};
use crate::backbone::{
    topk_search, BackboneCache, BackboneConfig, ConvBackbone, Image, TopKPrediction,
};
use crate::diffcore::{softmax_slice, Linear, Parameterized, Tensor};
use crate::dropping::{
    apply_feature_drop, attention_masks, combine_masks, image_level_erase, mask_columns, Combine,
    CombinedKeepMask,
};
use crate::error::{Result, SacError};
use crate::joint_attention::{AttentionMap, JointAttention};
use crate::label_embed::{stack_columns, LabelEmbedder, NameCache, Vocabulary};
use crate::localization::{crop, localize, CropBox};

/// Usage counters, one per component.
#[derive(Debug, Default)]
pub struct Probe {
    backbone: AtomicUsize,
    embed: AtomicUsize,
    joint: AtomicUsize,
    fine: AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProbeCounts {
    pub backbone_passes: usize,
    pub names_encoded: usize,
    pub joint_passes: usize,
    pub fine_passes: usize,
}

impl Probe {
    fn bump(counter: &AtomicUsize, by: usize) {
        counter.fetch_add(by, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ProbeCounts {
        ProbeCounts {
            backbone_passes: self.backbone.load(Ordering::Relaxed),
            names_encoded: self.embed.load(Ordering::Relaxed),
            joint_passes: self.joint.load(Ordering::Relaxed),
            fine_passes: self.fine.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        for c in [&self.backbone, &self.embed, &self.joint, &self.fine] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub embed: usize,
    pub joint: usize,
    pub fine: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub backbone: BackboneConfig,
    pub word_dim: usize,
    pub d_e: usize,
    pub d_j: usize,
}

#[derive(Debug)]
pub struct SacModel {
    pub backbone: ConvBackbone,
    pub embed: LabelEmbedder,
    pub joint: JointAttention,
    pub fine: Linear,
    pub class_names: Vec<String>,
    probe: Probe,
}

impl Clone for SacModel {
    /// The clone starts with fresh counters.
    fn clone(&self) -> Self {
        Self {
            backbone: self.backbone.clone(),
            embed: self.embed.clone(),
            joint: self.joint.clone(),
            fine: self.fine.clone(),
            class_names: self.class_names.clone(),
            probe: Probe::default(),
        }
    }
}

impl SacModel {
    pub fn new<R: Rng>(dims: &ModelDims, class_names: Vec<String>, rng: &mut R) -> Result<Self> {
        if dims.backbone.num_classes != class_names.len() {
            return Err(SacError::shape(
                "SacModel::new",
                dims.backbone.num_classes,
                class_names.len(),
            ));
        }
        let backbone = ConvBackbone::new(dims.backbone.clone(), rng)?;
        let vocab = Vocabulary::from_names(class_names.iter().map(String::as_str));
        let embed = LabelEmbedder::new(vocab, dims.word_dim, dims.d_e, rng);
        let joint = JointAttention::new(dims.backbone.d_f(), dims.d_e, dims.d_j, rng);
        let fine = Linear::new(dims.d_j, class_names.len(), rng);
        for name in &class_names {
            embed.vocab.tokenize_pad(name)?;
        }
        Ok(Self {
            backbone,
            embed,
            joint,
            fine,
            class_names,
            probe: Probe::default(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn probe(&self) -> &Probe {
        &self.probe
    }

    pub fn param_counts(&self) -> ParamCounts {
        let (backbone, embed, joint, fine) = (
            self.backbone.param_count(),
            self.embed.param_count(),
            self.joint.param_count(),
            self.fine.weight.len() + self.fine.bias.len(),
        );
        ParamCounts {
            backbone,
            embed,
            joint,
            fine,
            total: backbone + embed + joint + fine,
        }
    }

    /// Parameters of every component used since the last probe reset.
    pub fn touched_params(&self) -> usize {
        let (c, p) = (self.probe.snapshot(), self.param_counts());
        [
            (c.backbone_passes, p.backbone),
            (c.names_encoded, p.embed),
            (c.joint_passes, p.joint),
            (c.fine_passes, p.fine),
        ]
        .iter()
        .filter(|(n, _)| *n > 0)
        .map(|(_, p)| p)
        .sum()
    }

    /// A zeroed copy used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_params();
        g
    }

    fn encode_class(&self, class: usize) -> Result<(Vec<f64>, NameCache)> {
        let name = self
            .class_names
            .get(class)
            .ok_or_else(|| SacError::InvalidArgument(format!("no name for class {class}")))?;
        Probe::bump(&self.probe.embed, 1);
        self.embed.encode(name)
    }

    /// Encodings of every class name, used at inference.
    pub fn class_table(&self) -> Result<ClassTable> {
        let vectors = (0..self.num_classes())
            .map(|c| self.encode_class(c).map(|(v, _)| v))
            .collect::<Result<_>>()?;
        Ok(ClassTable { vectors })
    }

    fn backbone_pass(&self, image: &Image) -> Result<(BackboneCache, Tensor)> {
        Probe::bump(&self.probe.backbone, 1);
        let bb = self.backbone.forward(image)?;
        let logits = self.backbone.head.forward(&bb.output.visual)?;
        Ok((bb, logits))
    }
}

impl Parameterized for SacModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.params();
        out.extend(self.embed.params());
        out.extend(self.joint.params());
        out.extend(self.fine.named_params("fine"));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.params_mut();
        out.extend(self.embed.params_mut());
        out.extend(self.joint.params_mut());
        out.extend(self.fine.named_params_mut("fine"));
        out
    }
}

/// Class-name encodings for all `N` classes.
#[derive(Clone, Debug)]
pub struct ClassTable {
    pub vectors: Vec<Vec<f64>>,
}

impl ClassTable {
    pub fn select(&self, topk: &TopKPrediction) -> Result<Tensor> {
        let cols: Vec<&[f64]> = topk
            .classes
            .iter()
            .map(|&c| self.vectors[c].as_slice())
            .collect();
        stack_columns(&cols)
    }
}

/// Encoded names of one training step, with their accumulated cotangents.
#[derive(Default)]
pub struct NameStore {
    entries: BTreeMap<usize, (Vec<f64>, NameCache, Vec<f64>)>,
}

impl NameStore {
    fn vector(&mut self, model: &SacModel, class: usize) -> Result<&[f64]> {
        if let std::collections::btree_map::Entry::Vacant(e) = self.entries.entry(class) {
            let (v, cache) = model.encode_class(class)?;
            let n = v.len();
            e.insert((v, cache, vec![0.0; n]));
        }
        Ok(&self.entries[&class].0)
    }

    fn add_grad(&mut self, class: usize, g: impl Iterator<Item = f64>) {
        let entry = self.entries.get_mut(&class).expect("encoded before use");
        entry.2.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    /// Backpropagates every accumulated name cotangent, in class order.
    pub fn backward(self, model: &SacModel, grads: &mut SacModel) {
        for (_, (_, cache, g)) in self.entries {
            model.embed.backward(&cache, &g, &mut grads.embed);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Where the attention-driven drop is applied during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DropLevel {
    /// Erase input pixels and run the backbone again.
    #[default]
    Image,
    /// Mask feature-map cells and reuse the pooled head.
    Feature,
}

impl FromStr for DropLevel {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(DropLevel::Image),
            "feature" => Ok(DropLevel::Feature),
            _ => Err(SacError::InvalidArgument(format!(
                "drop level must be image|feature, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for DropLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropLevel::Image => "image",
            DropLevel::Feature => "feature",
        })
    }
}

/// Augmentation pass added to a training sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    None,
    /// Drop attention-selected cells.
    Attention {
        level: DropLevel,
        combine: Combine,
        d_phi: f64,
    },
    /// Drop each grid cell independently with probability `p`.
    RandomDrop {
        p: f64,
    },
    /// Crop a random box covering at least half of each side, resized back.
    RandomCrop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    /// Train the joint attention and fine head.
    pub sac: bool,
    pub k: usize,
    pub augment: Augment,
    pub aug_prob: f64,
    pub weights: LossWeights,
    /// Multiplier on every cotangent, typically `1 / batch`.
    pub scale: f64,
}

enum AugPass {
    Image {
        cache: BackboneCache,
        logits: Tensor,
    },
    Feature {
        keep: CombinedKeepMask,
        gap: Tensor,
        visual: Tensor,
        logits: Tensor,
    },
}

impl AugPass {
    fn logits(&self) -> &Tensor {
        match self {
            AugPass::Image { logits, .. } | AugPass::Feature { logits, .. } => logits,
        }
    }
}

fn random_keep<R: Rng>(cells: usize, p: f64, rng: &mut R) -> CombinedKeepMask {
    CombinedKeepMask {
        values: (0..cells)
            .map(|_| u8::from(rng.gen::<f64>() >= p))
            .collect(),
    }
}

fn random_box<R: Rng>(h: usize, w: usize, rng: &mut R) -> CropBox {
    let bh = rng.gen_range((h / 2).max(1)..=h);
    let bw = rng.gen_range((w / 2).max(1)..=w);
    let x1 = rng.gen_range(0..=h - bh);
    let y1 = rng.gen_range(0..=w - bw);
    CropBox {
        x1,
        y1,
        x2: x1 + bh - 1,
        y2: y1 + bw - 1,
    }
}

impl SacModel {
    /// Forward and backward for one labelled image. Gradients are accumulated
    /// into `grads`; name cotangents are parked in `names` until the step ends.
    pub fn train_sample<R: Rng>(
        &self,
        image: &Image,
        target: usize,
        opts: &StepOptions,
        names: &mut NameStore,
        grads: &mut SacModel,
        rng: &mut R,
    ) -> Result<LossBreakdown> {
        let (bb, coarse) = self.backbone_pass(image)?;
        let fm = &bb.output;
        let mut sac = None;
        if opts.sac {
            let topk = topk_search(coarse.data(), opts.k.min(self.num_classes()))?;
            let mut cols = Vec::with_capacity(topk.k());
            for &c in &topk.classes {
                cols.push(names.vector(self, c)?.to_vec());
            }
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let e = stack_columns(&refs)?;
            let f = fm.flat();
            Probe::bump(&self.probe.joint, 1);
            let jc = self.joint.forward(&f, &e)?;
            Probe::bump(&self.probe.fine, 1);
            let fine = self.fine.forward(&jc.joint.values)?;
            sac = Some((topk, jc, fine));
        }

        let run_aug =
            opts.aug_prob > 0.0 && (opts.aug_prob >= 1.0 || rng.gen::<f64>() < opts.aug_prob);
        let aug = match opts.augment {
            _ if !run_aug => None,
            Augment::None => None,
            Augment::RandomDrop { p } if p <= 0.0 => None,
            Augment::Attention {
                level,
                combine,
                d_phi,
            } => {
                let (_, jc, _) = sac.as_ref().ok_or_else(|| {
                    SacError::InvalidArgument(
                        "attention dropping needs the self-assessment branch".into(),
                    )
                })?;
                let keep = combine_masks(&attention_masks(&jc.attention, d_phi)?, combine)?;
                // A mask that drops nothing or everything yields no usable view.
                let dropped = keep.dropped();
                if dropped == 0 || dropped == keep.values.len() {
                    None
                } else {
                    Some(match level {
                        DropLevel::Image => {
                            let erased = image_level_erase(image, &keep, fm.m, fm.n)?;
                            let (cache, logits) = self.backbone_pass(&erased)?;
                            AugPass::Image { cache, logits }
                        }
                        DropLevel::Feature => {
                            let dropped = apply_feature_drop(&fm.flat(), &keep)?;
                            let cells = fm.cells() as f64;
                            let gap: Vec<f64> = dropped
                                .data()
                                .chunks(fm.cells())
                                .map(|c| c.iter().sum::<f64>() / cells)
                                .collect();
                            let gap = Tensor::vector(gap)?;
                            let visual = self.backbone.proj.forward(&gap)?;
                            let logits = self.backbone.head.forward(&visual)?;
                            AugPass::Feature {
                                keep,
                                gap,
                                visual,
                                logits,
                            }
                        }
                    })
                }
            }
            Augment::RandomDrop { p } => {
                let keep = random_keep(fm.cells(), p, rng);
                let erased = image_level_erase(image, &keep, fm.m, fm.n)?;
                let (cache, logits) = self.backbone_pass(&erased)?;
                Some(AugPass::Image { cache, logits })
            }
            Augment::RandomCrop => {
                let b = random_box(image.height(), image.width(), rng);
                let (cache, logits) = self.backbone_pass(&crop(image, &b)?)?;
                Some(AugPass::Image { cache, logits })
            }
        };

        let fine_logits = sac.as_ref().map(|(_, _, f)| f);
        let mut lg = sac_loss_with_grad(
            &coarse,
            fine_logits,
            aug.as_ref().map(AugPass::logits),
            target,
            opts.weights,
        )?;
        for t in [
            Some(&mut lg.d_coarse),
            lg.d_fine.as_mut(),
            lg.d_aug.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            t.data_mut().iter_mut().for_each(|g| *g *= opts.scale);
        }

        let d_visual =
            self.backbone
                .head
                .backward(&fm.visual, &lg.d_coarse, &mut grads.backbone.head)?;
        let mut d_features: Option<Vec<f64>> = None;
        if let (Some((topk, jc, _)), Some(d_fine)) = (&sac, &lg.d_fine) {
            let d_joint = self
                .fine
                .backward(&jc.joint.values, d_fine, &mut grads.fine)?;
            let gi = self.joint.backward(jc, d_joint.data(), &mut grads.joint);
            for (j, &c) in topk.classes.iter().enumerate() {
                names.add_grad(c, gi.class_emb.column(j).iter().copied());
            }
            d_features = Some(gi.features.iter().copied().collect());
        }
        if let (
            Some(AugPass::Feature {
                keep, gap, visual, ..
            }),
            Some(d_aug),
        ) = (&aug, &lg.d_aug)
        {
            let dv = self
                .backbone
                .head
                .backward(visual, d_aug, &mut grads.backbone.head)?;
            let d_gap = self
                .backbone
                .proj
                .backward(gap, &dv, &mut grads.backbone.proj)?;
            let cells = fm.cells();
            let mut d = vec![0.0; fm.channels() * cells];
            for (row, g) in d.chunks_mut(cells).zip(d_gap.data()) {
                row.iter_mut().for_each(|v| *v = g / cells as f64);
            }
            mask_columns(&mut d, &keep.values);
            match d_features.as_mut() {
                Some(df) => df.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                None => d_features = Some(d),
            }
        }
        self.backbone
            .backward(&bb, d_features.as_deref(), &d_visual, &mut grads.backbone)?;
        if let (Some(AugPass::Image { cache, .. }), Some(d_aug)) = (&aug, &lg.d_aug) {
            let dv = self.backbone.head.backward(
                &cache.output.visual,
                d_aug,
                &mut grads.backbone.head,
            )?;
            self.backbone
                .backward(cache, None, &dv, &mut grads.backbone)?;
        }
        Ok(lg.breakdown)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    BackboneOnly,
    #[default]
    Fused,
    Localized,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [
        InferenceMode::BackboneOnly,
        InferenceMode::Fused,
        InferenceMode::Localized,
    ];
}

impl FromStr for InferenceMode {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "backbone_only" => Ok(InferenceMode::BackboneOnly),
            "fused" => Ok(InferenceMode::Fused),
            "localized" => Ok(InferenceMode::Localized),
            _ => Err(SacError::InvalidArgument(format!(
                "inference mode must be backbone_only|fused|localized, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::BackboneOnly => "backbone_only",
            InferenceMode::Fused => "fused",
            InferenceMode::Localized => "localized",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceOptions {
    pub mode: InferenceMode,
    pub k: usize,
    pub alpha: f64,
    pub loc_ratio: f64,
}

/// Everything one inference produces.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub label: usize,
    /// Coarse distribution of the (last) pass.
    pub coarse: Vec<f64>,
    pub topk: TopKPrediction,
    pub fused: Option<FusedPrediction>,
    pub attention: Option<AttentionMap>,
    pub grid: (usize, usize),
    pub crop: Option<CropBox>,
}

impl SacModel {
    fn single_pass(
        &self,
        image: &Image,
        opts: &InferenceOptions,
        table: Option<&ClassTable>,
        fuse: bool,
    ) -> Result<Prediction> {
        Probe::bump(&self.probe.backbone, 1);
        let fm = self.backbone.forward(image)?.output;
        let logits = self.backbone.head.forward(&fm.visual)?;
        let coarse = softmax_slice(logits.data())?;
        let topk = topk_search(&coarse, opts.k.min(self.num_classes()))?;
        let grid = (fm.m, fm.n);
        if !fuse {
            return Ok(Prediction {
                label: topk.classes[0],
                coarse,
                topk,
                fused: None,
                attention: None,
                grid,
                crop: None,
            });
        }
        let table = table.ok_or_else(|| {
            SacError::InvalidArgument("fused inference needs class embeddings".into())
        })?;
        let e = table.select(&topk)?;
        Probe::bump(&self.probe.joint, 1);
        let jc = self.joint.forward(&fm.flat(), &e)?;
        Probe::bump(&self.probe.fine, 1);
        let fine = self.fine.forward(&jc.joint.values)?;
        let fused =
            fuse_logits(&logits, &fine, opts.alpha)?.with_topk2(opts.k.min(self.num_classes()))?;
        Ok(Prediction {
            label: fused.argmax(),
            coarse,
            topk,
            fused: Some(fused),
            attention: Some(jc.attention),
            grid,
            crop: None,
        })
    }

    /// Classifies one image. `table` is required for the fused and localized modes.
    pub fn predict(
        &self,
        image: &Image,
        opts: &InferenceOptions,
        table: Option<&ClassTable>,
    ) -> Result<Prediction> {
        match opts.mode {
            InferenceMode::BackboneOnly => self.single_pass(image, opts, None, false),
            InferenceMode::Fused => self.single_pass(image, opts, table, true),
            InferenceMode::Localized => {
                let first = self.single_pass(image, opts, table, true)?;
                let m = first.attention.as_ref().expect("fused pass has attention");
                let (b, cropped) = localize(image, m, first.grid.0, first.grid.1, opts.loc_ratio)?;
                let mut second = self.single_pass(&cropped, opts, table, true)?;
                second.crop = Some(b);
                Ok(second)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::stream_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims(classes: usize) -> ModelDims {
        ModelDims {
            backbone: BackboneConfig {
                channels: vec![3, 4],
                pooled_blocks: 2,
                d_v: 5,
                num_classes: classes,
            },
            word_dim: 3,
            d_e: 4,
            d_j: 3,
        }
    }

    fn names() -> Vec<String> {
        [
            "red tipped round finch",
            "blue capped round finch",
            "red tipped slender wren",
            "blue capped slender wren",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn image(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(16, 16, (0..3 * 256).map(|_| rng.gen()).collect()).unwrap()
    }

    fn opts(augment: Augment) -> StepOptions {
        StepOptions {
            sac: true,
            k: 3,
            augment,
            aug_prob: 1.0,
            weights: LossWeights::default(),
            scale: 1.0,
        }
    }

    fn flat(m: &SacModel) -> Vec<f64> {
        m.params()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    fn set_flat(m: &mut SacModel, v: &[f64]) {
        let mut off = 0;
        for (_, t) in m.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
    }

    fn loss_and_grad(model: &SacModel, img: &Image, o: &StepOptions) -> (LossBreakdown, Vec<f64>) {
        let mut grads = model.zeros_like();
        let mut store = NameStore::default();
        let mut rng = stream_rng(0, "aug");
        let l = model
            .train_sample(img, 2, o, &mut store, &mut grads, &mut rng)
            .unwrap();
        store.backward(model, &mut grads);
        (l, flat(&grads))
    }

    /// End-to-end gradient through every component. The check is restricted
    /// to a point where the attention-driven mask is locally constant.
    fn end_to_end(augment: Augment) {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut model = SacModel::new(&tiny_dims(4), names(), &mut rng).unwrap();
        let img = image(1);
        let o = opts(augment);
        // Zero conv biases put erased pixels exactly on the ReLU kink.
        for conv in &mut model.backbone.convs {
            conv.bias
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.05..0.05));
        }
        // Attention at initialization is too flat for any mask to drop a
        // proper subset of cells; sharpen T_M until the augmented pass runs.
        if !matches!(augment, Augment::None) {
            let base = model.joint.t_m.clone();
            let scale = [1e2, 3e2, 1e3, 3e3, 1e4].into_iter().find(|&s| {
                model.joint.t_m = base.clone();
                model.joint.t_m.data_mut().iter_mut().for_each(|v| *v *= s);
                loss_and_grad(&model, &img, &o).0.aug_ce > 0.0
            });
            assert!(scale.is_some(), "augmentation pass never ran");
        }
        let x0 = flat(&model);
        let (_, grad) = loss_and_grad(&model, &img, &o);
        // Every parameter group receives a finite, nonzero gradient.
        let mut g = model.zeros_like();
        set_flat(&mut g, &grad);
        for (name, t) in g.params() {
            assert!(t.is_finite(), "{name}");
            assert!(
                t.data().iter().any(|&v| v != 0.0),
                "{name} has an all-zero gradient"
            );
        }
        // Coordinates whose gradient is far below the loss scale drown in
        // cancellation noise, so the error is floored at 1e-6 here.
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x0.len() {
            let mut x = x0.clone();
            x[i] += eps;
            let mut m = model.clone();
            set_flat(&mut m, &x);
            let up = loss_and_grad(&m, &img, &o).0.total;
            x[i] -= 2.0 * eps;
            set_flat(&mut m, &x);
            let down = loss_and_grad(&m, &img, &o).0.total;
            let numeric = (up - down) / (2.0 * eps);
            let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn end_to_end_gradient_without_augmentation() {
        end_to_end(Augment::None);
    }

    #[test]
    fn end_to_end_gradient_with_feature_drop() {
        end_to_end(Augment::Attention {
            level: DropLevel::Feature,
            combine: Combine::Or,
            d_phi: 0.1,
        });
    }

    #[test]
    fn end_to_end_gradient_with_image_drop() {
        end_to_end(Augment::Attention {
            level: DropLevel::Image,
            combine: Combine::Or,
            d_phi: 0.1,
        });
    }

    #[test]
    fn inference_modes_count_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = SacModel::new(&tiny_dims(4), names(), &mut rng).unwrap();
        let table = model.class_table().unwrap();
        let img = image(2);
        let mut o = InferenceOptions {
            mode: InferenceMode::BackboneOnly,
            k: 2,
            alpha: 0.5,
            loc_ratio: 0.1,
        };
        model.probe().reset();
        model.predict(&img, &o, None).unwrap();
        assert_eq!(model.touched_params(), model.param_counts().backbone);

        o.mode = InferenceMode::Localized;
        model.probe().reset();
        let p = model.predict(&img, &o, Some(&table)).unwrap();
        assert_eq!(model.probe().snapshot().backbone_passes, 2);
        assert!(p.crop.is_some());

        o.mode = InferenceMode::Fused;
        assert!(model.predict(&img, &o, None).is_err());
        o.alpha = 1.0;
        let fused = model.predict(&img, &o, Some(&table)).unwrap();
        o.mode = InferenceMode::BackboneOnly;
        assert_eq!(fused.label, model.predict(&img, &o, None).unwrap().label);
    }

    #[test]
    fn class_count_must_match_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SacModel::new(&tiny_dims(3), names(), &mut rng).is_err());
    }
}
