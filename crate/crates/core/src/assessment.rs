//! Fine-grained reassessment head, fusion with the coarse head, and the joint loss.

use serde::Serialize;

use crate::backbone::{topk_search, TopKPrediction};
use crate::diffcore::{cross_entropy_with_grad, softmax_slice, Linear, Tensor};
use crate::error::{Result, SacError};

/// Logits over all `N` classes from the joint representation.
pub fn fine_logits(joint: &Tensor, head: &Linear) -> Result<Tensor> {
    head.forward(joint)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedPrediction {
    pub pr1: Vec<f64>,
    pub pr2: Vec<f64>,
    pub alpha: f64,
    pub pr: Vec<f64>,
    pub topk2: Option<TopKPrediction>,
}

impl FusedPrediction {
    pub fn argmax(&self) -> usize {
        argmax(&self.pr)
    }

    /// Second-stage top-k over the fine distribution.
    pub fn with_topk2(mut self, k: usize) -> Result<Self> {
        self.topk2 = Some(topk_search(&self.pr2, k.min(self.pr2.len()))?);
        Ok(self)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `pr = α·pr1 + (1 − α)·pr2`.
pub fn fuse(pr1: &[f64], pr2: &[f64], alpha: f64) -> Result<FusedPrediction> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SacError::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    if pr1.len() != pr2.len() {
        return Err(SacError::shape(
            "fuse",
            format!("pr2 of length {}", pr1.len()),
            pr2.len(),
        ));
    }
    let pr = if alpha == 1.0 {
        pr1.to_vec()
    } else if alpha == 0.0 {
        pr2.to_vec()
    } else {
        pr1.iter()
            .zip(pr2)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect()
    };
    Ok(FusedPrediction {
        pr1: pr1.to_vec(),
        pr2: pr2.to_vec(),
        alpha,
        pr,
        topk2: None,
    })
}

/// Fuse two logit vectors after softmax.
pub fn fuse_logits(coarse: &Tensor, fine: &Tensor, alpha: f64) -> Result<FusedPrediction> {
    fuse(
        &softmax_slice(coarse.data())?,
        &softmax_slice(fine.data())?,
        alpha,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub coarse_ce: f64,
    pub fine_ce: f64,
    pub aug_ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.coarse_ce += other.coarse_ce;
        self.fine_ce += other.fine_ce;
        self.aug_ce += other.aug_ce;
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            coarse_ce: self.coarse_ce * s,
            fine_ce: self.fine_ce * s,
            aug_ce: self.aug_ce * s,
            total: self.total * s,
        }
    }
}

/// Per-term loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub coarse: f64,
    pub fine: f64,
    pub aug: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coarse: 1.0,
            fine: 1.0,
            aug: 1.0,
        }
    }
}

/// Loss value and logit cotangents for each head.
pub struct LossGrads {
    pub breakdown: LossBreakdown,
    pub d_coarse: Tensor,
    pub d_fine: Option<Tensor>,
    pub d_aug: Option<Tensor>,
}

/// Unit-weighted sum of coarse, fine and augmentation cross-entropies.
pub fn sac_loss(
    coarse: &Tensor,
    fine: &Tensor,
    aug: Option<&Tensor>,
    target: usize,
) -> Result<LossBreakdown> {
    Ok(sac_loss_with_grad(coarse, Some(fine), aug, target, LossWeights::default())?.breakdown)
}

/// Weighted loss with gradients. A missing fine head contributes zero.
pub fn sac_loss_with_grad(
    coarse: &Tensor,
    fine: Option<&Tensor>,
    aug: Option<&Tensor>,
    target: usize,
    w: LossWeights,
) -> Result<LossGrads> {
    let (coarse_ce, mut d_coarse) = cross_entropy_with_grad(coarse, target)?;
    d_coarse.data_mut().iter_mut().for_each(|g| *g *= w.coarse);
    let mut out = LossGrads {
        breakdown: LossBreakdown {
            coarse_ce,
            ..Default::default()
        },
        d_coarse,
        d_fine: None,
        d_aug: None,
    };
    if let Some(f) = fine {
        let (l, mut d) = cross_entropy_with_grad(f, target)?;
        d.data_mut().iter_mut().for_each(|g| *g *= w.fine);
        out.breakdown.fine_ce = l;
        out.d_fine = Some(d);
    }
    if let Some(a) = aug {
        let (l, mut d) = cross_entropy_with_grad(a, target)?;
        d.data_mut().iter_mut().for_each(|g| *g *= w.aug);
        out.breakdown.aug_ce = l;
        out.d_aug = Some(d);
    }
    let b = &mut out.breakdown;
    b.total = w.coarse * b.coarse_ce + w.fine * b.fine_ce + w.aug * b.aug_ce;
    if !b.total.is_finite() {
        return Err(SacError::NonFinite("loss".into()));
    }
    Ok(out)
}
