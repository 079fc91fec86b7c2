//! Joint embedding of image regions and candidate-class vectors.
//!
//! Every (region, class) couple `(F_i, E_j)` has a bilinear joint vector
//! `J_p[c] = Σ_ab T_u[a,b,c] F_i[a] E_j[b]`. The attention map
//! `M = softmax(Fᵀ T_M E)` (normalized over all `f·k` couples) weights the
//! couples, and `J = Σ_ij M_ij J_ij`. The sum is evaluated as
//! `J = T_uᵀ vec(F M Eᵀ)`, which never materializes the `f·k` couple vectors.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::diffcore::{softmax_backward, softmax_slice, Parameterized, Tensor};
use crate::error::{Result, SacError};

/// Couples whose full bilinear tensor exceeds this many entries are refused by
/// [`full_bilinear_reference`].
pub const FULL_BILINEAR_BUDGET: usize = 100_000;

/// `f × k` couple weights; positive, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub weights: Tensor,
}

impl AttentionMap {
    pub fn cells(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn get(&self, cell: usize, class: usize) -> f64 {
        self.weights.data()[cell * self.k() + class]
    }

    /// Attention over cells for candidate `class` (one column of `M`).
    pub fn column(&self, class: usize) -> Vec<f64> {
        self.weights.view2().column(class).to_vec()
    }

    pub fn max(&self) -> f64 {
        self.weights
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRepresentation {
    pub values: Tensor,
}

fn mat<'a>(t: &'a Tensor, op: &'static str, what: &str) -> Result<ArrayView2<'a, f64>> {
    if t.shape().len() != 2 {
        return Err(SacError::shape(
            op,
            format!("rank-2 {what}"),
            format!("{:?}", t.shape()),
        ));
    }
    Ok(t.view2())
}

fn check_pair(
    op: &'static str,
    features: &Tensor,
    class_emb: &Tensor,
    d_f: usize,
    d_e: usize,
) -> Result<()> {
    let (fs, es) = (features.shape(), class_emb.shape());
    if fs.len() != 2 || fs[0] != d_f {
        return Err(SacError::shape(
            op,
            format!("F of shape [{d_f}, f]"),
            format!("{fs:?}"),
        ));
    }
    if es.len() != 2 || es[0] != d_e {
        return Err(SacError::shape(
            op,
            format!("E of shape [{d_e}, k]"),
            format!("{es:?}"),
        ));
    }
    Ok(())
}

/// `M = softmax(Fᵀ T_M E)` over all entries. `F` is `d_f × f`, `E` is `d_e × k`.
pub fn attention_map(features: &Tensor, class_emb: &Tensor, t_m: &Tensor) -> Result<AttentionMap> {
    let tm = mat(t_m, "attention_map", "T_M")?;
    check_pair("attention_map", features, class_emb, tm.nrows(), tm.ncols())?;
    let logits = features.view2().t().dot(&tm.dot(&class_emb.view2()));
    let (f, k) = logits.dim();
    let flat: Vec<f64> = logits.iter().copied().collect();
    Ok(AttentionMap {
        weights: Tensor::matrix(f, k, softmax_slice(&flat)?)?,
    })
}

/// Joint vector of one couple: `J_p[c] = Σ_ab T_u[a,b,c] F_i[a] E_j[b]`.
pub fn couple_joint(f_i: &[f64], e_j: &[f64], t_u: &Tensor) -> Result<Vec<f64>> {
    let s = t_u.shape();
    if s.len() != 3 || s[0] != f_i.len() || s[1] != e_j.len() {
        return Err(SacError::shape(
            "couple_joint",
            format!("T_u of shape [{}, {}, d_j]", f_i.len(), e_j.len()),
            format!("{s:?}"),
        ));
    }
    let d_j = s[2];
    let mut out = vec![0.0; d_j];
    for (a, &fa) in f_i.iter().enumerate() {
        for (b, &eb) in e_j.iter().enumerate() {
            let w = fa * eb;
            let row = &t_u.data()[(a * e_j.len() + b) * d_j..][..d_j];
            out.iter_mut().zip(row).for_each(|(o, t)| *o += w * t);
        }
    }
    Ok(out)
}

/// `J = Σ_ij M_ij couple_joint(F_i, E_j)`, contracted as `T_uᵀ vec(F M Eᵀ)`.
pub fn joint_representation(
    features: &Tensor,
    class_emb: &Tensor,
    t_u: &Tensor,
    attention: &AttentionMap,
) -> Result<JointRepresentation> {
    let s = t_u.shape();
    if s.len() != 3 {
        return Err(SacError::shape(
            "joint_representation",
            "rank-3 T_u",
            format!("{s:?}"),
        ));
    }
    check_pair("joint_representation", features, class_emb, s[0], s[1])?;
    let (f, k) = (features.shape()[1], class_emb.shape()[1]);
    if attention.weights.shape() != [f, k] {
        return Err(SacError::shape(
            "joint_representation",
            format!("M of shape [{f}, {k}]"),
            format!("{:?}", attention.weights.shape()),
        ));
    }
    let g = features
        .view2()
        .dot(&attention.weights.view2())
        .dot(&class_emb.view2().t());
    let g = g.as_standard_layout();
    let tu = ArrayView2::from_shape((s[0] * s[1], s[2]), t_u.data()).expect("T_u");
    let j = tu
        .t()
        .dot(&ArrayView1::from(g.as_slice().expect("standard layout")));
    Ok(JointRepresentation {
        values: Tensor::vector(j.to_vec())?,
    })
}

/// Unfactored bilinear form `J[c] = Σ_pq T[p,q,c] vec(F)[p] vec(E)[q]` with
/// row-major `vec`. Only for tiny dimensions.
pub fn full_bilinear_reference(
    features: &Tensor,
    class_emb: &Tensor,
    t: &Tensor,
) -> Result<JointRepresentation> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(SacError::shape(
            "full_bilinear_reference",
            "rank-3 T",
            format!("{s:?}"),
        ));
    }
    let total: usize = s.iter().product();
    if total > FULL_BILINEAR_BUDGET {
        return Err(SacError::InvalidArgument(format!(
            "full bilinear tensor of {total} entries exceeds the budget of {FULL_BILINEAR_BUDGET}"
        )));
    }
    if s[0] != features.len() || s[1] != class_emb.len() {
        return Err(SacError::shape(
            "full_bilinear_reference",
            format!("T of shape [{}, {}, d_j]", features.len(), class_emb.len()),
            format!("{s:?}"),
        ));
    }
    let d_j = s[2];
    let mut out = vec![0.0; d_j];
    for (p, &fp) in features.data().iter().enumerate() {
        for (q, &eq) in class_emb.data().iter().enumerate() {
            let w = fp * eq;
            let row = &t.data()[(p * s[1] + q) * d_j..][..d_j];
            out.iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
        }
    }
    Ok(JointRepresentation {
        values: Tensor::vector(out)?,
    })
}

/// Learnable factorized tensors `T_u` (`d_f × d_e × d_j`) and `T_M` (`d_f × d_e`).
#[derive(Clone, Debug)]
pub struct JointAttention {
    pub t_u: Tensor,
    pub t_m: Tensor,
}

/// Forward state for [`JointAttention::backward`].
pub struct JointCache {
    features: Tensor,
    class_emb: Tensor,
    /// `T_M E`, `d_f × k`.
    tm_e: Array2<f64>,
    /// `F M`, `d_f × k`.
    f_m: Array2<f64>,
    /// `F M Eᵀ`, flattened `d_f·d_e`.
    pooled: Vec<f64>,
    pub attention: AttentionMap,
    pub joint: JointRepresentation,
}

/// Cotangents with respect to the two inputs.
pub struct JointInputGrads {
    /// `d_f × f`.
    pub features: Array2<f64>,
    /// `d_e × k`.
    pub class_emb: Array2<f64>,
}

impl JointAttention {
    /// Both tensors uniform in `±(d_f·d_e)^(-1/2)`.
    pub fn new<R: Rng>(d_f: usize, d_e: usize, d_j: usize, rng: &mut R) -> Self {
        let s = 1.0 / ((d_f * d_e) as f64).sqrt();
        Self {
            t_u: Tensor::uniform(&[d_f, d_e, d_j], s, rng),
            t_m: Tensor::uniform(&[d_f, d_e], s, rng),
        }
    }

    pub fn d_f(&self) -> usize {
        self.t_u.shape()[0]
    }

    pub fn d_e(&self) -> usize {
        self.t_u.shape()[1]
    }

    pub fn d_j(&self) -> usize {
        self.t_u.shape()[2]
    }

    /// Attention map and joint representation for `F` (`d_f × f`) and `E` (`d_e × k`).
    pub fn forward(&self, features: &Tensor, class_emb: &Tensor) -> Result<JointCache> {
        check_pair("joint forward", features, class_emb, self.d_f(), self.d_e())?;
        let fv = features.view2();
        let ev = class_emb.view2();
        let tm_e = self.t_m.view2().dot(&ev);
        let logits = fv.t().dot(&tm_e);
        let (f, k) = logits.dim();
        let flat: Vec<f64> = logits.iter().copied().collect();
        let attention = AttentionMap {
            weights: Tensor::matrix(f, k, softmax_slice(&flat)?)?,
        };
        let f_m = fv.dot(&attention.weights.view2());
        let pooled: Vec<f64> = f_m.dot(&ev.t()).iter().copied().collect();
        let tu = ArrayView2::from_shape((self.d_f() * self.d_e(), self.d_j()), self.t_u.data())
            .expect("T_u");
        let j = tu.t().dot(&ArrayView1::from(&pooled[..]));
        if j.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("joint representation".into()));
        }
        Ok(JointCache {
            features: features.clone(),
            class_emb: class_emb.clone(),
            tm_e,
            f_m,
            pooled,
            attention,
            joint: JointRepresentation {
                values: Tensor::vector(j.to_vec())?,
            },
        })
    }

    /// Backpropagates `dJ`; accumulates into `grads` and returns input cotangents.
    pub fn backward(
        &self,
        cache: &JointCache,
        d_joint: &[f64],
        grads: &mut JointAttention,
    ) -> JointInputGrads {
        let (d_f, d_e, d_j) = (self.d_f(), self.d_e(), self.d_j());
        let fv = cache.features.view2();
        let ev = cache.class_emb.view2();
        let mv = cache.attention.weights.view2();

        let gtu = grads.t_u.data_mut();
        for (ab, &g) in cache.pooled.iter().enumerate() {
            if g != 0.0 {
                let row = &mut gtu[ab * d_j..(ab + 1) * d_j];
                row.iter_mut().zip(d_joint).for_each(|(r, d)| *r += g * d);
            }
        }
        let tu = ArrayView2::from_shape((d_f * d_e, d_j), self.t_u.data()).expect("T_u");
        let d_pooled = tu.dot(&ArrayView1::from(d_joint));
        let d_pooled = d_pooled.into_shape_with_order((d_f, d_e)).expect("dG");

        let dg_e = d_pooled.dot(&ev);
        let mut d_features = dg_e.dot(&mv.t());
        let mut d_class = d_pooled.t().dot(&cache.f_m);
        let d_attn = fv.t().dot(&dg_e);

        let m_flat = cache.attention.weights.data();
        let dm_flat: Vec<f64> = d_attn.iter().copied().collect();
        let dl = softmax_backward(m_flat, &dm_flat);
        let dl = ArrayView2::from_shape(mv.dim(), &dl).expect("dL");

        d_features += &cache.tm_e.dot(&dl.t());
        let f_dl = fv.dot(&dl);
        let mut gtm = grads.t_m.view2_mut();
        gtm += &f_dl.dot(&ev.t());
        d_class += &self.t_m.view2().t().dot(&f_dl);

        JointInputGrads {
            features: d_features,
            class_emb: d_class,
        }
    }

    /// Learnable entries of the factorized form versus the unfactored tensor
    /// for `f` cells and `k` classes.
    pub fn parameter_counts(&self, cells: usize, k: usize) -> (usize, usize) {
        let (d_f, d_e, d_j) = (self.d_f(), self.d_e(), self.d_j());
        (d_f * d_e * d_j + d_f * d_e, d_f * cells * d_e * k * d_j)
    }
}

impl Parameterized for JointAttention {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("joint.t_u".into(), &self.t_u),
            ("joint.t_m".into(), &self.t_m),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("joint.t_u".into(), &mut self.t_u),
            ("joint.t_m".into(), &mut self.t_m),
        ]
    }
}
