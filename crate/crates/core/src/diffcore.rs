//! Differentiable numeric primitives.
//!
//! Every learnable operation in the crate is written as a forward function plus
//! a backward rule that maps the output cotangent to input cotangents. There is
//! no tape: callers keep whatever forward state the backward rule needs.
//! [`grad_check`] compares an analytic gradient against central differences.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SacError};

/// Dense row-major tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(SacError::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SacError::shape(
                "Tensor::new",
                format!("{numel} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
            requires_grad: other.requires_grad,
        }
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
            requires_grad: true,
        }
    }

    /// Standard normal entries (Box-Muller).
    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(std * r * theta.cos());
            if data.len() < numel {
                data.push(std * r * theta.sin());
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
            requires_grad: true,
        }
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    /// Matrix view of a rank-2 tensor, or of any tensor reshaped to `rows × rest`.
    pub fn view2(&self) -> ArrayView2<'_, f64> {
        let rows = self.shape[0];
        ArrayView2::from_shape((rows, self.data.len() / rows), &self.data).expect("row-major")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let rows = self.shape[0];
        let cols = self.data.len() / rows;
        ArrayViewMut2::from_shape((rows, cols), &mut self.data).expect("row-major")
    }
}

/// Anything that owns learnable tensors.
///
/// `params` and `params_mut` must list tensors in the same order; optimizers and
/// gradient buffers rely on it.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_params(&mut self) {
        for (_, t) in self.params_mut() {
            t.fill(0.0);
        }
    }
}

/// Deterministic random stream derived from a run seed and a purpose tag, so
/// unrelated consumers never share state.
pub fn stream_rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

fn check_vector(op: &'static str, t: &Tensor, len: usize) -> Result<()> {
    if t.len() != len {
        return Err(SacError::shape(
            op,
            format!("[{len}]"),
            format!("{:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `y = W x + b`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(SacError::shape(
            "affine",
            "rank-2 weight",
            format!("{:?}", w.shape()),
        ));
    }
    let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
    if x.len() != n_in {
        return Err(SacError::shape(
            "affine",
            format!("x of length {n_in} for W {:?}", w.shape()),
            format!("x {:?}", x.shape()),
        ));
    }
    if b.len() != n_out {
        return Err(SacError::shape(
            "affine",
            format!("b of length {n_out} for W {:?}", w.shape()),
            format!("b {:?}", b.shape()),
        ));
    }
    let mut y = w.view2().dot(&x.view1());
    y += &b.view1();
    Tensor::vector(y.to_vec())
}

#[derive(Clone, Debug)]
pub struct AffineGrad {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Cotangents of [`affine`] given the output cotangent `dy`.
pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<AffineGrad> {
    let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
    check_vector("affine_backward", x, n_in)?;
    check_vector("affine_backward", dy, n_out)?;
    let dx = w.view2().t().dot(&dy.view1()).to_vec();
    let mut dw = vec![0.0; n_out * n_in];
    for (o, &g) in dy.data().iter().enumerate() {
        if g != 0.0 {
            let row = &mut dw[o * n_in..(o + 1) * n_in];
            for (r, &xi) in row.iter_mut().zip(x.data()) {
                *r = g * xi;
            }
        }
    }
    Ok(AffineGrad {
        x: Tensor::vector(dx)?,
        w: Tensor::matrix(n_out, n_in, dw)?,
        b: dy.clone(),
    })
}

/// Softmax over every entry of `v`, whatever its shape.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    Ok(Tensor {
        shape: v.shape().to_vec(),
        data: softmax_slice(v.data())?,
        requires_grad: v.requires_grad(),
    })
}

pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(SacError::InvalidArgument(
            "softmax of an empty vector".into(),
        ));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SacError::NonFinite("softmax input".into()));
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|e| *e /= sum);
    Ok(out)
}

/// Input cotangent of softmax given its output `y` and output cotangent `dy`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, gi)| yi * (gi - dot)).collect()
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, target).map(|(loss, _)| loss)
}

/// Loss and its gradient with respect to the logits (`softmax - onehot`).
pub fn cross_entropy_with_grad(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if target >= n {
        return Err(SacError::InvalidArgument(format!(
            "target class {target} out of range for {n} logits"
        )));
    }
    let v = logits.data();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = (log_z - v[target]).max(0.0);
    if !loss.is_finite() {
        return Err(SacError::NonFinite("cross-entropy loss".into()));
    }
    let mut grad: Vec<f64> = v.iter().map(|x| (x - log_z).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate.
///
/// `f` returns the scalar value and its gradient; only the value is used at the
/// perturbed points.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<GradientReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(SacError::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(SacError::NonFinite("grad_check: f(x)".into()));
    }
    if analytic.len() != x.len() {
        return Err(SacError::shape(
            "grad_check",
            format!("gradient of length {}", x.len()),
            analytic.len(),
        ));
    }
    let mut probe = x.to_vec();
    let mut report = GradientReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    let mut first = true;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe)?.0;
        probe[i] = x[i] - eps;
        let minus = f(&probe)?.0;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(SacError::NonFinite(format!("grad_check: f(x ± eps e_{i})")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if first || err > report.max_rel_err {
            first = false;
            report = GradientReport {
                max_rel_err: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}

/// Affine layer `y = W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(n_in)`, zero bias.
    pub fn new<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[n_out, n_in], bound, rng),
            bias: Tensor::zeros(&[n_out]).with_grad(true),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[n_out, n_in]).with_grad(true),
            bias: Tensor::zeros(&[n_out]).with_grad(true),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        affine(x, &self.weight, &self.bias)
    }

    /// Accumulates parameter gradients into `grads` and returns `dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut Linear) -> Result<Tensor> {
        let g = affine_backward(x, &self.weight, dy)?;
        grads.weight.add_scaled(&g.w, 1.0);
        grads.bias.add_scaled(&g.b, 1.0);
        Ok(g.x)
    }

    pub fn named_params<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }

    pub fn named_params_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.named_params("linear")
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_params_mut("linear")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_and_arithmetic() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = affine(&t(&[1.0, 2.0]), &w, &t(&[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let w = Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap();
        let y = affine(&t(&[1.0, 1.0]), &w, &t(&[-5.0])).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let w = Tensor::matrix(3, 4, vec![0.0; 12]).unwrap();
        let err = affine(&t(&[1.0, 2.0]), &w, &t(&[0.0; 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n_in, n_out) = (4, 3);
        let x0 = Tensor::uniform(&[n_in], 1.0, &mut rng);
        let w0 = Tensor::uniform(&[n_out, n_in], 1.0, &mut rng);
        let b0 = Tensor::uniform(&[n_out], 1.0, &mut rng);
        let probe = Tensor::uniform(&[n_out], 1.0, &mut rng);
        // Scalar objective: <probe, affine(x, W, b)> over the packed (x, W, b).
        let unpack = |p: &[f64]| {
            let x = Tensor::vector(p[..n_in].to_vec()).unwrap();
            let w = Tensor::matrix(n_out, n_in, p[n_in..n_in + n_in * n_out].to_vec()).unwrap();
            let b = Tensor::vector(p[n_in + n_in * n_out..].to_vec()).unwrap();
            (x, w, b)
        };
        let packed: Vec<f64> = [x0.data(), w0.data(), b0.data()].concat();
        let report = grad_check(
            |p| {
                let (x, w, b) = unpack(p);
                let y = affine(&x, &w, &b)?;
                let value = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
                let g = affine_backward(&x, &w, &probe)?;
                Ok((value, [g.x.data(), g.w.data(), g.b.data()].concat()))
            },
            &packed,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&t(&[0.0, 0.0, 0.0])).unwrap();
        for v in s.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax(&t(&[1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[1.0f64.ln(), 3.0f64.ln()])).unwrap();
        assert_abs_diff_eq!(s.data()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.data()[1], 0.75, epsilon = 1e-15);
        assert!(softmax_slice(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&t(&[10.0, -10.0]), 0).unwrap() < 1e-4);
        assert_abs_diff_eq!(
            cross_entropy(&t(&[0.0, 0.0]), 1).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(cross_entropy(&t(&[0.0, 0.0]), 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::uniform(&[5], 2.0, &mut rng);
        let report = grad_check(
            |p| {
                let (loss, g) = cross_entropy_with_grad(&Tensor::vector(p.to_vec())?, 2)?;
                Ok((loss, g.into_data()))
            },
            logits.data(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn grad_check_closed_forms() {
        let r = grad_check(
            |x| {
                Ok((
                    x.iter().map(|v| v * v).sum(),
                    x.iter().map(|v| 2.0 * v).collect(),
                ))
            },
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6);

        let r = grad_check(|x| Ok((4.2, vec![0.0; x.len()])), &[1.0, -3.0, 0.5], 1e-5).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert_eq!(r.numeric, 0.0);
    }

    #[test]
    fn grad_check_cross_entropy_of_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(&[6], 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 6], 0.5, &mut rng);
        let b = Tensor::uniform(&[4], 0.5, &mut rng);
        let packed: Vec<f64> = [w.data(), b.data()].concat();
        let r = grad_check(
            |p| {
                let w = Tensor::matrix(4, 6, p[..24].to_vec())?;
                let b = Tensor::vector(p[24..].to_vec())?;
                let logits = affine(&x, &w, &b)?;
                let (loss, dlogits) = cross_entropy_with_grad(&logits, 1)?;
                let g = affine_backward(&x, &w, &dlogits)?;
                Ok((loss, [g.w.data(), g.b.data()].concat()))
            },
            &packed,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn grad_check_reports_non_finite_coordinate() {
        let err = grad_check(
            |x| {
                let v = if x[1] > 1.0 { f64::NAN } else { x[1] };
                Ok((v, vec![0.0, 1.0]))
            },
            &[0.0, 1.0],
            1e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("e_1"), "{err}");
    }

    #[test]
    fn stream_rng_is_purpose_separated() {
        let a: u64 = stream_rng(1, "init").gen();
        let b: u64 = stream_rng(1, "shuffle").gen();
        let c: u64 = stream_rng(1, "init").gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
