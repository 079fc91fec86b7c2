//! SGD with momentum and L2 weight decay.

use crate::diffcore::{Parameterized, Tensor};

pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new<P: Parameterized>(model: &P, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model
                .params()
                .iter()
                .map(|(_, t)| Tensor::zeros_like(t))
                .collect(),
        }
    }

    /// `v ← μ v + g + λ θ`, `θ ← θ − lr v`.
    pub fn step<P: Parameterized>(&mut self, model: &mut P, grads: &P, lr: f64) {
        for (((_, p), (_, g)), v) in model
            .params_mut()
            .into_iter()
            .zip(grads.params())
            .zip(&mut self.velocity)
        {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= lr * *vv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Linear;

    #[test]
    fn matches_hand_computed_updates() {
        let mut m = Linear::zeros(1, 1);
        m.weight.data_mut()[0] = 1.0;
        let mut g = Linear::zeros(1, 1);
        g.weight.data_mut()[0] = 0.5;
        let mut opt = Sgd::new(&m, 0.9, 0.1);
        opt.step(&mut m, &g, 0.1);
        // v = 0.5 + 0.1 = 0.6; w = 1 - 0.06
        assert!((m.weight.data()[0] - 0.94).abs() < 1e-15);
        opt.step(&mut m, &g, 0.1);
        // v = 0.54 + 0.5 + 0.094 = 1.134
        assert!((m.weight.data()[0] - (0.94 - 0.1134)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise() {
        let mut m = Linear::zeros(2, 2);
        m.weight.data_mut().copy_from_slice(&[0.1, -0.3, 1e-9, 7.0]);
        let before = m.weight.clone();
        let mut g = Linear::zeros(2, 2);
        g.weight.fill(3.0);
        let mut opt = Sgd::new(&m, 0.9, 1e-5);
        for _ in 0..3 {
            opt.step(&mut m, &g, 0.0);
        }
        assert_eq!(m.weight, before);
    }
}
