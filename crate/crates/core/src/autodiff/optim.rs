//! Gradient-descent optimizers over a [`Params`] set.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, Params};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain SGD, kept around for debugging runs.
    Sgd,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with per-parameter moment state.
///
/// Weight decay is decoupled: `p <- p * (1 - lr*wd)` is applied before the
/// gradient-derived delta.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &Params) -> Self {
        let zeros: Vec<Tensor> = params
            .ids()
            .map(|id| {
                let s = params.get(id).shape();
                Tensor::zeros(s[0], s[1])
            })
            .collect();
        Optimizer {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore_state(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, step: u64) {
        assert_eq!(m.len(), self.m.len(), "optimizer state size mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state size mismatch");
        self.m = m;
        self.v = v;
        self.step = step;
    }

    /// Apply one update. Missing gradients are treated as zero.
    pub fn step(&mut self, params: &mut Params, grads: &Gradients) {
        self.step += 1;
        let lr = self.cfg.lr;
        let wd = self.cfg.weight_decay;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for id in params.ids() {
                    let p = params.get_mut(id);
                    if wd > 0.0 {
                        *p = p.scale(1.0 - lr * wd);
                    }
                    if let Some(g) = grads.get(id) {
                        p.add_scaled(g, -lr);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);
                let bias1 = 1.0 - b1.powi(self.step as i32);
                let bias2 = 1.0 - b2.powi(self.step as i32);
                for id in params.ids() {
                    let idx = id.index();
                    let p = params.get_mut(id);
                    if wd > 0.0 {
                        *p = p.scale(1.0 - lr * wd);
                    }
                    let m = self.m[idx].data_mut();
                    let v = self.v[idx].data_mut();
                    let g_dense;
                    let g: &[f64] = match grads.get(id) {
                        Some(g) => g.data(),
                        None => {
                            g_dense = vec![0.0; p.len()];
                            &g_dense
                        }
                    };
                    for ((pv, (mv, vv)), &gv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.iter_mut().zip(v.iter_mut()))
                        .zip(g)
                    {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Gradients;

    fn one_param(value: f64) -> Params {
        let mut p = Params::new();
        p.add("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut params = one_param(1.5);
        let mut opt = Optimizer::new(OptimConfig::adam(0.1, 0.0), &params);
        opt.step(&mut params, &Gradients::zeros(1));
        assert_eq!(params.get(crate::autodiff::ParamId(0)).scalar_value(), 1.5);
    }

    #[test]
    fn decay_only_step_shrinks_by_factor() {
        let mut params = one_param(2.0);
        let lr = 0.1;
        let wd = 0.5;
        let mut opt = Optimizer::new(OptimConfig::adam(lr, wd), &params);
        opt.step(&mut params, &Gradients::zeros(1));
        let expected = 2.0 * (1.0 - lr * wd);
        assert!(
            (params.get(crate::autodiff::ParamId(0)).scalar_value() - expected).abs() < 1e-15
        );
    }

    #[test]
    fn first_adam_step_is_sign_scaled() {
        // Hand trace: m = 0.1g, v = 0.001 g^2, m_hat = g, v_hat = g^2,
        // delta = -lr * g / (|g| + eps) ~= -lr * sign(g).
        let mut params = one_param(0.0);
        let lr = 0.01;
        let mut opt = Optimizer::new(OptimConfig::adam(lr, 0.0), &params);
        let mut grads = Gradients::zeros(1);
        grads.accumulate(crate::autodiff::ParamId(0), &Tensor::scalar(7.0));
        opt.step(&mut params, &grads);
        let got = params.get(crate::autodiff::ParamId(0)).scalar_value();
        assert!((got + lr).abs() < 1e-6, "got {got}, expected about {}", -lr);
    }

    #[test]
    fn sgd_step_is_scaled_gradient() {
        let mut params = one_param(1.0);
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1, 0.0), &params);
        let mut grads = Gradients::zeros(1);
        grads.accumulate(crate::autodiff::ParamId(0), &Tensor::scalar(2.0));
        opt.step(&mut params, &grads);
        assert!((params.get(crate::autodiff::ParamId(0)).scalar_value() - 0.8).abs() < 1e-15);
    }
}
