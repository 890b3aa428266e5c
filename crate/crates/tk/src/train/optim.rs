//! First-order optimizers over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::arch::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// SGD or Adam with L2 weight decay folded into the gradient.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    betas: (f64, f64),
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(config: &TrainConfig, params: &ParamSet) -> Self {
        let sizes: Vec<usize> = params.tensors.iter().map(|t| t.data.len()).collect();
        Self {
            kind: config.optimizer,
            lr: config.lr,
            betas: config.betas,
            weight_decay: config.weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update step; `grads[i]` is aligned with `params.tensors[i]`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[&[f64]]) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            let g = grads[i];
            match self.kind {
                OptimizerKind::Sgd => {
                    for (j, p) in tensor.data.iter_mut().enumerate() {
                        let gj = g[j] + self.weight_decay * *p;
                        *p -= self.lr * gj;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for (j, p) in tensor.data.iter_mut().enumerate() {
                        let gj = g[j] + self.weight_decay * *p;
                        m[j] = b1 * m[j] + (1.0 - b1) * gj;
                        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(v: f64) -> ParamSet {
        ParamSet {
            names: vec!["w".into()],
            tensors: vec![Tensor::from_vec(&[1], vec![v]).with_grad()],
        }
    }

    #[test]
    fn sgd_step_is_literal() {
        let config = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = one_param(1.0);
        let mut opt = Optimizer::new(&config, &p);
        opt.step(&mut p, &[&[2.0]]);
        assert!((p.tensors[0].data[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_l2_pull() {
        let config = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut p = one_param(2.0);
        let mut opt = Optimizer::new(&config, &p);
        // gradient 0: the only pull is decay, 2 − 0.1·(0.5·2) = 1.9
        opt.step(&mut p, &[&[0.0]]);
        assert!((p.tensors[0].data[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first Adam step is lr·g/(|g| + ε·√corr)
        // ≈ lr·sign(g) for any gradient magnitude
        let config = TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            ..Default::default()
        };
        for g in [1e-3, 1.0, 1e3] {
            let mut p = one_param(0.0);
            let mut opt = Optimizer::new(&config, &p);
            opt.step(&mut p, &[&[g]]);
            assert!((p.tensors[0].data[0] + 0.01).abs() < 1e-6, "g = {g}");
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(w) = (w − 3)², gradient 2(w − 3)
        let config = TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 0.1,
            ..Default::default()
        };
        let mut p = one_param(0.0);
        let mut opt = Optimizer::new(&config, &p);
        for _ in 0..500 {
            let w = p.tensors[0].data[0];
            opt.step(&mut p, &[&[2.0 * (w - 3.0)]]);
        }
        assert!((p.tensors[0].data[0] - 3.0).abs() < 1e-3);
    }
}
