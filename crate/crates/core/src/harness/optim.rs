use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        gamma: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bias_correction: bool,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    pub fn momentum(lr: f64) -> Self {
        OptimizerConfig::Momentum { lr, gamma: 0.9 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: true,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::Momentum { lr, .. }
            | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    fn buffers(&mut self, params: &[Tensor]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.data().len()]).collect();
            self.v = self.m.clone();
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), HarnessError> {
        if params.len() != grads.len() {
            return Err(HarnessError::Shape(format!(
                "{} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(HarnessError::Shape(format!(
                    "param {} vs grad {}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.buffers(params);
        self.step += 1;
        let t = self.step as i32;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let pd = p.data_mut();
            match self.config {
                OptimizerConfig::Sgd { lr } => {
                    for (w, &gi) in pd.iter_mut().zip(g.data()) {
                        *w -= lr * gi;
                    }
                }
                OptimizerConfig::Momentum { lr, gamma } => {
                    for ((w, &gi), vel) in pd.iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *vel = lr * gi + gamma * *vel;
                        *w -= *vel;
                    }
                }
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    bias_correction,
                } => {
                    let (c1, c2) = if bias_correction {
                        (1.0 - beta1.powi(t), 1.0 - beta2.powi(t))
                    } else {
                        (1.0, 1.0)
                    };
                    for (i, (w, &gi)) in pd.iter_mut().zip(g.data()).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Step on plain vectors.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), HarnessError> {
        let mut p = [Tensor::column(params.to_vec())];
        self.step(&mut p, &[Tensor::column(grads.to_vec())])?;
        params.copy_from_slice(p[0].data());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut o = OptimizerState::new(OptimizerConfig::sgd(0.1));
        let mut p = [1.0];
        o.step_flat(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut o = OptimizerState::new(OptimizerConfig::momentum(0.1));
        let mut p = [1.0];
        o.step_flat(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert!((o.m[0][0] - 0.1).abs() < 1e-15);
        o.step_flat(&mut p, &[1.0]).unwrap();
        assert!((o.m[0][0] - 0.19).abs() < 1e-15);
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut o = OptimizerState::new(OptimizerConfig::adam(0.001));
        let mut p = [1.0];
        o.step_flat(&mut p, &[1.0]).unwrap();
        assert!((1.0 - p[0] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch() {
        let mut o = OptimizerState::new(OptimizerConfig::sgd(0.1));
        let mut p = [Tensor::column(vec![1.0, 2.0])];
        assert!(o.step(&mut p, &[Tensor::scalar(1.0)]).is_err());
    }
}
