use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{init_weights, InitMode, InitScheme};
use crate::autodiff::{Shape, Tensor, Var};

/// Fully connected ReLU network with a linear head.
///
/// Parameters are kept outside the model as `[W0, b0, W1, b1, ...]` with
/// `W` of shape `in x out` and `b` of shape `1 x out`, so the same model can
/// run on plain tensors or on any tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    pub scheme: InitScheme,
    pub mode: InitMode,
}

impl MlpModel {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        MlpModel {
            dims,
            scheme: InitScheme::Glorot,
            mode: InitMode::Uniform,
        }
    }

    /// One hidden layer of 1000 ReLU units.
    pub fn wide(input: usize, output: usize) -> Self {
        MlpModel::new(input, &[1000], output)
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let mut params = Vec::with_capacity(2 * self.layers());
        for w in self.dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            params.push(Tensor::new(
                Shape::new(i, o),
                init_weights(self.scheme, i, o, self.mode, rng),
            ));
            params.push(Tensor::zeros(Shape::new(1, o)));
        }
        params
    }

    pub fn forward<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let mut h = x;
        let last = self.layers() - 1;
        for (l, wb) in params.chunks(2).enumerate() {
            h = h.matmul(wb[0]).add(wb[1]);
            if l < last {
                h = h.relu();
            }
        }
        h
    }

    /// Forward pass on plain tensors.
    pub fn predict(&self, params: &[Tensor], x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.layers() - 1;
        for (l, wb) in params.chunks(2).enumerate() {
            let z = h.matmul(&wb[0]);
            h = Tensor::zip_broadcast(&z, &wb[1], z.shape(), |a, b| a + b);
            if l < last {
                h = h.map(|v| if v > 0.0 { v } else { 0.0 });
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::rng_from;

    #[test]
    fn tape_and_plain_agree() {
        let m = MlpModel::new(3, &[5, 4], 2);
        let p = m.init(&mut rng_from(0));
        assert_eq!(p.len(), 6);
        assert_eq!(m.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        let x = Tensor::from_rows(2, 3, vec![0.1, -0.4, 2.0, 1.0, 0.3, -0.2]);
        let tape = Tape::new();
        let vars: Vec<_> = p.iter().map(|t| tape.constant(t.clone())).collect();
        let out = m.forward(&vars, tape.constant(x.clone())).value();
        assert_eq!(out, m.predict(&p, &x));
    }
}
