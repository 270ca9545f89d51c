use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Shape, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetaNetError {
    #[error("shape mismatch: y is {y}, f is {f}")]
    ShapeMismatch { y: Shape, f: Shape },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("unsupported layer layout {0:?}")]
    Layers(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaArch {
    /// Smooth leaky ReLU on hidden and output layers.
    #[default]
    SmoothLeaky,
    /// ReLU hidden layers with a softplus output.
    ReluSoftplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaRepr {
    layers: Vec<usize>,
    gamma: f64,
    beta: f64,
    #[serde(default, skip_serializing_if = "is_default_arch")]
    arch: MetaArch,
    weights: Vec<f64>,
}

fn is_default_arch(a: &MetaArch) -> bool {
    *a == MetaArch::SmoothLeaky
}

/// Output-wise meta-loss `2 -> h -> h -> 1`, mean-reduced over outputs.
///
/// Parameters: `[w_y, w_f, b1, W2, b2, W3, b3]`, where `w_y` and `w_f` are
/// the two `1 x h` rows of the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetaRepr", into = "MetaRepr")]
pub struct MetaLossNet {
    pub hidden: usize,
    pub gamma: f64,
    pub beta: f64,
    pub arch: MetaArch,
    params: Vec<Tensor>,
}

impl TryFrom<MetaRepr> for MetaLossNet {
    type Error = MetaNetError;

    fn try_from(r: MetaRepr) -> Result<Self, Self::Error> {
        if r.layers.len() != 4 || r.layers[0] != 2 || r.layers[1] != r.layers[2] || r.layers[3] != 1
        {
            return Err(MetaNetError::Layers(r.layers));
        }
        let mut net = MetaLossNet::zeros(r.layers[1], r.arch);
        net.gamma = r.gamma;
        net.beta = r.beta;
        net.set_flat(&r.weights)?;
        Ok(net)
    }
}

impl From<MetaLossNet> for MetaRepr {
    fn from(n: MetaLossNet) -> Self {
        MetaRepr {
            layers: vec![2, n.hidden, n.hidden, 1],
            gamma: n.gamma,
            beta: n.beta,
            arch: n.arch,
            weights: n.flat(),
        }
    }
}

fn shapes(h: usize) -> [Shape; 7] {
    [
        Shape::new(1, h),
        Shape::new(1, h),
        Shape::new(1, h),
        Shape::new(h, h),
        Shape::new(1, h),
        Shape::new(h, 1),
        Shape::SCALAR,
    ]
}

impl MetaLossNet {
    pub fn zeros(hidden: usize, arch: MetaArch) -> Self {
        MetaLossNet {
            hidden,
            gamma: 0.01,
            beta: 10.0,
            arch,
            params: shapes(hidden).iter().map(|&s| Tensor::zeros(s)).collect(),
        }
    }

    /// Kaiming-scaled normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(hidden: usize, arch: MetaArch, rng: &mut R) -> Self {
        let mut net = MetaLossNet::zeros(hidden, arch);
        let fan_in = [2usize, 2, 0, hidden, 0, hidden, 0];
        for (p, &fi) in net.params.iter_mut().zip(&fan_in) {
            if fi == 0 {
                continue;
            }
            let d = Normal::new(0.0, (2.0 / fi as f64).sqrt()).expect("finite std");
            for w in p.data_mut() {
                *w = d.sample(rng);
            }
        }
        net
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        assert_eq!(params.len(), 7);
        for (p, s) in params.iter().zip(shapes(self.hidden)) {
            assert_eq!(p.shape(), s);
        }
        self.params = params;
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, w: &[f64]) -> Result<(), MetaNetError> {
        if w.len() != self.param_count() {
            return Err(MetaNetError::WeightCount {
                expected: self.param_count(),
                got: w.len(),
            });
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.data().len();
            p.data_mut().copy_from_slice(&w[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn vars<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.var(p.clone())).collect()
    }

    fn act<'t>(&self, x: Var<'t>, output: bool) -> Var<'t> {
        match (self.arch, output) {
            (MetaArch::SmoothLeaky, _) => x.slrelu(self.gamma, self.beta),
            (MetaArch::ReluSoftplus, false) => x.relu(),
            (MetaArch::ReluSoftplus, true) => x.softplus(),
        }
    }

    /// Per-output values `l(y_i, f_i)` as an `N x 1` column.
    pub fn forward_elementwise<'t>(&self, p: &[Var<'t>], y: Var<'t>, f: Var<'t>) -> Var<'t> {
        let n = y.shape().numel();
        let yc = y.reshape(Shape::new(n, 1));
        let fc = f.reshape(Shape::new(n, 1));
        let h1 = self.act(yc.matmul(p[0]).add(fc.matmul(p[1])).add(p[2]), false);
        let h2 = self.act(h1.matmul(p[3]).add(p[4]), false);
        self.act(h2.matmul(p[5]).add(p[6]), true)
    }

    /// Mean of the per-output values.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        y: Var<'t>,
        f: Var<'t>,
    ) -> Result<Var<'t>, MetaNetError> {
        if y.shape() != f.shape() {
            return Err(MetaNetError::ShapeMismatch {
                y: y.shape(),
                f: f.shape(),
            });
        }
        Ok(self.forward_elementwise(p, y, f).mean())
    }

    pub fn forward_fixed<'t>(&self, y: Var<'t>, f: Var<'t>) -> Result<Var<'t>, MetaNetError> {
        let tape = y.tape();
        let p: Vec<Var<'t>> = self
            .params
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        self.forward(&p, y, f)
    }

    /// `mean_i l(y_i, f_i)` on plain slices.
    pub fn meta_loss(&self, y: &[f64], f: &[f64]) -> Result<f64, MetaNetError> {
        let tape = Tape::new();
        let y = tape.constant(Tensor::column(y.to_vec()));
        let f = tape.constant(Tensor::column(f.to_vec()));
        Ok(self.forward_fixed(y, f)?.item())
    }

    /// `l(y, f)` at each grid pair.
    pub fn shape_on(&self, grid: &[(f64, f64)]) -> Vec<f64> {
        let tape = Tape::new();
        let y = tape.constant(Tensor::column(grid.iter().map(|g| g.0).collect()));
        let f = tape.constant(Tensor::column(grid.iter().map(|g| g.1).collect()));
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        self.forward_elementwise(&p, y, f).value().into_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn net() -> MetaLossNet {
        MetaLossNet::new(40, MetaArch::SmoothLeaky, &mut rng_from(2))
    }

    #[test]
    fn single_output_is_itself() {
        let n = net();
        let one = n.meta_loss(&[1.0], &[0.3]).unwrap();
        assert_eq!(one, n.shape_on(&[(1.0, 0.3)])[0]);
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let n = net();
        let a = n.meta_loss(&[1.0, 0.0, 0.0], &[0.7, 0.2, 0.1]).unwrap();
        let b = n.meta_loss(&[0.0, 1.0, 0.0], &[0.1, 0.7, 0.2]).unwrap();
        let c = n
            .meta_loss(
                &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                &[0.7, 0.2, 0.1, 0.7, 0.2, 0.1],
            )
            .unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!((a - c).abs() < 1e-14);
        assert!(n.meta_loss(&[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn json_schema() {
        let n = net();
        let j = serde_json::to_value(&n).unwrap();
        assert_eq!(j["layers"], serde_json::json!([2, 40, 40, 1]));
        assert_eq!(j["gamma"], 0.01);
        assert_eq!(j["beta"], 10.0);
        assert_eq!(
            j["weights"].as_array().unwrap().len(),
            2 * 40 + 40 + 1600 + 40 + 40 + 1
        );
        let back: MetaLossNet = serde_json::from_value(j).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn outputs_are_finite_at_extremes() {
        let n = net();
        let v = n.shape_on(&[(1e3, -1e3), (-1e3, 1e3), (0.0, 0.0)]);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
