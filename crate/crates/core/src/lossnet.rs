//! Edge-weighted loss networks obtained by transposing an expression tree.
//!
//! Every non-root vertex owns one edge to its parent. The edge weight scales
//! the child's value before the parent operation consumes it. Edge `i`
//! belongs to prefix node `i + 1`, so edge order is the pre-order of the
//! source tree.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{scalar, Shape, Tape, Tensor, Var};
use crate::symbolic::{ExprTree, Node, SymbolicError};

/// Standard deviation of the Gaussian weight init, `sqrt(1e-3)`.
pub const INIT_STD: f64 = 0.031_622_776_601_683_79;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossNetError {
    #[error("shape mismatch: y is {y}, f is {f}")]
    ShapeMismatch { y: Shape, f: Shape },
    #[error("network has {expected} edges but {got} weights were supplied")]
    WeightCount { expected: usize, got: usize },
    #[error("weight {0} is not finite")]
    NonFiniteWeight(usize),
    #[error(transparent)]
    Expression(#[from] SymbolicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    Unit,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkRepr {
    expression: ExprTree,
    weights: Vec<f64>,
    nonneg: bool,
}

/// Transposed, parameterised expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct LossNetwork {
    tree: ExprTree,
    /// `edges[i] = (child vertex, parent vertex)`, child = `i + 1`.
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    nonneg: bool,
}

impl TryFrom<NetworkRepr> for LossNetwork {
    type Error = LossNetError;

    fn try_from(r: NetworkRepr) -> Result<Self, Self::Error> {
        let mut net = LossNetwork::from_tree(&r.expression, r.nonneg);
        net.set_weights(r.weights)?;
        Ok(net)
    }
}

impl From<LossNetwork> for NetworkRepr {
    fn from(n: LossNetwork) -> Self {
        NetworkRepr {
            expression: n.tree,
            weights: n.weights,
            nonneg: n.nonneg,
        }
    }
}

fn edges_of(tree: &ExprTree) -> Vec<(usize, usize)> {
    let nodes = tree.nodes();
    let mut edges = Vec::with_capacity(nodes.len().saturating_sub(1));
    // (vertex, children still to attach)
    let mut open: Vec<(usize, usize)> = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if let Some(top) = open.last_mut() {
            edges.push((i, top.0));
            top.1 -= 1;
            if top.1 == 0 {
                open.pop();
            }
        }
        if n.arity() > 0 {
            open.push((i, n.arity()));
        }
    }
    edges
}

impl LossNetwork {
    fn from_tree(tree: &ExprTree, nonneg: bool) -> Self {
        let edges = edges_of(tree);
        let weights = vec![1.0; edges.len()];
        LossNetwork {
            tree: tree.clone(),
            edges,
            weights,
            nonneg,
        }
    }

    pub fn tree(&self) -> &ExprTree {
        &self.tree
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn vertex_count(&self) -> usize {
        self.tree.len()
    }

    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<(), LossNetError> {
        if w.len() != self.edges.len() {
            return Err(LossNetError::WeightCount {
                expected: self.edges.len(),
                got: w.len(),
            });
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(LossNetError::NonFiniteWeight(i));
        }
        self.weights = w;
        Ok(())
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self, LossNetError> {
        self.set_weights(w)?;
        Ok(self)
    }

    /// Record the weights as differentiable scalar leaves.
    pub fn weight_vars<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.weights
            .iter()
            .map(|&w| tape.var(Tensor::scalar(w)))
            .collect()
    }

    /// Per-element loss values before mean reduction.
    pub fn forward_elementwise<'t>(&self, weights: &[Var<'t>], y: Var<'t>, f: Var<'t>) -> Var<'t> {
        let tape = y.tape();
        let nodes = self.tree.nodes();
        let mut stack: Vec<Var<'t>> = Vec::with_capacity(nodes.len());
        for i in (0..nodes.len()).rev() {
            let v = match nodes[i] {
                Node::Term(t) => match t {
                    crate::symbolic::Terminal::Y => y,
                    crate::symbolic::Terminal::F => f,
                    c => tape.scalar(c.value(0.0, 0.0)),
                },
                Node::Func(func) => {
                    let a = stack.pop().expect("prefix order");
                    if func.arity() == 1 {
                        unary(func, a)
                    } else {
                        let b = stack.pop().expect("prefix order");
                        binary(func, a, b)
                    }
                }
            };
            // scale by the edge into the parent
            let v = if i > 0 { v.mul(weights[i - 1]) } else { v };
            stack.push(v);
        }
        let out = stack.pop().expect("non-empty tree");
        let out = out.broadcast_to(y.shape().broadcast(f.shape()).unwrap_or(y.shape()));
        if self.nonneg {
            out.softplus()
        } else {
            out
        }
    }

    /// Mean-reduced loss recorded on the tape of `y`.
    pub fn forward<'t>(
        &self,
        weights: &[Var<'t>],
        y: Var<'t>,
        f: Var<'t>,
    ) -> Result<Var<'t>, LossNetError> {
        if y.shape() != f.shape() {
            return Err(LossNetError::ShapeMismatch {
                y: y.shape(),
                f: f.shape(),
            });
        }
        if weights.len() != self.edges.len() {
            return Err(LossNetError::WeightCount {
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        Ok(self.forward_elementwise(weights, y, f).mean())
    }

    /// Forward with the stored weights as constants.
    pub fn forward_fixed<'t>(&self, y: Var<'t>, f: Var<'t>) -> Result<Var<'t>, LossNetError> {
        let tape = y.tape();
        let w: Vec<Var<'t>> = self.weights.iter().map(|&w| tape.scalar(w)).collect();
        self.forward(&w, y, f)
    }

    /// Plain evaluation at one `(y, f)` pair with the stored weights.
    pub fn eval_one(&self, y: f64, f: f64) -> f64 {
        let nodes = self.tree.nodes();
        let mut stack: Vec<f64> = Vec::with_capacity(nodes.len());
        for i in (0..nodes.len()).rev() {
            let v = match nodes[i] {
                Node::Term(t) => t.value(y, f),
                Node::Func(func) if func.arity() == 1 => {
                    func.apply1(stack.pop().expect("prefix order"))
                }
                Node::Func(func) => {
                    let a = stack.pop().expect("prefix order");
                    let b = stack.pop().expect("prefix order");
                    func.apply2(a, b)
                }
            };
            stack.push(if i > 0 { v * self.weights[i - 1] } else { v });
        }
        let out = stack[0];
        if self.nonneg {
            scalar::softplus(out)
        } else {
            out
        }
    }

    /// Expression with the wrapper, as written to artifacts.
    pub fn expression_string(&self) -> String {
        if self.nonneg {
            format!("softplus({})", self.tree)
        } else {
            self.tree.to_string()
        }
    }
}

fn unary<'t>(func: crate::symbolic::Func, a: Var<'t>) -> Var<'t> {
    use crate::symbolic::Func::*;
    match func {
        Sign => a.sign(),
        Square => a.square(),
        Abs => a.abs(),
        Log => a.plog(),
        Sqrt => a.psqrt(),
        Tanh => a.tanh(),
        _ => unreachable!(),
    }
}

fn binary<'t>(func: crate::symbolic::Func, a: Var<'t>, b: Var<'t>) -> Var<'t> {
    use crate::symbolic::Func::*;
    match func {
        Add => a.add(b),
        Sub => a.sub(b),
        Mul => a.mul(b),
        Aq => a.aq(b),
        Min => a.min(b),
        Max => a.max(b),
        _ => unreachable!(),
    }
}

/// Transpose `t` into a loss network in one linear pass and initialise
/// its edge weights.
pub fn transition<R: Rng + ?Sized>(
    t: &ExprTree,
    init: WeightInit,
    nonneg: bool,
    rng: &mut R,
) -> LossNetwork {
    let mut net = LossNetwork::from_tree(t, nonneg);
    if init == WeightInit::Gaussian {
        let normal = Normal::new(1.0, INIT_STD).expect("valid normal");
        for w in &mut net.weights {
            *w = normal.sample(rng);
        }
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::rng::rng_from;
    use crate::symbolic::evaluate;

    fn net(s: &str) -> LossNetwork {
        transition(
            &s.parse().unwrap(),
            WeightInit::Unit,
            false,
            &mut rng_from(0),
        )
    }

    #[test]
    fn counts() {
        let n = net("add(square(y), mul(f, log(y)))");
        assert_eq!(n.vertex_count(), 7);
        assert_eq!(n.edges().len(), 6);
        assert_eq!(n.edges()[0], (1, 0));
        assert_eq!(n.edges()[2], (3, 0));
        assert_eq!(n.edges()[5], (6, 5));
    }

    #[test]
    fn forward_examples() {
        let tape = Tape::new();
        let n = net("sub(y, f)");
        let y = tape.constant(Tensor::scalar(1.0));
        let f = tape.constant(Tensor::scalar(0.0));
        assert_eq!(n.forward_fixed(y, f).unwrap().item(), 1.0);
        let n2 = n.clone().with_weights(vec![2.0, 1.0]).unwrap();
        assert_eq!(n2.forward_fixed(y, f).unwrap().item(), 2.0);
        let y = tape.constant(Tensor::column(vec![1.0, 3.0]));
        let f = tape.constant(Tensor::column(vec![0.0, 0.0]));
        assert_eq!(n.forward_fixed(y, f).unwrap().item(), 2.0);
    }

    #[test]
    fn unit_weights_match_expression() {
        let n = net("aq(min(y, log(f)), sub(tanh(f), -1))");
        let ys = [0.3, -1.2, 2.0];
        let fs = [0.9, 0.1, -2.5];
        let tape = Tape::new();
        let y = tape.constant(Tensor::column(ys.to_vec()));
        let f = tape.constant(Tensor::column(fs.to_vec()));
        let w = n.weight_vars(&tape);
        let out = n.forward_elementwise(&w, y, f).value();
        assert_eq!(out.data(), evaluate(n.tree(), &ys, &fs, false).as_slice());
    }

    #[test]
    fn weight_gradient_matches_differences() {
        let n = net("mul(aq(y, f), tanh(sub(f, square(y))))");
        let x = Tensor::column(vec![1.1, 0.9, 1.05, 0.97, 1.2, 1.0, 0.8, 1.3]);
        let err = finite_diff_check(
            |tape, w| {
                let ws: Vec<Var> = (0..8)
                    .map(|i| {
                        let mut e = vec![0.0; 8];
                        e[i] = 1.0;
                        tape.constant(Tensor::row(e)).matmul(w)
                    })
                    .collect();
                let y = tape.constant(Tensor::column(vec![0.4, -1.0]));
                let f = tape.constant(Tensor::column(vec![1.3, 0.2]));
                n.forward(&ws, y, f).unwrap()
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn gaussian_init_is_tight() {
        let t: ExprTree = "add(add(add(y, f), add(y, f)), add(add(y, f), add(y, f)))"
            .parse()
            .unwrap();
        let mut rng = rng_from(5);
        let mut inside = 0;
        let mut total = 0;
        for _ in 0..200 {
            let n = transition(&t, WeightInit::Gaussian, false, &mut rng);
            total += n.weights().len();
            inside += n
                .weights()
                .iter()
                .filter(|w| (*w - 1.0).abs() <= 3.0 * INIT_STD)
                .count();
        }
        assert!(inside as f64 / total as f64 > 0.995, "{inside}/{total}");
    }

    #[test]
    fn json_round_trip() {
        let n = net("mul(y, log(f))")
            .with_weights(vec![1.5, 0.5, 2.0])
            .unwrap();
        let j = serde_json::to_string(&n).unwrap();
        assert!(j.contains("\"expression\":\"mul(y, log(f))\""));
        let back: LossNetwork = serde_json::from_str(&j).unwrap();
        assert_eq!(back, n);
        assert!(serde_json::from_str::<LossNetwork>(
            r#"{"expression":"y","weights":[1.0],"nonneg":false}"#
        )
        .is_err());
    }
}
