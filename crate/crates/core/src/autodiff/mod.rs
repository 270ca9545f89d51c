//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive application as a node; [`backward`]
//! walks the tape in reverse. Every vector-Jacobian product is itself built
//! from tape primitives, so with `create_graph` set the gradient computation
//! is recorded and can be differentiated again. Unrolled meta-gradients
//! (a loss of parameters that were produced by a gradient step) rely on this.
//!
//! ```
//! use metaloss::autodiff::{backward, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::scalar(2.0));
//! let y = x.mul(x).mul(x); // x^3
//! let dy = backward(y, &[x], true).unwrap()[0];
//! let d2y = backward(dy, &[x], false).unwrap()[0];
//! assert_eq!(dy.item(), 12.0);
//! assert_eq!(d2y.item(), 12.0);
//! ```

mod check;
mod ops;
pub mod scalar;
mod tensor;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use check::finite_diff_check;
pub use ops::Primitive;
pub use tensor::{Shape, Tensor};

use ops::Op;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("{op} takes {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward needs a scalar output, got {0}")]
    NonScalarOutput(Shape),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("function value is not finite ({0})")]
    NonFinite(f64),
}

struct Node {
    op: Op,
    parents: [usize; 3],
    arity: u8,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Tapes are cheap to create; the intended lifetime is one training step or
/// one meta step, after which the whole arena is dropped.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(Op::Leaf, &[], value, requires_grad)
    }

    /// Run `f` with recording disabled: results are plain leaves.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    fn push(&self, op: Op, parents: &[Var<'_>], value: Tensor, leaf_grad: bool) -> Var<'_> {
        let shape = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        let (op, arity, requires_grad) = if op == Op::Leaf {
            (Op::Leaf, 0, leaf_grad)
        } else if self.recording.get() {
            let rg = parents.iter().any(|p| nodes[p.idx].requires_grad);
            if rg {
                (op, parents.len() as u8, true)
            } else {
                (Op::Leaf, 0, false)
            }
        } else {
            (Op::Leaf, 0, false)
        };
        let mut ps = [0usize; 3];
        for (slot, p) in ps.iter_mut().zip(parents.iter().take(arity as usize)) {
            *slot = p.idx;
        }
        let idx = nodes.len();
        nodes.push(Node {
            op,
            parents: ps,
            arity,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            idx,
            shape,
        }
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Record a named primitive over `inputs`, validating arity and shapes.
    pub fn apply<'t>(
        &'t self,
        prim: Primitive,
        inputs: &[Var<'t>],
    ) -> Result<Var<'t>, AutodiffError> {
        if inputs.iter().any(|v| !self.owns(v)) {
            return Err(AutodiffError::ForeignVar);
        }
        let op = prim.op();
        if inputs.len() != op.arity() {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: inputs.len(),
            });
        }
        self.record(op, inputs)
    }

    /// Like [`Tape::apply`] but resolves the primitive by name.
    pub fn apply_named<'t>(
        &'t self,
        name: &str,
        inputs: &[Var<'t>],
    ) -> Result<Var<'t>, AutodiffError> {
        let prim = Primitive::from_str(name)?;
        self.apply(prim, inputs)
    }

    fn record<'t>(&'t self, op: Op, inputs: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.idx].value).collect();
            ops::forward(op, &vals)?
        };
        Ok(self.push(op, inputs, value, false))
    }

    /// Elementwise select: `cond != 0 ? a : b`. `cond` is never differentiated.
    pub fn select<'t>(&'t self, cond: Var<'t>, a: Var<'t>, b: Var<'t>) -> Var<'t> {
        self.apply(Primitive::Select, &[cond, a, b])
            .unwrap_or_else(|e| panic!("{e}"))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    shape: Shape,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{}", self.idx, self.shape)
    }
}

macro_rules! unary_methods {
    ($($(#[$m:meta])* $name:ident => $op:expr;)*) => {
        $(
            $(#[$m])*
            #[allow(clippy::should_implement_trait)]
            pub fn $name(self) -> Var<'t> {
                self.op1($op)
            }
        )*
    };
}

macro_rules! binary_methods {
    ($($(#[$m:meta])* $name:ident => $op:expr;)*) => {
        $(
            $(#[$m])*
            #[allow(clippy::should_implement_trait)]
            pub fn $name(self, other: Var<'t>) -> Var<'t> {
                self.op2($op, other)
            }
        )*
    };
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    /// Value of a scalar var.
    pub fn item(&self) -> f64 {
        self.with_value(|t| t.item())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    fn op1(self, op: Op) -> Var<'t> {
        self.tape
            .record(op, &[self])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    fn op2(self, op: Op, other: Var<'t>) -> Var<'t> {
        assert!(self.tape.owns(&other), "{}", AutodiffError::ForeignVar);
        self.tape
            .record(op, &[self, other])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    binary_methods! {
        add => Op::Add;
        sub => Op::Sub;
        mul => Op::Mul;
        div => Op::Div;
        /// Analytical quotient `a / sqrt(1 + b^2)`.
        aq => Op::Aq;
        min => Op::Min;
        max => Op::Max;
        matmul => Op::Matmul;
    }

    unary_methods! {
        neg => Op::Neg;
        square => Op::Square;
        abs => Op::Abs;
        /// `log(|x| + 1e-7)`.
        plog => Op::PLog;
        /// `sqrt(|x| + 1e-7)`.
        psqrt => Op::PSqrt;
        tanh => Op::Tanh;
        sign => Op::Sign;
        exp => Op::Exp;
        /// Unprotected natural log.
        ln => Op::Log;
        /// Unprotected square root.
        sqrt => Op::Sqrt;
        sigmoid => Op::Sigmoid;
        softplus => Op::Softplus;
        relu => Op::Relu;
        /// Row-wise log-sum-exp, `r x c -> r x 1`.
        logsumexp => Op::LogSumExp;
        /// Row-wise log-softmax.
        log_softmax => Op::LogSoftmax;
        /// Sum of all elements to a scalar.
        sum => Op::Sum;
        mean => Op::Mean;
        /// Row-wise sum, `r x c -> r x 1`.
        sum_rows => Op::SumRows;
        t => Op::Transpose;
    }

    pub fn leaky_relu(self, gamma: f64) -> Var<'t> {
        self.op1(Op::LeakyRelu(gamma))
    }

    pub fn slrelu(self, gamma: f64, beta: f64) -> Var<'t> {
        self.op1(Op::SmoothLeakyRelu(gamma, beta))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.op1(Op::Scale(c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.op1(Op::AddScalar(c))
    }

    pub fn broadcast_to(self, shape: Shape) -> Var<'t> {
        if self.shape == shape {
            return self;
        }
        self.op1(Op::BroadcastTo(shape))
    }

    pub fn sum_to(self, shape: Shape) -> Var<'t> {
        if self.shape == shape {
            return self;
        }
        self.op1(Op::SumTo(shape))
    }

    pub fn reshape(self, shape: Shape) -> Var<'t> {
        if self.shape == shape {
            return self;
        }
        self.op1(Op::Reshape(shape))
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are differentiable vars on
/// the same tape; otherwise they are detached leaves. Inputs that `output`
/// does not depend on receive zeros.
pub fn backward<'t>(
    output: Var<'t>,
    wrt: &[Var<'t>],
    create_graph: bool,
) -> Result<Vec<Var<'t>>, AutodiffError> {
    let tape = output.tape;
    if wrt.iter().any(|w| !tape.owns(w)) {
        return Err(AutodiffError::ForeignVar);
    }
    if !output.shape.is_scalar() {
        return Err(AutodiffError::NonScalarOutput(output.shape));
    }
    let out = output.idx;

    // Nodes lying on some path from a wrt var to the output.
    let (relevant, info) = {
        let nodes = tape.nodes.borrow();
        let mut relevant = vec![false; out + 1];
        for w in wrt {
            if w.idx <= out {
                relevant[w.idx] = true;
            }
        }
        let mut info = Vec::with_capacity(out + 1);
        for (i, n) in nodes[..=out].iter().enumerate() {
            let ps = &n.parents[..n.arity as usize];
            if !relevant[i] && n.requires_grad && ps.iter().any(|&p| relevant[p]) {
                relevant[i] = true;
            }
            info.push((n.op, n.parents, n.arity, n.value.shape()));
        }
        (relevant, info)
    };

    let prev = tape.recording.replace(create_graph);
    let mut grads: Vec<Option<Var<'t>>> = vec![None; out + 1];
    if relevant[out] {
        grads[out] = Some(tape.constant(Tensor::ones(output.shape)));
    }
    for i in (0..=out).rev() {
        let Some(g) = grads[i].take() else { continue };
        let (op, parents, arity, shape) = info[i];
        if arity == 0 {
            grads[i] = Some(g);
            continue;
        }
        let pvars: Vec<Var<'t>> = parents[..arity as usize]
            .iter()
            .map(|&p| Var {
                tape,
                idx: p,
                shape: info[p].3,
            })
            .collect();
        let this = Var {
            tape,
            idx: i,
            shape,
        };
        let contribs = ops::vjp(op, &pvars, this, g);
        for (p, c) in pvars.iter().zip(contribs) {
            let Some(c) = c else { continue };
            if !relevant[p.idx] {
                continue;
            }
            grads[p.idx] = Some(match grads[p.idx] {
                Some(acc) => acc.add(c),
                None => c,
            });
        }
        // keep the gradient of wrt vars that are interior nodes
        grads[i] = Some(g);
    }
    let result = wrt
        .iter()
        .map(|w| match grads.get(w.idx).copied().flatten() {
            Some(g) => g,
            None => tape.constant(Tensor::zeros(w.shape)),
        })
        .collect();
    tape.recording.set(prev);
    Ok(result)
}

impl FromStr for Primitive {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Primitive::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| AutodiffError::UnknownPrimitive(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_scalars() {
        let tape = Tape::new();
        let a = tape.var(Tensor::scalar(3.0));
        let b = tape.var(Tensor::scalar(4.0));
        assert_eq!(tape.apply(Primitive::Mul, &[a, b]).unwrap().item(), 12.0);
    }

    #[test]
    fn aq_examples() {
        let tape = Tape::new();
        let one = tape.scalar(1.0);
        let zero = tape.scalar(0.0);
        assert_eq!(one.aq(zero).item(), 1.0);
        let six = tape.scalar(6.0);
        let r3 = tape.scalar(3f64.sqrt());
        // 6 / sqrt(1 + 3) = 3
        assert!((six.aq(r3).item() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn square_grad() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let g = backward(x.square(), &[x], false).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let y = x.mul(x).mul(x);
        let dy = backward(y, &[x], true).unwrap()[0];
        assert!(dy.requires_grad());
        let d2 = backward(dy, &[x], false).unwrap()[0];
        assert_eq!(d2.item(), 12.0);
    }

    #[test]
    fn softplus_grad_at_zero() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let g = backward(x.softplus(), &[x], false).unwrap();
        assert_eq!(g[0].item(), 0.5);
    }

    #[test]
    fn errors_are_typed() {
        let tape = Tape::new();
        let a = tape.var(Tensor::column(vec![1.0, 2.0]));
        let b = tape.var(Tensor::column(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            tape.apply(Primitive::Add, &[a, b]),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            tape.apply_named("cosh", &[a]),
            Err(AutodiffError::UnknownPrimitive(_))
        ));
        assert!(matches!(
            backward(a, &[a], false),
            Err(AutodiffError::NonScalarOutput(_))
        ));
        let other = Tape::new();
        let c = other.var(Tensor::scalar(1.0));
        let s = a.sum();
        assert!(matches!(
            backward(s, &[c], false),
            Err(AutodiffError::ForeignVar)
        ));
    }

    #[test]
    fn unrelated_wrt_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.5));
        let z = tape.var(Tensor::column(vec![1.0, 2.0]));
        let g = backward(x.square(), &[z], false).unwrap();
        assert_eq!(g[0].value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn kink_conventions() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        assert_eq!(backward(x.abs(), &[x], false).unwrap()[0].item(), 0.0);
        assert_eq!(backward(x.sign(), &[x], false).unwrap()[0].item(), 0.0);
        let a = tape.var(Tensor::scalar(1.0));
        let b = tape.var(Tensor::scalar(1.0));
        let g = backward(a.min(b), &[a, b], false).unwrap();
        assert_eq!((g[0].item(), g[1].item()), (1.0, 0.0));
        let g = backward(a.max(b), &[a, b], false).unwrap();
        assert_eq!((g[0].item(), g[1].item()), (1.0, 0.0));
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let tape = Tape::new();
        let m = tape.var(Tensor::from_rows(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let bias = tape.var(Tensor::row(vec![1.0, 1.0, 1.0]));
        let s = tape.var(Tensor::scalar(2.0));
        let y = m.add(bias).mul(s).sum();
        let g = backward(y, &[m, bias, s], false).unwrap();
        assert_eq!(g[1].value().data(), &[4.0, 4.0, 4.0]);
        assert_eq!(g[2].item(), 21.0 + 6.0);
    }

    #[test]
    fn no_grad_detaches() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let y = tape.no_grad(|| x.square());
        assert!(!y.requires_grad());
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        fn run() -> Vec<u64> {
            let tape = Tape::new();
            let x = tape.var(Tensor::from_rows(2, 2, vec![0.3, -1.2, 2.2, 0.7]));
            let y = x.log_softmax().mul(x.tanh()).aq(x).sum();
            let g = backward(y, &[x], true).unwrap()[0];
            g.value().data().iter().map(|v| v.to_bits()).collect()
        }
        assert_eq!(run(), run());
    }
}
