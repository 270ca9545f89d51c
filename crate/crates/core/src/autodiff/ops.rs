use super::scalar;
use super::{AutodiffError, Shape, Tensor, Var};

/// Primitives addressable by name through [`super::Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Aq,
    Min,
    Max,
    Neg,
    Square,
    Abs,
    PLog,
    PSqrt,
    Tanh,
    Sign,
    Exp,
    Softplus,
    LogSumExp,
    Matmul,
    Sum,
    Mean,
    Relu,
    /// Leaky ReLU with slope 0.01.
    LeakyRelu,
    /// Smooth leaky ReLU with gamma 0.01, beta 10.
    SmoothLeakyRelu,
    LogSoftmax,
    Select,
}

impl Primitive {
    pub const ALL: [Primitive; 24] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Aq,
        Primitive::Min,
        Primitive::Max,
        Primitive::Neg,
        Primitive::Square,
        Primitive::Abs,
        Primitive::PLog,
        Primitive::PSqrt,
        Primitive::Tanh,
        Primitive::Sign,
        Primitive::Exp,
        Primitive::Softplus,
        Primitive::LogSumExp,
        Primitive::Matmul,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::Relu,
        Primitive::LeakyRelu,
        Primitive::SmoothLeakyRelu,
        Primitive::LogSoftmax,
        Primitive::Select,
    ];

    pub fn name(self) -> &'static str {
        self.op().name()
    }

    pub fn arity(self) -> usize {
        self.op().arity()
    }

    pub(super) fn op(self) -> Op {
        match self {
            Primitive::Add => Op::Add,
            Primitive::Sub => Op::Sub,
            Primitive::Mul => Op::Mul,
            Primitive::Aq => Op::Aq,
            Primitive::Min => Op::Min,
            Primitive::Max => Op::Max,
            Primitive::Neg => Op::Neg,
            Primitive::Square => Op::Square,
            Primitive::Abs => Op::Abs,
            Primitive::PLog => Op::PLog,
            Primitive::PSqrt => Op::PSqrt,
            Primitive::Tanh => Op::Tanh,
            Primitive::Sign => Op::Sign,
            Primitive::Exp => Op::Exp,
            Primitive::Softplus => Op::Softplus,
            Primitive::LogSumExp => Op::LogSumExp,
            Primitive::Matmul => Op::Matmul,
            Primitive::Sum => Op::Sum,
            Primitive::Mean => Op::Mean,
            Primitive::Relu => Op::Relu,
            Primitive::LeakyRelu => Op::LeakyRelu(0.01),
            Primitive::SmoothLeakyRelu => Op::SmoothLeakyRelu(0.01, 10.0),
            Primitive::LogSoftmax => Op::LogSoftmax,
            Primitive::Select => Op::Select,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Aq,
    Min,
    Max,
    Neg,
    Square,
    Abs,
    PLog,
    PSqrt,
    Tanh,
    Sign,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Softplus,
    Relu,
    LeakyRelu(f64),
    SmoothLeakyRelu(f64, f64),
    Scale(f64),
    AddScalar(f64),
    LogSumExp,
    LogSoftmax,
    Matmul,
    Transpose,
    Sum,
    Mean,
    SumRows,
    Select,
    BroadcastTo(Shape),
    SumTo(Shape),
    Reshape(Shape),
}

impl Op {
    pub(super) fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Aq => "aq",
            Op::Min => "min",
            Op::Max => "max",
            Op::Neg => "neg",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::PLog => "log",
            Op::PSqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sign => "sign",
            Op::Exp => "exp",
            Op::Log => "ln",
            Op::Sqrt => "raw-sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky-relu",
            Op::SmoothLeakyRelu(..) => "smooth-leaky-relu",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add-scalar",
            Op::LogSumExp => "logsumexp",
            Op::LogSoftmax => "log-softmax",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumRows => "sum-rows",
            Op::Select => "select",
            Op::BroadcastTo(_) => "broadcast",
            Op::SumTo(_) => "sum-to",
            Op::Reshape(_) => "reshape",
        }
    }

    pub(super) fn arity(self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Aq | Op::Min | Op::Max | Op::Matmul => 2,
            Op::Select => 3,
            _ => 1,
        }
    }
}

fn mismatch(op: Op, lhs: Shape, rhs: Shape) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        lhs,
        rhs,
    }
}

fn binary(
    op: Op,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, AutodiffError> {
    let out = a
        .shape()
        .broadcast(b.shape())
        .ok_or_else(|| mismatch(op, a.shape(), b.shape()))?;
    Ok(Tensor::zip_broadcast(a, b, out, f))
}

fn rowwise(a: &Tensor, f: impl Fn(&[f64], &mut Vec<f64>)) -> Vec<f64> {
    let c = a.cols();
    let mut out = Vec::with_capacity(a.rows() * c);
    for row in a.data().chunks(c.max(1)) {
        f(row, &mut out);
    }
    out
}

pub(super) fn forward(op: Op, v: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    let t = match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add => binary(op, v[0], v[1], |a, b| a + b)?,
        Op::Sub => binary(op, v[0], v[1], |a, b| a - b)?,
        Op::Mul => binary(op, v[0], v[1], |a, b| a * b)?,
        Op::Div => binary(op, v[0], v[1], |a, b| a / b)?,
        Op::Aq => binary(op, v[0], v[1], scalar::aq)?,
        Op::Min => binary(op, v[0], v[1], scalar::min_first)?,
        Op::Max => binary(op, v[0], v[1], scalar::max_first)?,
        Op::Neg => v[0].map(|x| -x),
        Op::Square => v[0].map(|x| x * x),
        Op::Abs => v[0].map(f64::abs),
        Op::PLog => v[0].map(scalar::plog),
        Op::PSqrt => v[0].map(scalar::psqrt),
        Op::Tanh => v[0].map(f64::tanh),
        Op::Sign => v[0].map(scalar::sign),
        Op::Exp => v[0].map(f64::exp),
        Op::Log => v[0].map(f64::ln),
        Op::Sqrt => v[0].map(f64::sqrt),
        Op::Sigmoid => v[0].map(scalar::sigmoid),
        Op::Softplus => v[0].map(scalar::softplus),
        Op::Relu => v[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::LeakyRelu(g) => v[0].map(|x| scalar::leaky_relu(x, g)),
        Op::SmoothLeakyRelu(g, b) => v[0].map(|x| scalar::slrelu(x, g, b)),
        Op::Scale(c) => v[0].map(|x| c * x),
        Op::AddScalar(c) => v[0].map(|x| x + c),
        Op::LogSumExp => {
            let data = rowwise(v[0], |row, out| out.push(scalar::log_sum_exp(row)));
            Tensor::new(Shape::new(v[0].rows(), 1), data)
        }
        Op::LogSoftmax => {
            let data = rowwise(v[0], |row, out| {
                let l = scalar::log_sum_exp(row);
                out.extend(row.iter().map(|x| x - l));
            });
            Tensor::new(v[0].shape(), data)
        }
        Op::Matmul => {
            if v[0].cols() != v[1].rows() {
                return Err(mismatch(op, v[0].shape(), v[1].shape()));
            }
            v[0].matmul(v[1])
        }
        Op::Transpose => v[0].transpose(),
        Op::Sum => Tensor::scalar(v[0].sum()),
        Op::Mean => Tensor::scalar(v[0].mean()),
        Op::SumRows => {
            let data = rowwise(v[0], |row, out| out.push(row.iter().sum()));
            Tensor::new(Shape::new(v[0].rows(), 1), data)
        }
        Op::Select => {
            let ab = v[1]
                .shape()
                .broadcast(v[2].shape())
                .ok_or_else(|| mismatch(op, v[1].shape(), v[2].shape()))?;
            let out = v[0]
                .shape()
                .broadcast(ab)
                .ok_or_else(|| mismatch(op, v[0].shape(), ab))?;
            let c = v[0].broadcast_to(out);
            let a = v[1].broadcast_to(out);
            let b = v[2].broadcast_to(out);
            let data = c
                .data()
                .iter()
                .zip(a.data().iter().zip(b.data()))
                .map(|(&c, (&a, &b))| if c != 0.0 { a } else { b })
                .collect();
            Tensor::new(out, data)
        }
        Op::BroadcastTo(s) => {
            if !v[0].shape().broadcasts_to(s) {
                return Err(mismatch(op, v[0].shape(), s));
            }
            v[0].broadcast_to(s)
        }
        Op::SumTo(s) => {
            if !s.broadcasts_to(v[0].shape()) {
                return Err(mismatch(op, v[0].shape(), s));
            }
            v[0].sum_to(s)
        }
        Op::Reshape(s) => {
            if s.numel() != v[0].shape().numel() {
                return Err(mismatch(op, v[0].shape(), s));
            }
            v[0].reshape(s)
        }
    };
    Ok(t)
}

fn mask<'t>(like: Var<'t>, data: Tensor) -> Var<'t> {
    like.tape().constant(data)
}

/// Vector-Jacobian products, built from recorded primitives.
pub(super) fn vjp<'t>(op: Op, p: &[Var<'t>], out: Var<'t>, g: Var<'t>) -> Vec<Option<Var<'t>>> {
    let tape = out.tape();
    let unary = |d: Var<'t>| vec![Some(g.mul(d))];
    match op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.sum_to(p[0].shape())), Some(g.sum_to(p[1].shape()))],
        Op::Sub => vec![
            Some(g.sum_to(p[0].shape())),
            Some(g.neg().sum_to(p[1].shape())),
        ],
        Op::Mul => vec![
            Some(g.mul(p[1]).sum_to(p[0].shape())),
            Some(g.mul(p[0]).sum_to(p[1].shape())),
        ],
        Op::Div => vec![
            Some(g.div(p[1]).sum_to(p[0].shape())),
            Some(g.mul(out).div(p[1]).neg().sum_to(p[1].shape())),
        ],
        Op::Aq => {
            let b2 = p[1].square().add_scalar(1.0);
            vec![
                Some(g.div(b2.sqrt()).sum_to(p[0].shape())),
                Some(g.mul(out).mul(p[1]).div(b2).neg().sum_to(p[1].shape())),
            ]
        }
        Op::Min | Op::Max => {
            let shape = out.shape();
            let (ma, mb) = p[0].with_value(|a| {
                p[1].with_value(|b| {
                    let a = a.broadcast_to(shape);
                    let b = b.broadcast_to(shape);
                    let first: Vec<f64> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&x, &y)| {
                            let pick = if op == Op::Min { x <= y } else { x >= y };
                            if pick {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let second = first.iter().map(|m| 1.0 - m).collect();
                    (Tensor::new(shape, first), Tensor::new(shape, second))
                })
            });
            vec![
                Some(g.mul(mask(out, ma)).sum_to(p[0].shape())),
                Some(g.mul(mask(out, mb)).sum_to(p[1].shape())),
            ]
        }
        Op::Neg => vec![Some(g.neg())],
        Op::Square => unary(p[0].scale(2.0)),
        Op::Abs => unary(p[0].sign()),
        Op::PLog => vec![Some(
            g.mul(p[0].sign())
                .div(p[0].abs().add_scalar(scalar::PROTECT_EPS)),
        )],
        Op::PSqrt => vec![Some(g.mul(p[0].sign()).div(out.scale(2.0)))],
        Op::Tanh => unary(out.square().neg().add_scalar(1.0)),
        Op::Sign => vec![None],
        Op::Exp => unary(out),
        Op::Log => vec![Some(g.div(p[0]))],
        Op::Sqrt => vec![Some(g.div(out.scale(2.0)))],
        Op::Sigmoid => unary(out.mul(out.neg().add_scalar(1.0))),
        Op::Softplus => unary(p[0].sigmoid()),
        Op::Relu => {
            let m = p[0].with_value(|a| a.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            unary(mask(out, m))
        }
        Op::LeakyRelu(gm) => {
            let m = p[0].with_value(|a| a.map(|x| if x > 0.0 { 1.0 } else { gm }));
            unary(mask(out, m))
        }
        Op::SmoothLeakyRelu(gm, b) => unary(p[0].scale(b).sigmoid().scale(1.0 - gm).add_scalar(gm)),
        Op::Scale(c) => vec![Some(g.scale(c))],
        Op::AddScalar(_) => vec![Some(g)],
        Op::LogSumExp => vec![Some(g.mul(p[0].sub(out).exp()))],
        Op::LogSoftmax => vec![Some(g.sub(out.exp().mul(g.sum_rows())))],
        Op::Matmul => vec![Some(g.matmul(p[1].t())), Some(p[0].t().matmul(g))],
        Op::Transpose => vec![Some(g.t())],
        Op::Sum => vec![Some(g.broadcast_to(p[0].shape()))],
        Op::Mean => vec![Some(
            g.scale(1.0 / p[0].shape().numel() as f64)
                .broadcast_to(p[0].shape()),
        )],
        Op::SumRows => vec![Some(g.broadcast_to(p[0].shape()))],
        Op::Select => {
            let zeros = tape.constant(Tensor::zeros(Shape::SCALAR));
            vec![
                None,
                Some(tape.select(p[0], g, zeros).sum_to(p[1].shape())),
                Some(tape.select(p[0], zeros, g).sum_to(p[2].shape())),
            ]
        }
        Op::BroadcastTo(_) => vec![Some(g.sum_to(p[0].shape()))],
        Op::SumTo(_) => vec![Some(g.broadcast_to(p[0].shape()))],
        Op::Reshape(_) => vec![Some(g.reshape(p[0].shape()))],
    }
}
