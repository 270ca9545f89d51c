//! Symbolic loss functions as prefix-ordered expression trees.
//!
//! Trees are built from twelve primitives and four terminals. A tree is
//! stored flat in prefix order, which doubles as its canonical key.
//!
//! ```
//! use metaloss::symbolic::ExprTree;
//!
//! let t: ExprTree = "square(sub(y, f))".parse().unwrap();
//! assert_eq!(t.eval_one(1.0, 0.5), 0.25);
//! assert_eq!(t.depth(), 2);
//! ```

mod gp;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::scalar;

pub use gp::{
    crossover_at, crossover_one_point, enforce_arguments, gen_tree, init_population, mutate_at,
    mutate_uniform, random_tree, tournament_select, GpConfig, InitMethod,
};
pub use parse::parse_with_wrapper;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("cannot parse expression at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("empty population")]
    EmptyPopulation,
    #[error("invalid GP configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Add,
    Sub,
    Mul,
    Aq,
    Min,
    Max,
    Sign,
    Square,
    Abs,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 12] = [
        Func::Add,
        Func::Sub,
        Func::Mul,
        Func::Aq,
        Func::Min,
        Func::Max,
        Func::Sign,
        Func::Square,
        Func::Abs,
        Func::Log,
        Func::Sqrt,
        Func::Tanh,
    ];
    pub const BINARY: [Func; 6] = [
        Func::Add,
        Func::Sub,
        Func::Mul,
        Func::Aq,
        Func::Min,
        Func::Max,
    ];

    pub fn arity(self) -> usize {
        match self {
            Func::Add | Func::Sub | Func::Mul | Func::Aq | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Add => "add",
            Func::Sub => "sub",
            Func::Mul => "mul",
            Func::Aq => "aq",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sign => "sign",
            Func::Square => "square",
            Func::Abs => "abs",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == s)
    }

    #[inline]
    pub fn apply1(self, a: f64) -> f64 {
        match self {
            Func::Sign => scalar::sign(a),
            Func::Square => a * a,
            Func::Abs => a.abs(),
            Func::Log => scalar::plog(a),
            Func::Sqrt => scalar::psqrt(a),
            Func::Tanh => a.tanh(),
            _ => unreachable!("{} is binary", self.name()),
        }
    }

    #[inline]
    pub fn apply2(self, a: f64, b: f64) -> f64 {
        match self {
            Func::Add => a + b,
            Func::Sub => a - b,
            Func::Mul => a * b,
            Func::Aq => scalar::aq(a, b),
            Func::Min => scalar::min_first(a, b),
            Func::Max => scalar::max_first(a, b),
            _ => unreachable!("{} is unary", self.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Y,
    F,
    One,
    NegOne,
}

impl Terminal {
    pub const ALL: [Terminal; 4] = [Terminal::Y, Terminal::F, Terminal::One, Terminal::NegOne];

    pub fn name(self) -> &'static str {
        match self {
            Terminal::Y => "y",
            Terminal::F => "f",
            Terminal::One => "1",
            Terminal::NegOne => "-1",
        }
    }

    #[inline]
    pub fn value(self, y: f64, f: f64) -> f64 {
        match self {
            Terminal::Y => y,
            Terminal::F => f,
            Terminal::One => 1.0,
            Terminal::NegOne => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Func(Func),
    Term(Terminal),
}

impl Node {
    pub fn arity(self) -> usize {
        match self {
            Node::Func(f) => f.arity(),
            Node::Term(_) => 0,
        }
    }
}

/// Expression tree in prefix order. Immutable once built.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ExprTree {
    nodes: Vec<Node>,
}

impl ExprTree {
    /// Build from prefix-ordered nodes. Panics if arities do not close.
    pub fn from_prefix(nodes: Vec<Node>) -> Self {
        let mut need = 1usize;
        for n in &nodes {
            assert!(need > 0, "trailing nodes after a complete tree");
            need = need - 1 + n.arity();
        }
        assert_eq!(need, 0, "incomplete prefix sequence");
        ExprTree { nodes }
    }

    pub fn terminal(t: Terminal) -> Self {
        ExprTree {
            nodes: vec![Node::Term(t)],
        }
    }

    pub fn unary(f: Func, a: &ExprTree) -> Self {
        assert_eq!(f.arity(), 1);
        let mut nodes = vec![Node::Func(f)];
        nodes.extend_from_slice(&a.nodes);
        ExprTree { nodes }
    }

    pub fn binary(f: Func, a: &ExprTree, b: &ExprTree) -> Self {
        assert_eq!(f.arity(), 2);
        let mut nodes = vec![Node::Func(f)];
        nodes.extend_from_slice(&a.nodes);
        nodes.extend_from_slice(&b.nodes);
        ExprTree { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index one past the end of the subtree rooted at `i`.
    pub fn subtree_end(&self, i: usize) -> usize {
        let mut need = 1usize;
        let mut j = i;
        while need > 0 {
            need = need - 1 + self.nodes[j].arity();
            j += 1;
        }
        j
    }

    /// Depth of every node (root is 0).
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depths = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(usize, usize)> = Vec::new(); // (depth, remaining children)
        for n in &self.nodes {
            let d = stack.last().map_or(0, |&(d, _)| d + 1);
            if let Some(top) = stack.last_mut() {
                top.1 -= 1;
            }
            depths.push(d);
            if n.arity() > 0 {
                stack.push((d, n.arity()));
            }
            while stack.last().is_some_and(|&(_, r)| r == 0) {
                stack.pop();
            }
        }
        depths
    }

    /// Longest root-to-leaf edge count; a lone terminal has depth 0.
    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    pub fn contains(&self, t: Terminal) -> bool {
        self.nodes.contains(&Node::Term(t))
    }

    pub fn has_required_arguments(&self) -> bool {
        self.contains(Terminal::Y) && self.contains(Terminal::F)
    }

    /// Structural key: equal exactly when the trees are node-for-node equal.
    pub fn canonical_key(&self) -> String {
        self.to_string()
    }

    /// Evaluate at one `(y, f)` pair.
    pub fn eval_one(&self, y: f64, f: f64) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for n in self.nodes.iter().rev() {
            let v = match *n {
                Node::Term(t) => t.value(y, f),
                Node::Func(func) if func.arity() == 1 => {
                    let a = stack.pop().expect("arity checked at construction");
                    func.apply1(a)
                }
                Node::Func(func) => {
                    let a = stack.pop().expect("arity checked at construction");
                    let b = stack.pop().expect("arity checked at construction");
                    func.apply2(a, b)
                }
            };
            stack.push(v);
        }
        stack[0]
    }
}

/// Elementwise evaluation; `nonneg` applies the softplus wrapper.
pub fn evaluate(t: &ExprTree, y: &[f64], f: &[f64], nonneg: bool) -> Vec<f64> {
    assert_eq!(y.len(), f.len(), "y and f must have equal length");
    y.iter()
        .zip(f)
        .map(|(&y, &f)| {
            let v = t.eval_one(y, f);
            if nonneg {
                scalar::softplus(v)
            } else {
                v
            }
        })
        .collect()
}

impl fmt::Display for ExprTree {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(nodes: &[Node], i: usize, out: &mut fmt::Formatter<'_>) -> Result<usize, fmt::Error> {
            match nodes[i] {
                Node::Term(t) => {
                    out.write_str(t.name())?;
                    Ok(i + 1)
                }
                Node::Func(f) => {
                    write!(out, "{}(", f.name())?;
                    let mut j = go(nodes, i + 1, out)?;
                    if f.arity() == 2 {
                        out.write_str(", ")?;
                        j = go(nodes, j, out)?;
                    }
                    out.write_str(")")?;
                    Ok(j)
                }
            }
        }
        go(&self.nodes, 0, out).map(|_| ())
    }
}

impl fmt::Debug for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprTree({self})")
    }
}

impl std::str::FromStr for ExprTree {
    type Err = SymbolicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::parse(s)
    }
}

impl TryFrom<String> for ExprTree {
    type Error = SymbolicError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ExprTree> for String {
    fn from(t: ExprTree) -> String {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> ExprTree {
        s.parse().unwrap()
    }

    #[test]
    fn squared_error() {
        assert_eq!(
            evaluate(&t("square(sub(y, f))"), &[1.0], &[0.5], false),
            vec![0.25]
        );
    }

    #[test]
    fn protected_log_at_one() {
        let v = evaluate(&t("log(mul(y, f))"), &[1.0], &[1.0], false)[0];
        assert!((v - (1.0f64 + 1e-7).ln()).abs() < 1e-18);
        assert!((v - 1e-7).abs() < 1e-13);
    }

    #[test]
    fn softplus_wrapper() {
        let v = evaluate(&t("sub(y, f)"), &[0.0], &[5.0], true)[0];
        let oracle = (1.0 + (-5.0f64).exp()).ln();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.00672).abs() < 1e-5);
    }

    #[test]
    fn keys_are_structural() {
        assert_eq!(
            t("add(y, f)").canonical_key(),
            t("add(y, f)").canonical_key()
        );
        assert_ne!(
            t("add(y, f)").canonical_key(),
            t("add(f, y)").canonical_key()
        );
        assert_ne!(
            t("mul(y, f)").canonical_key(),
            t("add(y, f)").canonical_key()
        );
    }

    #[test]
    fn depth_and_subtrees() {
        let e = t("add(square(y), mul(f, log(y)))");
        assert_eq!(e.depth(), 3);
        assert_eq!(e.len(), 7);
        assert_eq!(e.subtree_end(1), 3);
        assert_eq!(e.subtree_end(3), 7);
        assert_eq!(ExprTree::terminal(Terminal::Y).depth(), 0);
    }

    #[test]
    fn display_round_trip() {
        let s = "min(aq(y, -1), tanh(sqrt(abs(sign(f)))))";
        assert_eq!(t(s).to_string(), s);
        let j = serde_json::to_string(&t(s)).unwrap();
        assert_eq!(serde_json::from_str::<ExprTree>(&j).unwrap(), t(s));
    }
}
