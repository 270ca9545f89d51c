use std::fmt;

use serde::{Deserialize, Serialize};

/// Shape of a rank ≤ 2 tensor. Scalars are `1 x 1`, column vectors `n x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn numel(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Broadcast two shapes; each dimension must match or be 1.
    pub fn broadcast(self, other: Shape) -> Option<Shape> {
        fn dim(a: usize, b: usize) -> Option<usize> {
            if a == b {
                Some(a)
            } else if a == 1 {
                Some(b)
            } else if b == 1 {
                Some(a)
            } else {
                None
            }
        }
        Some(Shape {
            rows: dim(self.rows, other.rows)?,
            cols: dim(self.cols, other.cols)?,
        })
    }

    /// True when `self` can be broadcast up to `target` without touching `target`.
    pub fn broadcasts_to(self, target: Shape) -> bool {
        (self.rows == target.rows || self.rows == 1) && (self.cols == target.cols || self.cols == 1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

/// Dense row-major `f64` matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "tensor {shape} needs {} values, got {}",
            shape.numel(),
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(Shape::new(rows, cols), data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![v],
        }
    }

    pub fn column(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::new(data.len(), 1),
            data,
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::new(1, data.len()),
            data,
        }
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape.cols + c]
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(
            self.shape.is_scalar(),
            "item() on non-scalar tensor {}",
            self.shape
        );
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(&self, shape: Shape) -> Tensor {
        assert_eq!(shape.numel(), self.shape.numel());
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.shape.rows, self.shape.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: Shape::new(c, r),
            data: out,
        }
    }

    /// Select rows by index, producing a `idx.len() x cols` tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.shape.cols;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Tensor {
            shape: Shape::new(idx.len(), c),
            data: out,
        }
    }

    pub(crate) fn zip_broadcast(
        a: &Tensor,
        b: &Tensor,
        out: Shape,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        if a.shape == out && b.shape == out {
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            return Tensor { shape: out, data };
        }
        let mut data = Vec::with_capacity(out.numel());
        for i in 0..out.rows {
            let ia = if a.shape.rows == 1 { 0 } else { i };
            let ib = if b.shape.rows == 1 { 0 } else { i };
            for j in 0..out.cols {
                let ja = if a.shape.cols == 1 { 0 } else { j };
                let jb = if b.shape.cols == 1 { 0 } else { j };
                data.push(f(
                    a.data[ia * a.shape.cols + ja],
                    b.data[ib * b.shape.cols + jb],
                ));
            }
        }
        Tensor { shape: out, data }
    }

    pub(crate) fn broadcast_to(&self, out: Shape) -> Tensor {
        if self.shape == out {
            return self.clone();
        }
        let mut data = Vec::with_capacity(out.numel());
        for i in 0..out.rows {
            let ia = if self.shape.rows == 1 { 0 } else { i };
            for j in 0..out.cols {
                let ja = if self.shape.cols == 1 { 0 } else { j };
                data.push(self.data[ia * self.shape.cols + ja]);
            }
        }
        Tensor { shape: out, data }
    }

    /// Sum-reduce broadcast dimensions so the result has shape `target`.
    pub(crate) fn sum_to(&self, target: Shape) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let mut out = vec![0.0; target.numel()];
        for i in 0..self.shape.rows {
            let it = if target.rows == 1 { 0 } else { i };
            for j in 0..self.shape.cols {
                let jt = if target.cols == 1 { 0 } else { j };
                out[it * target.cols + jt] += self.data[i * self.shape.cols + j];
            }
        }
        Tensor {
            shape: target,
            data: out,
        }
    }

    pub(crate) fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape.rows, self.shape.cols);
        let n = other.shape.cols;
        debug_assert_eq!(k, other.shape.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            shape: Shape::new(m, n),
            data: out,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }
}
