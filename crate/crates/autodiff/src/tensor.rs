//! Dense row-major tensor values and shape helpers.

use std::fmt;

/// A dense, row-major array of `f64` values.
///
/// `Tensor` is a plain value: it carries no gradient bookkeeping. Values
/// enter a [`Tape`](crate::Tape) through [`Tape::var`](crate::Tape::var) or
/// [`Tape::constant`](crate::Tape::constant).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, panicking if `product(shape) != data.len()`.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self { shape, data: vec![value; n] }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Rank-1 tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(numel(&shape), self.data.len(), "cannot reshape {:?} to {:?}", self.shape, shape);
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(MAX).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > MAX {
            write!(f, ", ... ({} values)", self.data.len())?;
        }
        write!(f, "]")
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Resolves a possibly negative axis against `rank`.
pub(crate) fn norm_axis(axis: isize, rank: usize) -> usize {
    let r = rank as isize;
    let a = if axis < 0 { axis + r } else { axis };
    assert!(a >= 0 && a < r, "axis {axis} out of range for rank {rank}");
    a as usize
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How an operand of shape `src` maps onto a broadcast output of shape `out`.
#[derive(Debug, Clone)]
pub(crate) enum Broadcast {
    /// Same shape: output index == operand index.
    Identity,
    /// Operand holds a single value.
    Scalar,
    /// General case: operand flat index for every output flat index.
    Map(Vec<usize>),
}

impl Broadcast {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        if src == out {
            return Broadcast::Identity;
        }
        if numel(src) == 1 {
            return Broadcast::Scalar;
        }
        let rank = out.len();
        let offset = rank - src.len();
        // strides of src aligned to out, zero where broadcast
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..src.len()).rev() {
            if src[i] != 1 {
                strides[i + offset] = acc;
            }
            acc *= src[i];
        }
        let total = numel(out);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..total {
            map.push(flat);
            // odometer increment
            for d in (0..rank).rev() {
                idx[d] += 1;
                flat += strides[d];
                if idx[d] < out[d] {
                    break;
                }
                flat -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Broadcast::Map(map)
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Identity => i,
            Broadcast::Scalar => 0,
            Broadcast::Map(m) => m[i],
        }
    }

    /// Sums an output-shaped gradient back onto an operand of `len` values.
    pub(crate) fn reduce(&self, grad: &[f64], len: usize) -> Vec<f64> {
        match self {
            Broadcast::Identity => grad.to_vec(),
            Broadcast::Scalar => vec![grad.iter().sum()],
            Broadcast::Map(m) => {
                let mut out = vec![0.0; len];
                for (g, &j) in grad.iter().zip(m) {
                    out[j] += g;
                }
                out
            }
        }
    }
}
