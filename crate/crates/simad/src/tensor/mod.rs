//! Dense row-major tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value type (shape + contiguous data) used everywhere
//! gradients are not needed: preprocessing, scoring, checkpoints. Gradient
//! computation happens on a [`Tape`]: operations append nodes to the tape and
//! return lightweight [`Var`] handles; [`Tape::backward`] walks the recorded
//! nodes in reverse and accumulates gradients additively.
//!
//! Shape rules are strict: no implicit broadcasting except where an operation
//! documents it (batched matmul against an unbatched operand, and
//! [`Var::broadcast_add`] of a trailing-shape tensor). Shape violations are
//! contract bugs and panic with a message naming both shapes.

mod tape;

pub mod fd;

pub use tape::{concat_lastdim, Tape, Var};

/// Element type of the numeric core: f32 by default, f64 when the crate is
/// built with the `f64` feature (useful for tight gradient checks).
#[cfg(not(feature = "f64"))]
pub type Elem = f32;
#[cfg(feature = "f64")]
pub type Elem = f64;

/// A dense row-major tensor. The last axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Elem>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<Elem>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel_of(&shape);
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: Elem) -> Self {
        let shape = shape.into();
        let n = numel_of(&shape);
        Tensor { shape, data: vec![v; n] }
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::filled(shape, 1.0)
    }

    /// A rank-1 tensor holding a single value.
    pub fn scalar(v: Elem) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Elem] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Elem] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Elem> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Elem {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel_of(&shape),
            self.data.len(),
            "reshape from {:?} to {:?} changes element count",
            self.shape,
            shape
        );
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(Elem) -> Elem) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise mean along `axis`, removing that axis.
    pub fn mean_axis(&self, axis: usize) -> Tensor {
        assert!(axis < self.rank(), "axis {} out of range for shape {:?}", axis, self.shape);
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += self.data[base + i];
                }
            }
        }
        let scale = 1.0 / n as Elem;
        for v in &mut out {
            *v *= scale;
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor { shape, data: out }
    }

    /// Population variance along `axis`, removing that axis.
    pub fn var_axis(&self, axis: usize) -> Tensor {
        let mean = self.mean_axis(axis);
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    let d = self.data[base + i] - mean.data[o * inner + i];
                    out[o * inner + i] += d * d;
                }
            }
        }
        let scale = 1.0 / n as Elem;
        for v in &mut out {
            *v *= scale;
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor { shape, data: out }
    }

    /// Elementwise sum with a tensor whose shape is a suffix of `self`'s
    /// (the trailing tensor is tiled over the leading axes).
    pub fn add_trailing(&self, t: &Tensor) -> Tensor {
        assert!(
            self.shape.ends_with(&t.shape),
            "broadcast add: {:?} is not a trailing shape of {:?}",
            t.shape,
            self.shape
        );
        let k = t.numel().max(1);
        let mut out = self.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v += t.data[i % k];
        }
        out
    }
}
