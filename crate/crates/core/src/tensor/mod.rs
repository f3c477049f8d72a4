//! Dense rank-4 tensors and the reverse-mode differentiation tape.
//!
//! Every runtime value in the network is a `Tensor` with shape
//! `(batch, channels, height, width)`. Gradients are produced by recording
//! operations on a [`Tape`] (rebuilt per forward pass) and replaying it in
//! reverse. Storage and arithmetic are `f64` throughout so that central
//! finite differences with `eps = 1e-4` resolve gradients to the tolerances
//! the gradient-check suite demands.

mod ops;
mod tape;

pub mod gradcheck;


pub use tape::{sigmoid_scalar, BatchNormState, Tape, ValueId};

use crate::error::{Error, Result};

/// Shape of a rank-4 tensor: `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

/// Dense rank-4 array of `f64` values, row-major within each plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    /// Scalar tensor of shape `(1, 1, 1, 1)`.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: [1, 1, 1, 1], data: vec![value] }
    }

    /// Build a tensor by evaluating `f(n, c, y, x)` at every coordinate.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(shape);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for ni in 0..n {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        t.data[i] = f(ni, ci, yi, xi);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// `(batch, channels, height, width)` as a tuple.
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    /// One `(batch, channel)` plane as a row-major slice of length `h * w`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff requires equal shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenate along the batch axis. All inputs must agree on `(c, h, w)`.
    pub fn stack_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("stack_batch: empty input list".into()))?;
        let [_, c, h, w] = *first.shape();
        let mut n_total = 0;
        for p in parts {
            let [pn, pc, ph, pw] = *p.shape();
            if (pc, ph, pw) != (c, h, w) {
                return Err(Error::Shape(format!(
                    "stack_batch: mismatched sample shape {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            n_total += pn;
        }
        let mut data = Vec::with_capacity(n_total * c * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::new([n_total, c, h, w], data)
    }

    /// Extract the `n`-th sample as a batch-1 tensor.
    pub fn slice_batch(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        let start = n * len;
        Tensor { shape: [1, c, h, w], data: self.data[start..start + len].to_vec() }
    }
}

/// Named trainable tensor. Names are unique within a [`ParamStore`] and the
/// shape is fixed once registered.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Identifier of a parameter within its store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Registry of model parameters, ordered by registration.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register every parameter on a tape as a differentiable leaf, in store
    /// order. The returned ids align with parameter indices.
    pub fn bind(&self, tape: &mut Tape) -> Vec<ValueId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }
}
