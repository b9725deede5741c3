//! Dense tensors, a tape-based reverse-mode autodiff graph restricted to the
//! operators the networks need, parameter stores and the Adam optimizer.
//!
//! All arithmetic runs in `f64`; weights are narrowed to `f32` only when
//! written to disk.

mod adam;
mod backend;
mod graph;
pub mod kernels;
mod params;

pub use adam::{Adam, AdamConfig};
pub use backend::{Backend, BatchStats, BnMode, Eager, Frozen, BN_EPS, BN_MOMENTUM};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamKey, ParamKind, ParamStore};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Interprets the shape as NCHW.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(format!("expected NCHW, got {:?}", self.shape))),
        }
    }

    /// Stacks equally sized H×W rasters into an N×1×H×W batch.
    pub fn from_rasters(rasters: &[&[f64]], h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rasters.len() * h * w);
        for r in rasters {
            if r.len() != h * w {
                return Err(shape_err(format!("raster of {} cells, expected {h}x{w}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rasters.len(), 1, h, w], data)
    }

    /// Plane `c` of image `n` of an NCHW tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let (_, cc, h, w) = self.dims4().expect("plane() on non-NCHW tensor");
        let start = (n * cc + c) * h * w;
        &self.data[start..start + h * w]
    }
}
