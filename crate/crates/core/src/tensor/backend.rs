//! One network definition, two executions: [`Eager`] evaluates immediately
//! and keeps nothing, [`Graph`] records for a backward pass, and [`Frozen`]
//! records while treating every parameter as a constant.

use super::graph::{transpose_geom, Graph, Var};
use super::kernels::{self, ConvGeom};
use super::params::ParamStore;
use super::Tensor;
use crate::error::{shape_err, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report them.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    /// Folds the statistics into `<prefix>.running_mean` / `.running_var`.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        for (suffix, batch) in [("running_mean", &self.mean), ("running_var", &self.var)] {
            let t = store.value_mut(&format!("{}.{suffix}", self.prefix))?;
            for (r, b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
        Ok(())
    }
}

pub trait Backend {
    type Value: Clone;

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Self::Value>;
    fn shape(&self, x: &Self::Value) -> Vec<usize>;
    fn conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        b: Option<&Self::Value>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self::Value>;
    fn conv_transpose2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        b: Option<&Self::Value>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self::Value>;
    /// Batch norm using `<prefix>.gamma`, `.beta`, `.running_mean`, `.running_var`.
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        store: &ParamStore,
        prefix: &str,
        mode: BnMode,
    ) -> Result<(Self::Value, Option<BatchStats>)>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Immediate evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Tensor> {
        store.value(name).cloned()
    }

    fn shape(&self, x: &Tensor) -> Vec<usize> {
        x.shape().to_vec()
    }

    fn conv2d(
        &mut self,
        x: &Tensor,
        k: &Tensor,
        b: Option<&Tensor>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (o, kc, kh, kw) = k.dims4()?;
        if kc != c {
            return Err(shape_err(format!("conv2d: input has {c} channels, kernel expects {kc}")));
        }
        if let Some(b) = b {
            kernels::check_same_len(b.len(), o, "conv2d bias")?;
        }
        let g = ConvGeom::new(c, (h, w), (kh, kw), stride, pad)?;
        let data = kernels::conv2d_forward(x.data(), n, &g, k.data(), o, b.map(|b| b.data()));
        Tensor::new(vec![n, o, g.oh, g.ow], data)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Tensor,
        k: &Tensor,
        b: Option<&Tensor>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Tensor> {
        let (n, ci, h, w) = x.dims4()?;
        let (kci, co, kh, kw) = k.dims4()?;
        if kci != ci {
            return Err(shape_err(format!(
                "conv_transpose2d: input has {ci} channels, kernel expects {kci}"
            )));
        }
        if let Some(b) = b {
            kernels::check_same_len(b.len(), co, "conv_transpose2d bias")?;
        }
        let g = transpose_geom(co, (h, w), (kh, kw), stride, pad)?;
        let data = kernels::conv_transpose2d_forward(x.data(), n, ci, &g, k.data(), b.map(|b| b.data()));
        Tensor::new(vec![n, co, g.h, g.w], data)
    }

    fn batch_norm(
        &mut self,
        x: &Tensor,
        store: &ParamStore,
        prefix: &str,
        mode: BnMode,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        let (n, c, h, w) = x.dims4()?;
        let gamma = store.value(&format!("{prefix}.gamma"))?;
        let beta = store.value(&format!("{prefix}.beta"))?;
        kernels::check_same_len(gamma.len(), c, "batch_norm gamma")?;
        let (mean, var, stats) = bn_stats(x.data(), n, c, h * w, store, prefix, mode)?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let data =
            kernels::affine_normalize(x.data(), c, h * w, &mean, &inv_std, gamma.data(), beta.data());
        Ok((Tensor::new(vec![n, c, h, w], data)?, stats))
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
        }
        Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        )
    }
}

#[allow(clippy::type_complexity)]
fn bn_stats(
    x: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    store: &ParamStore,
    prefix: &str,
    mode: BnMode,
) -> Result<(Vec<f64>, Vec<f64>, Option<BatchStats>)> {
    match mode {
        BnMode::Train => {
            let (mean, var) = kernels::channel_moments(x, n, c, hw);
            let stats = BatchStats {
                prefix: prefix.to_string(),
                mean: mean.clone(),
                var: var.clone(),
            };
            Ok((mean, var, Some(stats)))
        }
        BnMode::Eval => {
            let mean = store.value(&format!("{prefix}.running_mean"))?.data().to_vec();
            let var = store.value(&format!("{prefix}.running_var"))?.data().to_vec();
            kernels::check_same_len(mean.len(), c, "batch_norm running_mean")?;
            Ok((mean, var, None))
        }
    }
}

fn graph_batch_norm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    store: &ParamStore,
    prefix: &str,
    mode: BnMode,
) -> Result<(Var, Option<BatchStats>)> {
    let (n, c, h, w) = g.value(x).dims4()?;
    let (mean, var, stats) = bn_stats(g.value(x).data(), n, c, h * w, store, prefix, mode)?;
    let y = g.batch_norm_with(x, gamma, beta, mean, &var, BN_EPS, mode == BnMode::Train)?;
    Ok((y, stats))
}

impl Backend for Graph {
    type Value = Var;

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Graph::param(self, store, name)
    }

    fn shape(&self, x: &Var) -> Vec<usize> {
        self.value(*x).shape().to_vec()
    }

    fn conv2d(
        &mut self,
        x: &Var,
        k: &Var,
        b: Option<&Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        Graph::conv2d(self, *x, *k, b.copied(), stride, pad)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Var,
        k: &Var,
        b: Option<&Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        Graph::conv_transpose2d(self, *x, *k, b.copied(), stride, pad)
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        store: &ParamStore,
        prefix: &str,
        mode: BnMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let gamma = Graph::param(self, store, &format!("{prefix}.gamma"))?;
        let beta = Graph::param(self, store, &format!("{prefix}.beta"))?;
        graph_batch_norm(self, *x, gamma, beta, store, prefix, mode)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(Graph::relu(self, *x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::add(self, *a, *b)
    }
}

/// Records onto a graph but inserts every parameter as a constant, so no
/// gradient can reach the weights. Gradients still flow through to inputs.
pub struct Frozen<'g>(pub &'g mut Graph);

impl Backend for Frozen<'_> {
    type Value = Var;

    fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.0.constant(store.value(name)?.clone()))
    }

    fn shape(&self, x: &Var) -> Vec<usize> {
        self.0.value(*x).shape().to_vec()
    }

    fn conv2d(
        &mut self,
        x: &Var,
        k: &Var,
        b: Option<&Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        self.0.conv2d(*x, *k, b.copied(), stride, pad)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Var,
        k: &Var,
        b: Option<&Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        self.0.conv_transpose2d(*x, *k, b.copied(), stride, pad)
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        store: &ParamStore,
        prefix: &str,
        mode: BnMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let gamma = self.param(store, &format!("{prefix}.gamma"))?;
        let beta = self.param(store, &format!("{prefix}.beta"))?;
        graph_batch_norm(self.0, *x, gamma, beta, store, prefix, mode)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(self.0.relu(*x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.0.add(*a, *b)
    }
}
