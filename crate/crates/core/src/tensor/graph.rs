//! Tape of recorded operations and the reverse sweep over it.

use super::kernels::{self, ConvGeom};
use super::params::{ParamKey, ParamStore};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamKey>),
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        o: usize,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        ci: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Sum(Var),
    MaskedPow {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<bool>,
        alpha: u8,
        count: usize,
    },
    L1Dist(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        ignore: u8,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape recording tensor operations for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: Vec<(Var, Option<ParamKey>, Tensor)>,
}

impl Gradients {
    /// Gradient of a tracked leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.leaves
            .iter()
            .find(|(v, _, _)| *v == var)
            .map(|(_, _, t)| t)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamKey, &Tensor)> {
        self.leaves
            .iter()
            .filter_map(|(_, k, t)| k.map(|k| (k, t)))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// A free leaf; `requires_grad` makes its gradient available after backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf(None), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Inserts a store entry; trainable entries are tracked.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let key = store.key(name)?;
        let p = store.entry(key).expect("key from same store");
        let tracked = p.requires_grad();
        Ok(self.push(p.value.clone(), Op::Leaf(tracked.then_some(key)), tracked))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (o, kc, kh, kw) = self.value(k).dims4()?;
        if kc != c {
            return Err(shape_err(format!("conv2d: input has {c} channels, kernel expects {kc}")));
        }
        if let Some(b) = b {
            kernels::check_same_len(self.value(b).len(), o, "conv2d bias")?;
        }
        let geom = ConvGeom::new(c, (h, w), (kh, kw), stride, pad)?;
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(k).data(),
            o,
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![n, o, geom.oh, geom.ow], data)?;
        let rg = self.tracked(x) || self.tracked(k) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::Conv2d { x, k, b, geom, o }, rg))
    }

    /// Transposed convolution; kernel layout is (in, out, Kh, Kw).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (n, ci, h, w) = self.value(x).dims4()?;
        let (kci, co, kh, kw) = self.value(k).dims4()?;
        if kci != ci {
            return Err(shape_err(format!(
                "conv_transpose2d: input has {ci} channels, kernel expects {kci}"
            )));
        }
        if let Some(b) = b {
            kernels::check_same_len(self.value(b).len(), co, "conv_transpose2d bias")?;
        }
        let geom = transpose_geom(co, (h, w), (kh, kw), stride, pad)?;
        let data = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            ci,
            &geom,
            self.value(k).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![n, co, geom.h, geom.w], data)?;
        let rg = self.tracked(x) || self.tracked(k) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, k, b, geom, ci }, rg))
    }

    /// Per-channel normalization with the given statistics (batch statistics in
    /// training, running statistics otherwise).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn batch_norm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: &[f64],
        eps: f64,
        train: bool,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        kernels::check_same_len(self.value(gamma).len(), c, "batch_norm gamma")?;
        kernels::check_same_len(self.value(beta).len(), c, "batch_norm beta")?;
        kernels::check_same_len(mean.len(), c, "batch_norm mean")?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let data = kernels::affine_normalize(
            self.value(x).data(),
            c,
            h * w,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let value = Tensor::new(vec![n, c, h, w], data)?;
        let rg = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.tracked(x);
        self.push(value, Op::Relu(x), rg)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * k).collect())
            .expect("same shape");
        let rg = self.tracked(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.exp()).collect())
            .expect("same shape");
        let rg = self.tracked(x);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `1/(α·|V|) · Σ_V |target − pred|^α` over cells where `mask` is set.
    pub fn masked_pow_loss(
        &mut self,
        pred: Var,
        target: &[f64],
        mask: &[bool],
        alpha: u8,
    ) -> Result<Var> {
        let p = self.value(pred);
        kernels::check_same_len(p.len(), target.len(), "masked loss target")?;
        kernels::check_same_len(p.len(), mask.len(), "masked loss mask")?;
        if alpha != 1 && alpha != 2 {
            return Err(Error::BadConfig(format!("alpha must be 1 or 2, got {alpha}")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyValidSet);
        }
        let mut acc = 0.0;
        for ((&pv, &t), &m) in p.data().iter().zip(target).zip(mask) {
            if m {
                let d = (t - pv).abs();
                acc += if alpha == 1 { d } else { d * d };
            }
        }
        let value = Tensor::scalar(acc / (alpha as f64 * count as f64));
        let rg = self.tracked(pred);
        Ok(self.push(
            value,
            Op::MaskedPow {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                alpha,
                count,
            },
            rg,
        ))
    }

    /// Un-normalized `Σ |a − b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.binary(a, b, "l1_distance", |x, y| (x - y).abs())?;
        let s = diff.data().iter().sum();
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::scalar(s), Op::L1Dist(a, b), rg))
    }

    /// Mean softmax cross-entropy over cells whose label is not `ignore`.
    /// Logits are N×C×H×W, labels N×H×W.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: u8) -> Result<Var> {
        let (n, c, h, w) = self.value(logits).dims4()?;
        let hw = h * w;
        kernels::check_same_len(labels.len(), n * hw, "cross_entropy labels")?;
        let x = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0usize;
        for b in 0..n {
            for p in 0..hw {
                let t = labels[b * hw + p];
                if t == ignore {
                    continue;
                }
                if t as usize >= c {
                    return Err(Error::BadClassId(t));
                }
                let at = |ch: usize| x[(b * c + ch) * hw + p];
                let m = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..c).map(|ch| (at(ch) - m).exp()).sum::<f64>().ln();
                total += lse - at(t as usize);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyValidSet);
        }
        let rg = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                ignore,
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Returns gradients of every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = Vec::new();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf(key) => {
                    let t = Tensor::new(node.value.shape().to_vec(), dy)?;
                    leaves.push((Var(id), *key, t));
                }
                Op::Conv2d { x, k, b, geom, o } => {
                    let n = self.value(*x).shape()[0];
                    let (dx, dk) = kernels::conv2d_backward(
                        self.value(*x).data(),
                        n,
                        geom,
                        self.value(*k).data(),
                        *o,
                        &dy,
                        self.tracked(*x),
                        self.tracked(*k),
                    );
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dk) = dk {
                        acc(&mut grads, *k, dk);
                    }
                    if let Some(b) = b.filter(|b| self.tracked(*b)) {
                        acc(&mut grads, b, kernels::channel_sums(&dy, n, *o, geom.oh * geom.ow));
                    }
                }
                Op::ConvTranspose2d { x, k, b, geom, ci } => {
                    let n = self.value(*x).shape()[0];
                    let (dx, dk) = kernels::conv_transpose2d_backward(
                        self.value(*x).data(),
                        n,
                        *ci,
                        geom,
                        self.value(*k).data(),
                        &dy,
                        self.tracked(*x),
                        self.tracked(*k),
                    );
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dk) = dk {
                        acc(&mut grads, *k, dk);
                    }
                    if let Some(b) = b.filter(|b| self.tracked(*b)) {
                        acc(&mut grads, b, kernels::channel_sums(&dy, n, geom.c, geom.h * geom.w));
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train,
                } => {
                    let (n, c, h, w) = self.value(*x).dims4()?;
                    let hw = h * w;
                    let xs = self.value(*x).data();
                    let gm = self.value(*gamma).data();
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let s = (b * c + ch) * hw;
                            for p in s..s + hw {
                                let xh = (xs[p] - mean[ch]) * inv_std[ch];
                                sum_dy[ch] += dy[p];
                                sum_dy_xhat[ch] += dy[p] * xh;
                            }
                        }
                    }
                    if self.tracked(*x) {
                        let m = (n * hw) as f64;
                        let mut dx = vec![0.0; xs.len()];
                        for b in 0..n {
                            for ch in 0..c {
                                let s = (b * c + ch) * hw;
                                let k = gm[ch] * inv_std[ch];
                                for p in s..s + hw {
                                    dx[p] = if *train {
                                        let xh = (xs[p] - mean[ch]) * inv_std[ch];
                                        k * (dy[p] - sum_dy[ch] / m - xh * sum_dy_xhat[ch] / m)
                                    } else {
                                        k * dy[p]
                                    };
                                }
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                    if self.tracked(*gamma) {
                        acc(&mut grads, *gamma, sum_dy_xhat);
                    }
                    if self.tracked(*beta) {
                        acc(&mut grads, *beta, sum_dy);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = dy
                        .iter()
                        .zip(y)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.tracked(*b) {
                        acc(&mut grads, *b, dy.clone());
                    }
                    if self.tracked(*a) {
                        acc(&mut grads, *a, dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(*a) {
                        let g = dy.iter().zip(self.value(*b).data()).map(|(g, v)| g * v).collect();
                        acc(&mut grads, *a, g);
                    }
                    if self.tracked(*b) {
                        let g = dy.iter().zip(self.value(*a).data()).map(|(g, v)| g * v).collect();
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Scale(x, k) => {
                    acc(&mut grads, *x, dy.iter().map(|g| g * k).collect());
                }
                Op::Exp(x) => {
                    let g = dy.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                    acc(&mut grads, *x, g);
                }
                Op::Sum(x) => {
                    acc(&mut grads, *x, vec![dy[0]; self.value(*x).len()]);
                }
                Op::MaskedPow {
                    pred,
                    target,
                    mask,
                    alpha,
                    count,
                } => {
                    let scale = dy[0] / *count as f64;
                    let p = self.value(*pred).data();
                    let g = p
                        .iter()
                        .zip(target)
                        .zip(mask)
                        .map(|((&pv, &t), &m)| {
                            if !m {
                                0.0
                            } else if *alpha == 1 {
                                scale * sign(pv - t)
                            } else {
                                scale * (pv - t)
                            }
                        })
                        .collect();
                    acc(&mut grads, *pred, g);
                }
                Op::L1Dist(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let s: Vec<f64> = va.iter().zip(vb).map(|(x, y)| dy[0] * sign(x - y)).collect();
                    if self.tracked(*b) {
                        acc(&mut grads, *b, s.iter().map(|v| -v).collect());
                    }
                    if self.tracked(*a) {
                        acc(&mut grads, *a, s);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    ignore,
                    count,
                } => {
                    let (n, c, h, w) = self.value(*logits).dims4()?;
                    let hw = h * w;
                    let x = self.value(*logits).data();
                    let scale = dy[0] / *count as f64;
                    let mut g = vec![0.0; x.len()];
                    for b in 0..n {
                        for p in 0..hw {
                            let t = labels[b * hw + p];
                            if t == *ignore {
                                continue;
                            }
                            let idx = |ch: usize| (b * c + ch) * hw + p;
                            let m = (0..c).map(|ch| x[idx(ch)]).fold(f64::NEG_INFINITY, f64::max);
                            let z: f64 = (0..c).map(|ch| (x[idx(ch)] - m).exp()).sum();
                            for ch in 0..c {
                                let sm = (x[idx(ch)] - m).exp() / z;
                                let onehot = if ch == t as usize { 1.0 } else { 0.0 };
                                g[idx(ch)] = scale * (sm - onehot);
                            }
                        }
                    }
                    acc(&mut grads, *logits, g);
                }
            }
        }
        leaves.reverse();
        Ok(Gradients { leaves })
    }
}

/// Forward-conv geometry equivalent to a transposed convolution producing
/// `(h−1)·s − 2p + k` rows/cols from `(h, w)` inputs.
pub(crate) fn transpose_geom(
    co: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> Result<ConvGeom> {
    if h == 0 || w == 0 || sh == 0 || sw == 0 {
        return Err(shape_err("conv_transpose2d: empty input or zero stride"));
    }
    let oh = ((h - 1) * sh + kh)
        .checked_sub(2 * ph)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("conv_transpose2d: padding exceeds output"))?;
    let ow = ((w - 1) * sw + kw)
        .checked_sub(2 * pw)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("conv_transpose2d: padding exceeds output"))?;
    let geom = ConvGeom::new(co, (oh, ow), (kh, kw), (sh, sw), (ph, pw))?;
    debug_assert_eq!((geom.oh, geom.ow), (h, w));
    Ok(geom)
}
