//! Training objectives: masked point-wise error, feature-space distance and
//! the uncertainty-weighted semantic-consistency combination.
//!
//! Each objective has a graph form (for training) and, where useful, a plain
//! value form used by evaluation and as a reference in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{IGNORE_ID, NUM_CLASSES};
use crate::nets::extractor::{FeatureSource, TAPS};
use crate::tensor::{kernels, Graph, ParamKind, ParamStore, Tensor, Var};

/// Exponent of the point-wise loss: 1 for absolute, 2 for squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointwiseLossConfig {
    pub alpha: u8,
}

impl PointwiseLossConfig {
    pub const L1: Self = Self { alpha: 1 };
    pub const L2: Self = Self { alpha: 2 };

    pub fn new(alpha: u8) -> Result<Self> {
        if alpha == 1 || alpha == 2 {
            Ok(Self { alpha })
        } else {
            Err(Error::BadConfig(format!("alpha must be 1 or 2, got {alpha}")))
        }
    }
}

/// `1/(α·|V|) · Σ_V |gt − pred|^α`.
pub fn masked_pointwise(pred: &[f64], gt: &[f64], valid: &[bool], alpha: u8) -> Result<f64> {
    kernels::check_same_len(pred.len(), gt.len(), "masked loss target")?;
    kernels::check_same_len(pred.len(), valid.len(), "masked loss mask")?;
    PointwiseLossConfig::new(alpha)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&p, &t), &v) in pred.iter().zip(gt).zip(valid) {
        if v {
            sum += (t - p).abs().powi(alpha as i32);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidSet);
    }
    Ok(sum / (alpha as f64 * count as f64))
}

pub fn masked_pointwise_loss(
    g: &mut Graph,
    pred: Var,
    gt: &[f64],
    valid: &[bool],
    config: PointwiseLossConfig,
) -> Result<Var> {
    g.masked_pow_loss(pred, gt, valid, config.alpha)
}

fn batch_of(g: &Graph, x: Var) -> Result<usize> {
    Ok(g.value(x).dims4()?.0)
}

/// Sum of absolute feature differences at `tap`, divided by the batch size.
/// The ground truth side is evaluated without gradient.
pub fn perceptual_loss(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    extractor: &impl FeatureSource,
    tap: usize,
) -> Result<Var> {
    if tap >= TAPS {
        return Err(Error::TapOutOfRange(tap));
    }
    if g.value(pred).shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "perceptual loss: prediction {:?} vs target {:?}",
            g.value(pred).shape(),
            gt.shape()
        )));
    }
    let n = batch_of(g, pred)?;
    let gt_in = g.constant(gt.clone());
    let ft = extractor.features_on(g, gt_in, tap)?;
    let fp = extractor.features_on(g, pred, tap)?;
    let d = g.l1_distance(fp, ft)?;
    Ok(g.scale(d, 1.0 / n as f64))
}

/// Mean softmax cross-entropy of N×13×H×W logits against N×H×W ids.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let c = g.value(logits).dims4()?.1;
    if c != NUM_CLASSES {
        return Err(Error::ShapeMismatch(format!("expected {NUM_CLASSES} logit channels, got {c}")));
    }
    g.cross_entropy(logits, labels, IGNORE_ID)
}

/// Value form of [`cross_entropy`] for C×H×W or N×C×H×W logits.
pub fn cross_entropy_value(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    let t = if logits.shape().len() == 3 {
        let mut s = vec![1];
        s.extend_from_slice(logits.shape());
        logits.clone().reshape(s)?
    } else {
        logits.clone()
    };
    let mut g = Graph::new();
    let v = g.constant(t);
    let loss = cross_entropy(&mut g, v, labels)?;
    Ok(g.value(loss).item())
}

/// Trainable balance terms, stored as `s = log σ`.
#[derive(Debug, Clone)]
pub struct ScLossState {
    pub params: ParamStore,
}

pub const LOG_SIGMA_R: &str = "sc.log_sigma_r";
pub const LOG_SIGMA_C: &str = "sc.log_sigma_c";

impl Default for ScLossState {
    fn default() -> Self {
        Self::new(1.0, 1.0).expect("positive")
    }
}

impl ScLossState {
    pub fn new(sigma_r: f64, sigma_c: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_c > 0.0) {
            return Err(Error::BadConfig("sigma values must be positive".into()));
        }
        let mut params = ParamStore::new();
        params.insert(LOG_SIGMA_R, Tensor::scalar(sigma_r.ln()), ParamKind::Trainable)?;
        params.insert(LOG_SIGMA_C, Tensor::scalar(sigma_c.ln()), ParamKind::Trainable)?;
        Ok(Self { params })
    }

    pub fn sigma_r(&self) -> f64 {
        self.params.value(LOG_SIGMA_R).map(|t| t.item().exp()).unwrap_or(f64::NAN)
    }

    pub fn sigma_c(&self) -> f64 {
        self.params.value(LOG_SIGMA_C).map(|t| t.item().exp()).unwrap_or(f64::NAN)
    }
}

/// `L1/(2σ_r) + ln σ_r + CE/σ_c + ln σ_c`.
pub fn sc_combine(l1: f64, ce: f64, sigma_r: f64, sigma_c: f64) -> f64 {
    l1 / (2.0 * sigma_r) + sigma_r.ln() + ce / sigma_c + sigma_c.ln()
}

pub struct ScTerms {
    pub total: Var,
    pub l1: Var,
    pub ce: Var,
}

/// Point-wise L1 on valid cells plus cross-entropy of the extractor's labels
/// for the prediction, weighted by the trainable balances in `state`.
#[allow(clippy::too_many_arguments)]
pub fn semantic_consistency_loss(
    g: &mut Graph,
    pred: Var,
    gt: &[f64],
    valid: &[bool],
    gt_labels: &[u8],
    extractor: &impl FeatureSource,
    state: &ScLossState,
) -> Result<ScTerms> {
    let l1 = g.masked_pow_loss(pred, gt, valid, 1)?;
    let logits = extractor.logits_on(g, pred)?;
    let ce = cross_entropy(g, logits, gt_labels)?;
    let sr = g.param(&state.params, LOG_SIGMA_R)?;
    let sc = g.param(&state.params, LOG_SIGMA_C)?;
    let neg_sr = g.scale(sr, -1.0);
    let inv_r = g.exp(neg_sr);
    let neg_sc = g.scale(sc, -1.0);
    let inv_c = g.exp(neg_sc);
    let a = g.mul(inv_r, l1)?;
    let a = g.scale(a, 0.5);
    let b = g.mul(inv_c, ce)?;
    let t = g.add(a, sr)?;
    let t = g.add(t, b)?;
    let total = g.add(t, sc)?;
    Ok(ScTerms { total, l1, ce })
}
