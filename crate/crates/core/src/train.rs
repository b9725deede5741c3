//! Training loops for the up-sampler and the feature extractor.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_inputs, batch_targets, Sample, SplitFractions};
use crate::error::{Error, Result};
use crate::geometry::{to_network_raster, DistanceImage, IGNORE_ID};
use crate::losses::{
    cross_entropy, masked_pointwise_loss, perceptual_loss, semantic_consistency_loss,
    PointwiseLossConfig, ScLossState,
};
use crate::metrics::ErrorSums;
use crate::nets::extractor::{argmax_labels, Extractor, ExtractorConfig, TAPS};
use crate::nets::upsampler::{Upsampler, UpsamplerConfig};
use crate::par;
use crate::tensor::{Adam, AdamConfig, BatchStats, BnMode, Graph, ParamStore, Tensor};

/// Objective used to train the up-sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossKind {
    L1,
    L2,
    /// Feature distance at the given extractor tap.
    Feat(usize),
    /// Point-wise L1 plus segmentation cross-entropy with learned balances.
    Sc,
}

impl LossKind {
    /// Validation error that picks the checkpoint: squared for L2, absolute otherwise.
    pub fn selects_by_mse(self) -> bool {
        self == LossKind::L2
    }

    pub fn needs_extractor(self) -> bool {
        matches!(self, LossKind::Feat(_) | LossKind::Sc)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::L1 => write!(f, "l1"),
            LossKind::L2 => write!(f, "l2"),
            LossKind::Feat(b) => write!(f, "feat-{b}"),
            LossKind::Sc => write!(f, "sc"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = match s {
            "l1" => LossKind::L1,
            "l2" => LossKind::L2,
            "sc" => LossKind::Sc,
            _ => {
                let tap = s
                    .strip_prefix("feat-")
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| Error::BadConfig(format!("unknown loss `{s}`")))?;
                if tap >= TAPS {
                    return Err(Error::TapOutOfRange(tap));
                }
                LossKind::Feat(tap)
            }
        };
        Ok(k)
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub iterations: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub lr: f64,
    /// Learning rate reached at the last step by cosine decay; constant when absent.
    pub final_lr: Option<f64>,
    pub splits: SplitFractions,
    pub network: UpsamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::L1,
            batch_size: 4,
            iterations: 2000,
            eval_interval: 100,
            seed: 0,
            lr: 1e-3,
            final_lr: None,
            splits: SplitFractions::default(),
            network: UpsamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::BadConfig("batch_size and eval_interval must be positive".into()));
        }
        if !(self.lr > 0.0) || self.final_lr.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::BadConfig("learning rates must be positive".into()));
        }
        self.splits.validate()?;
        self.network.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.final_lr {
            None => self.lr,
            Some(end) => {
                let t = step as f64 / self.iterations.max(1) as f64;
                end + 0.5 * (self.lr - end) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    /// Training objective on the batch of this step.
    pub loss: f64,
    pub val_mae: Option<f64>,
    pub val_mse: Option<f64>,
    pub sigma_r: Option<f64>,
    pub sigma_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub loss: String,
    pub entries: Vec<LogEntry>,
    pub best_step: usize,
    pub best_score: f64,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Pooled masked errors of eval-mode predictions against the samples' targets.
pub fn prediction_errors(net: &Upsampler, samples: &[Sample]) -> Result<ErrorSums> {
    let per = par::map(samples, |s| -> Result<ErrorSums> {
        let pred = predict(net, s)?;
        let mut e = ErrorSums::default();
        e.add_images(&pred, &s.high)?;
        Ok(e)
    });
    let mut total = ErrorSums::default();
    for e in per {
        total.merge(&e?);
    }
    Ok(total)
}

/// Eval-mode prediction on the sample's high-resolution grid.
pub fn predict(net: &Upsampler, s: &Sample) -> Result<DistanceImage> {
    let y = net.infer(&batch_inputs(&[s])?)?;
    DistanceImage::from_prediction(s.high.geometry().clone(), y.data())
}

fn apply_stats(stats: &[BatchStats], store: &mut ParamStore) -> Result<()> {
    stats.iter().try_for_each(|s| s.apply(store))
}

fn choose_batch(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut idx = sample_indices(rng, n, batch).into_vec();
    idx.sort_unstable();
    idx
}

/// Mean range over the valid target cells, zero when there are none.
fn mean_valid_target(samples: &[Sample]) -> f64 {
    let (sum, n) = samples
        .iter()
        .flat_map(|s| s.target.iter().zip(&s.mask))
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&t, _)| (s + t, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains an up-sampler and returns the checkpoint with the lowest
/// validation error. A fresh network starts with its output bias at the mean
/// valid training range. Feature and semantic objectives start from `init`, or
/// from a point-wise L1 run with the same settings when no `init` is given.
pub fn train_upsampler(
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    extractor: Option<&Extractor>,
    init: Option<&Upsampler>,
) -> Result<(Upsampler, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.loss.needs_extractor() && extractor.is_none() {
        return Err(Error::MissingExtractor);
    }
    if cfg.loss == LossKind::Sc && train.iter().any(|s| s.labels().is_none()) {
        return Err(Error::MissingLabels);
    }
    let mut net = match (init, cfg.loss.needs_extractor()) {
        (Some(n), _) => n.clone(),
        (None, true) => {
            let warm = TrainConfig {
                loss: LossKind::L1,
                ..cfg.clone()
            };
            train_upsampler(&warm, train, val, None, None)?.0
        }
        (None, false) => {
            let mut net = Upsampler::build(cfg.network.clone(), cfg.seed)?;
            net.set_output_bias(mean_valid_target(train))?;
            net
        }
    };
    let judge = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut sc = ScLossState::default();
    let mut sc_adam = adam.clone();
    let mut log = TrainLog {
        loss: cfg.loss.to_string(),
        best_score: f64::INFINITY,
        ..TrainLog::default()
    };
    let mut best = net.params.clone();

    for step in 1..=cfg.iterations {
        let lr = cfg.lr_at(step - 1);
        adam.config.lr = lr;
        sc_adam.config.lr = lr;
        let idx = choose_batch(&mut rng, train.len(), cfg.batch_size);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();

        let mut g = Graph::new();
        let x = g.constant(batch_inputs(&batch)?);
        let (out, stats) = net.forward(&mut g, &x, BnMode::Train)?;
        let target: Vec<f64> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
        let mask: Vec<bool> = batch.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let loss = match cfg.loss {
            LossKind::L1 => masked_pointwise_loss(&mut g, out, &target, &mask, PointwiseLossConfig::L1)?,
            LossKind::L2 => masked_pointwise_loss(&mut g, out, &target, &mask, PointwiseLossConfig::L2)?,
            LossKind::Feat(tap) => {
                let ext = extractor.ok_or(Error::MissingExtractor)?.frozen();
                perceptual_loss(&mut g, out, &batch_targets(&batch)?, &ext, tap)?
            }
            LossKind::Sc => {
                let ext = extractor.ok_or(Error::MissingExtractor)?.frozen();
                let labels: Vec<u8> = batch
                    .iter()
                    .flat_map(|s| s.labels().unwrap_or_default().iter().copied())
                    .collect();
                semantic_consistency_loss(&mut g, out, &target, &mask, &labels, &ext, &sc)?.total
            }
        };
        let grads = g.backward(loss)?;
        net.params.accumulate(&grads);
        adam.step(&mut net.params)?;
        net.params.zero_grad();
        apply_stats(&stats, &mut net.params)?;
        if cfg.loss == LossKind::Sc {
            sc.params.accumulate(&grads);
            sc_adam.step(&mut sc.params)?;
            sc.params.zero_grad();
        }

        let mut entry = LogEntry {
            step,
            lr,
            loss: g.value(loss).item(),
            val_mae: None,
            val_mse: None,
            sigma_r: (cfg.loss == LossKind::Sc).then(|| sc.sigma_r()),
            sigma_c: (cfg.loss == LossKind::Sc).then(|| sc.sigma_c()),
        };
        if step % cfg.eval_interval == 0 || step == cfg.iterations {
            let (mse, mae) = prediction_errors(&net, judge)?.finish()?;
            entry.val_mae = Some(mae);
            entry.val_mse = Some(mse);
            let score = if cfg.loss.selects_by_mse() { mse } else { mae };
            if score < log.best_score {
                log.best_score = score;
                log.best_step = step;
                best = net.params.clone();
            }
        }
        log.entries.push(entry);
    }
    if cfg.iterations > 0 {
        net.params = best;
    }
    Ok((net, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorTrainConfig {
    pub network: ExtractorConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub lr: f64,
    pub final_lr: Option<f64>,
}

impl Default for ExtractorTrainConfig {
    fn default() -> Self {
        Self {
            network: ExtractorConfig::default(),
            batch_size: 4,
            iterations: 1000,
            seed: 0,
            lr: 1e-3,
            final_lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorLogEntry {
    pub step: usize,
    pub loss: f64,
}

/// Frames prepared for segmentation training: the network raster and labels.
struct Labelled {
    input: Vec<f64>,
    labels: Vec<u8>,
    dims: (usize, usize),
}

fn labelled(frames: &[DistanceImage]) -> Result<Vec<Labelled>> {
    let out: Vec<Labelled> = frames
        .iter()
        .filter_map(|f| {
            f.labels().map(|l| Labelled {
                input: to_network_raster(f),
                labels: l.to_vec(),
                dims: (f.rows(), f.cols()),
            })
        })
        .collect();
    if out.iter().all(|f| f.labels.iter().all(|&c| c == IGNORE_ID)) {
        return Err(Error::MissingLabels);
    }
    Ok(out)
}

/// Cross-entropy training of the extractor on labelled high-resolution frames.
pub fn train_extractor(
    cfg: &ExtractorTrainConfig,
    frames: &[DistanceImage],
) -> Result<(Extractor, Vec<ExtractorLogEntry>)> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::BadConfig("batch_size and lr must be positive".into()));
    }
    let data = labelled(frames)?;
    let mut net = Extractor::build(cfg.network.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let schedule = TrainConfig {
        lr: cfg.lr,
        final_lr: cfg.final_lr,
        iterations: cfg.iterations,
        ..TrainConfig::default()
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    for step in 1..=cfg.iterations {
        adam.config.lr = schedule.lr_at(step - 1);
        let idx = choose_batch(&mut rng, data.len(), cfg.batch_size);
        let (h, w) = data[idx[0]].dims;
        let rasters: Vec<&[f64]> = idx.iter().map(|&i| data[i].input.as_slice()).collect();
        let labels: Vec<u8> = idx.iter().flat_map(|&i| data[i].labels.iter().copied()).collect();
        if labels.iter().all(|&c| c == IGNORE_ID) {
            continue;
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rasters(&rasters, h, w)?);
        let (logits, stats) = net.logits_with(&mut g, &x, BnMode::Train)?;
        let loss = cross_entropy(&mut g, logits, &labels)?;
        let grads = g.backward(loss)?;
        net.params.accumulate(&grads);
        adam.step(&mut net.params)?;
        net.params.zero_grad();
        apply_stats(&stats, &mut net.params)?;
        log.push(ExtractorLogEntry {
            step,
            loss: g.value(loss).item(),
        });
    }
    Ok((net, log))
}

/// Fraction of labelled cells whose eval-mode argmax matches the label.
pub fn pixel_accuracy(net: &Extractor, frames: &[DistanceImage]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for f in frames {
        let Some(labels) = f.labels() else { continue };
        let raster = to_network_raster(f);
        let pred = argmax_labels(&net.logits(&Tensor::from_rasters(&[&raster], f.rows(), f.cols())?)?);
        for (&p, &t) in pred.iter().zip(labels) {
            if t != IGNORE_ID {
                total += 1;
                hit += usize::from(p == t);
            }
        }
    }
    if total == 0 {
        return Err(Error::MissingLabels);
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_names() {
        for (s, k) in [("l1", LossKind::L1), ("l2", LossKind::L2), ("feat-2", LossKind::Feat(2)), ("sc", LossKind::Sc)] {
            assert_eq!(s.parse::<LossKind>().unwrap(), k);
            assert_eq!(k.to_string(), s);
        }
        assert!(matches!("feat-4".parse::<LossKind>(), Err(Error::TapOutOfRange(4))));
        assert!("huber".parse::<LossKind>().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            lr: 1e-2,
            final_lr: Some(1e-4),
            iterations: 100,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(0) - 1e-2).abs() < 1e-15);
        assert!((cfg.lr_at(100) - 1e-4).abs() < 1e-15);
        assert!(cfg.lr_at(50) < 1e-2 && cfg.lr_at(50) > 1e-4);
    }
}
