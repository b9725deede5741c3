//! Semantic feature extractor: five blocks of paired 3×3 convolutions at full
//! resolution and a 1×1 head producing per-cell class logits.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_batch_norm, fill_store, kaiming, read_manifest, save_store, Layers};
use crate::config;
use crate::error::{Error, Result};
use crate::geometry::{IGNORE_ID, NUM_CLASSES};
use crate::tensor::{
    Backend, BatchStats, BnMode, Eager, Frozen, Graph, ParamKind, ParamStore, Tensor, Var,
};

pub const BLOCKS: usize = 5;
/// Feature maps can be read after blocks `0..TAPS`.
pub const TAPS: usize = 4;

/// The fixed label set, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCatalog;

impl ClassCatalog {
    pub const NAMES: [&'static str; NUM_CLASSES] = [
        "road",
        "sidewalk",
        "person",
        "rider",
        "car",
        "truck-bus",
        "two-wheeler",
        "building",
        "pole",
        "traffic sign",
        "vegetation",
        "terrain",
        "sky",
    ];
    pub const ROAD: u8 = 0;
    pub const SIDEWALK: u8 = 1;
    pub const PERSON: u8 = 2;
    pub const RIDER: u8 = 3;
    pub const CAR: u8 = 4;
    pub const TRUCK_BUS: u8 = 5;
    pub const TWO_WHEELER: u8 = 6;
    pub const BUILDING: u8 = 7;
    pub const POLE: u8 = 8;
    pub const TRAFFIC_SIGN: u8 = 9;
    pub const VEGETATION: u8 = 10;
    pub const TERRAIN: u8 = 11;
    pub const SKY: u8 = 12;
    pub const IGNORE: u8 = IGNORE_ID;

    pub fn name(id: u8) -> Option<&'static str> {
        Self::NAMES.get(id as usize).copied()
    }

    pub fn id(name: &str) -> Option<u8> {
        Self::NAMES.iter().position(|&n| n == name).map(|i| i as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub block_filters: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            block_filters: vec![32, 64, 96, 96, 64],
            num_classes: NUM_CLASSES,
        }
    }
}

impl ExtractorConfig {
    pub fn with_filters(block_filters: Vec<usize>) -> Self {
        Self {
            block_filters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_filters.len() != BLOCKS {
            return Err(Error::BadConfig(format!(
                "extractor needs {BLOCKS} blocks, got {}",
                self.block_filters.len()
            )));
        }
        if self.block_filters.contains(&0) {
            return Err(Error::BadConfig("block filter counts must be positive".into()));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::BadConfig(format!("num_classes must be {NUM_CLASSES}")));
        }
        Ok(())
    }
}

/// Written next to extractor weights: the configuration and the label set.
#[derive(Debug, Serialize, Deserialize)]
struct ExtractorManifest {
    block_filters: Vec<usize>,
    num_classes: usize,
    classes: Vec<String>,
}

/// Cells on each side of a position that can influence the map at `tap`.
pub fn receptive_radius(tap: usize) -> usize {
    2 * (tap + 1)
}

fn check_tap(tap: usize) -> Result<()> {
    if tap >= TAPS {
        return Err(Error::TapOutOfRange(tap));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Extractor {
    config: ExtractorConfig,
    pub params: ParamStore,
}

impl Extractor {
    pub fn build(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut cin = 1;
        for (b, &f) in config.block_filters.iter().enumerate() {
            for c in 1..=2 {
                let w = kaiming(&[f, cin, 3, 3], (9 * cin) as f64, &mut rng);
                p.insert(&format!("block{b}.conv{c}.weight"), w, ParamKind::Trainable)?;
                add_batch_norm(&mut p, &format!("block{b}.bn{c}"), f)?;
                cin = f;
            }
        }
        let k = config.num_classes;
        p.insert("head.conv.weight", kaiming(&[k, cin, 1, 1], cin as f64, &mut rng), ParamKind::Trainable)?;
        p.insert("head.conv.bias", Tensor::zeros(&[k]), ParamKind::Trainable)?;
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    fn run_blocks<B: Backend>(
        &self,
        l: &mut Layers<'_, B>,
        mut x: B::Value,
        blocks: std::ops::Range<usize>,
    ) -> Result<B::Value> {
        for b in blocks {
            for c in 1..=2 {
                let y = l.conv(&x, &format!("block{b}.conv{c}"), (1, 1), (1, 1))?;
                x = l.bn(&y, &format!("block{b}.bn{c}"), true)?;
            }
        }
        Ok(x)
    }

    /// Activation after block `tap` for an N×1×H×W input.
    pub fn features_with<B: Backend>(
        &self,
        backend: &mut B,
        x: &B::Value,
        tap: usize,
        mode: BnMode,
    ) -> Result<(B::Value, Vec<BatchStats>)> {
        check_tap(tap)?;
        let mut l = Layers::new(backend, &self.params, mode);
        let y = self.run_blocks(&mut l, x.clone(), 0..tap + 1)?;
        Ok((y, l.stats))
    }

    /// Completes the forward pass from the activation after block `tap`.
    pub fn logits_from_tap<B: Backend>(
        &self,
        backend: &mut B,
        features: &B::Value,
        tap: usize,
        mode: BnMode,
    ) -> Result<(B::Value, Vec<BatchStats>)> {
        check_tap(tap)?;
        let mut l = Layers::new(backend, &self.params, mode);
        let y = self.run_blocks(&mut l, features.clone(), tap + 1..BLOCKS)?;
        let y = l.conv(&y, "head.conv", (1, 1), (0, 0))?;
        Ok((y, l.stats))
    }

    /// N×1×H×W → N×13×H×W.
    pub fn logits_with<B: Backend>(
        &self,
        backend: &mut B,
        x: &B::Value,
        mode: BnMode,
    ) -> Result<(B::Value, Vec<BatchStats>)> {
        let mut l = Layers::new(backend, &self.params, mode);
        let y = self.run_blocks(&mut l, x.clone(), 0..BLOCKS)?;
        let y = l.conv(&y, "head.conv", (1, 1), (0, 0))?;
        Ok((y, l.stats))
    }

    pub fn features(&self, x: &Tensor, tap: usize) -> Result<Tensor> {
        Ok(self.features_with(&mut Eager, x, tap, BnMode::Eval)?.0)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.logits_with(&mut Eager, x, BnMode::Eval)?.0)
    }

    /// Per-cell argmax labels, N×H×W flattened.
    pub fn predict_labels(&self, x: &Tensor) -> Result<Vec<u8>> {
        Ok(argmax_labels(&self.logits(x)?))
    }

    /// A view for use inside losses: parameters enter the graph as constants.
    pub fn frozen(&self) -> FrozenExtractor<'_> {
        FrozenExtractor(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let m = ExtractorManifest {
            block_filters: self.config.block_filters.clone(),
            num_classes: self.config.num_classes,
            classes: ClassCatalog::NAMES.iter().map(|s| s.to_string()).collect(),
        };
        save_store(path, &self.params, &config::to_text(&m)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ExtractorManifest = config::from_text(&read_manifest(path)?)
            .map_err(|e| Error::CorruptFile(format!("bad manifest: {e}")))?;
        if m.classes.iter().map(String::as_str).ne(ClassCatalog::NAMES) {
            return Err(Error::CorruptFile("manifest lists a different class catalog".into()));
        }
        let mut net = Self::build(
            ExtractorConfig {
                block_filters: m.block_filters,
                num_classes: m.num_classes,
            },
            0,
        )?;
        fill_store(path, &mut net.params)?;
        Ok(net)
    }
}

/// Argmax over the channel axis of N×C×H×W logits; lowest id wins ties.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    let s = logits.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let x = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for ch in 1..c {
                if x[(b * c + ch) * hw + p] > x[(b * c + best) * hw + p] {
                    best = ch;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Something that maps a recorded N×1×H×W raster to feature maps without
/// exposing trainable parameters.
pub trait FeatureSource {
    fn features_on(&self, g: &mut Graph, x: Var, tap: usize) -> Result<Var>;
    fn logits_on(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

#[derive(Debug, Clone, Copy)]
pub struct FrozenExtractor<'a>(&'a Extractor);

impl FrozenExtractor<'_> {
    /// Always zero: nothing here is visible to an optimizer.
    pub fn trainable_parameters(&self) -> usize {
        0
    }
}

impl FeatureSource for FrozenExtractor<'_> {
    fn features_on(&self, g: &mut Graph, x: Var, tap: usize) -> Result<Var> {
        Ok(self.0.features_with(&mut Frozen(g), &x, tap, BnMode::Eval)?.0)
    }

    fn logits_on(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.0.logits_with(&mut Frozen(g), &x, BnMode::Eval)?.0)
    }
}
