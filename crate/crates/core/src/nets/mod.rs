//! The residual up-sampling network and the semantic feature extractor.
//!
//! Both are written once over [`Backend`], so the same definition serves
//! plain inference, training and use inside another network's loss.

pub mod extractor;
pub mod upsampler;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::formats::lwt::{read_lwt, write_lwt, LwtEntry};
use crate::tensor::{Backend, BatchStats, BnMode, ParamKind, ParamStore, Tensor};

pub use extractor::{ClassCatalog, Extractor, ExtractorConfig, FeatureSource, FrozenExtractor};
pub use upsampler::{Upsampler, UpsamplerConfig};

/// Runs layers against one parameter store, collecting batch statistics.
pub(crate) struct Layers<'a, B: Backend> {
    pub backend: &'a mut B,
    pub store: &'a ParamStore,
    pub mode: BnMode,
    pub stats: Vec<BatchStats>,
}

impl<'a, B: Backend> Layers<'a, B> {
    pub fn new(backend: &'a mut B, store: &'a ParamStore, mode: BnMode) -> Self {
        Self {
            backend,
            store,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn conv(
        &mut self,
        x: &B::Value,
        prefix: &str,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<B::Value> {
        let k = self.backend.param(self.store, &format!("{prefix}.weight"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.store.contains(&bias_name) {
            Some(self.backend.param(self.store, &bias_name)?)
        } else {
            None
        };
        self.backend.conv2d(x, &k, b.as_ref(), stride, pad)
    }

    pub fn conv_transpose(
        &mut self,
        x: &B::Value,
        prefix: &str,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<B::Value> {
        let k = self.backend.param(self.store, &format!("{prefix}.weight"))?;
        self.backend.conv_transpose2d(x, &k, None, stride, pad)
    }

    pub fn bn(&mut self, x: &B::Value, prefix: &str, relu: bool) -> Result<B::Value> {
        let (y, stats) = self.backend.batch_norm(x, self.store, prefix, self.mode)?;
        self.stats.extend(stats);
        if relu {
            self.backend.relu(&y)
        } else {
            Ok(y)
        }
    }
}

/// Kaiming fan-in normal weights, rounded to single precision so that a
/// freshly built network survives a save/load cycle unchanged.
pub(crate) fn kaiming(shape: &[usize], fan_in: f64, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32 as f64).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

pub(crate) fn add_batch_norm(store: &mut ParamStore, prefix: &str, c: usize) -> Result<()> {
    store.insert(&format!("{prefix}.gamma"), Tensor::full(&[c], 1.0), ParamKind::Trainable)?;
    store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
    store.insert(&format!("{prefix}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?;
    store.insert(&format!("{prefix}.running_var"), Tensor::full(&[c], 1.0), ParamKind::Buffer)?;
    Ok(())
}

/// `weights.lwt` → `weights.manifest`
pub fn manifest_path(weights: &Path) -> PathBuf {
    weights.with_extension("manifest")
}

pub(crate) fn save_store(path: &Path, store: &ParamStore, manifest: &str) -> Result<()> {
    let entries: Vec<LwtEntry> = store
        .iter()
        .map(|p| LwtEntry::from_tensor(&p.name, &p.value))
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_lwt(&mut w, &entries)?;
    w.flush()?;
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub(crate) fn read_manifest(path: &Path) -> Result<String> {
    let m = manifest_path(path);
    std::fs::read_to_string(&m)
        .map_err(|e| Error::CorruptFile(format!("cannot read manifest {}: {e}", m.display())))
}

/// Overwrites every entry of `store` from a weights file. The file must name
/// exactly the entries of the store, each with a matching shape.
pub(crate) fn fill_store(path: &Path, store: &mut ParamStore) -> Result<()> {
    let entries = read_lwt(BufReader::new(File::open(path)?))?;
    let mut seen = std::collections::HashSet::new();
    for e in &entries {
        let Ok(current) = store.value(&e.name) else {
            return Err(Error::ShapeMismatchVsConfig { name: e.name.clone() });
        };
        if current.shape() != e.shape.as_slice() || !seen.insert(e.name.clone()) {
            return Err(Error::ShapeMismatchVsConfig { name: e.name.clone() });
        }
        store.set(&e.name, e.to_tensor()?)?;
    }
    if let Some(missing) = store.iter().find(|p| !seen.contains(&p.name)) {
        return Err(Error::ShapeMismatchVsConfig {
            name: missing.name.clone(),
        });
    }
    Ok(())
}
