//! Residual CNN mapping an H×W range raster to 2H×W.
//!
//! Layer stack: a wide stem convolution with batch norm and ReLU, a chain of
//! residual blocks (conv, BN, ReLU, conv, BN, identity skip), one transposed
//! convolution that doubles the row count, and a wide linear head.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_batch_norm, fill_store, kaiming, read_manifest, save_store, Layers};
use crate::config;
use crate::error::{Error, Result};
use crate::geometry::{to_network_raster, DistanceImage, SensorGeometry};
use crate::tensor::{Backend, BatchStats, BnMode, Eager, ParamKind, ParamStore, Tensor};

/// Smallest input accepted by [`Upsampler::forward`].
pub const MIN_INPUT: (usize, usize) = (8, 16);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsamplerConfig {
    pub residual_blocks: usize,
    pub base_filters: usize,
    pub stem_kernel: (usize, usize),
    pub trans_kernel: (usize, usize),
    pub trans_stride: (usize, usize),
    pub trans_padding: (usize, usize),
    pub input_channels: usize,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self {
            residual_blocks: 16,
            base_filters: 64,
            stem_kernel: (9, 9),
            trans_kernel: (4, 1),
            trans_stride: (2, 1),
            trans_padding: (1, 0),
            input_channels: 1,
        }
    }
}

impl UpsamplerConfig {
    pub fn small(residual_blocks: usize, base_filters: usize) -> Self {
        Self {
            residual_blocks,
            base_filters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.residual_blocks < 1 {
            return bad("residual_blocks must be at least 1");
        }
        if self.base_filters < 1 {
            return bad("base_filters must be at least 1");
        }
        if self.input_channels != 1 {
            return bad("input_channels must be 1");
        }
        let (kh, kw) = self.stem_kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return bad("stem_kernel must be odd in both directions");
        }
        // (H − 1)·s − 2p + k = 2H for every H  ⇔  s = 2 and k − 2p = 2.
        let (th, tw) = self.trans_kernel;
        let (sh, sw) = self.trans_stride;
        let (ph, pw) = self.trans_padding;
        if sh != 2 || th != 2 * ph + 2 {
            return bad("transposed convolution must map H rows to exactly 2H");
        }
        if sw != 1 || tw != 2 * pw + 1 {
            return bad("transposed convolution must keep the column count");
        }
        Ok(())
    }

    /// Trainable scalars implied by the layer shapes.
    pub fn parameter_count(&self) -> usize {
        let f = self.base_filters;
        let (kh, kw) = self.stem_kernel;
        let (th, tw) = self.trans_kernel;
        let stem = kh * kw * f + 2 * f;
        let block = 2 * (9 * f * f + 2 * f);
        let trans = th * tw * f * f + 2 * f;
        let head = kh * kw * f + 1;
        stem + self.residual_blocks * block + trans + head
    }
}

#[derive(Debug, Clone)]
pub struct Upsampler {
    config: UpsamplerConfig,
    pub params: ParamStore,
}

impl Upsampler {
    pub fn build(config: UpsamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.base_filters;
        let (kh, kw) = config.stem_kernel;
        let (th, tw) = config.trans_kernel;
        let (sh, sw) = config.trans_stride;
        let mut p = ParamStore::new();
        let t = ParamKind::Trainable;

        p.insert("stem.conv.weight", kaiming(&[f, 1, kh, kw], (kh * kw) as f64, &mut rng), t)?;
        add_batch_norm(&mut p, "stem.bn", f)?;
        for b in 0..config.residual_blocks {
            for c in 1..=2 {
                let w = kaiming(&[f, f, 3, 3], (9 * f) as f64, &mut rng);
                p.insert(&format!("block{b}.conv{c}.weight"), w, t)?;
                add_batch_norm(&mut p, &format!("block{b}.bn{c}"), f)?;
            }
        }
        let trans_fan = (f * th * tw) as f64 / (sh * sw) as f64;
        p.insert("trans.conv.weight", kaiming(&[f, f, th, tw], trans_fan, &mut rng), t)?;
        add_batch_norm(&mut p, "trans.bn", f)?;
        p.insert("head.conv.weight", kaiming(&[1, f, kh, kw], (f * kh * kw) as f64, &mut rng), t)?;
        p.insert("head.conv.bias", Tensor::zeros(&[1]), t)?;
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &UpsamplerConfig {
        &self.config
    }

    /// N×1×H×W → N×1×2H×W on any backend.
    pub fn forward<B: Backend>(
        &self,
        backend: &mut B,
        x: &B::Value,
        mode: BnMode,
    ) -> Result<(B::Value, Vec<BatchStats>)> {
        let shape = backend.shape(x);
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "up-sampler input must be N×1×H×W, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h < MIN_INPUT.0 || w < MIN_INPUT.1 {
            return Err(Error::InputTooSmall { h, w });
        }
        let c = &self.config;
        let same = (c.stem_kernel.0 / 2, c.stem_kernel.1 / 2);
        let mut l = Layers::new(backend, &self.params, mode);

        let y = l.conv(x, "stem.conv", (1, 1), same)?;
        let mut y = l.bn(&y, "stem.bn", true)?;
        for b in 0..c.residual_blocks {
            let r = l.conv(&y, &format!("block{b}.conv1"), (1, 1), (1, 1))?;
            let r = l.bn(&r, &format!("block{b}.bn1"), true)?;
            let r = l.conv(&r, &format!("block{b}.conv2"), (1, 1), (1, 1))?;
            let r = l.bn(&r, &format!("block{b}.bn2"), false)?;
            y = l.backend.add(&y, &r)?;
        }
        let y = l.conv_transpose(&y, "trans.conv", c.trans_stride, c.trans_padding)?;
        let y = l.bn(&y, "trans.bn", true)?;
        let out = l.conv(&y, "head.conv", (1, 1), same)?;
        Ok((out, l.stats))
    }

    /// Sets the constant added to every output cell.
    pub fn set_output_bias(&mut self, bias: f64) -> Result<()> {
        self.params.set("head.conv.bias", Tensor::new(vec![1], vec![bias])?)
    }

    /// Eval-mode forward of a batch of rasters.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(&mut Eager, x, BnMode::Eval)?.0)
    }

    /// Up-samples one image. The output grid is `target` when given, otherwise
    /// the input grid with a layer inserted between each pair of rows.
    pub fn upsample(
        &self,
        low: &DistanceImage,
        target: Option<Arc<SensorGeometry>>,
    ) -> Result<DistanceImage> {
        let geometry = match target {
            Some(g) => g,
            None => Arc::new(low.geometry().upsampled()?),
        };
        if geometry.rows() != 2 * low.rows() || geometry.cols() != low.cols() {
            return Err(Error::ShapeMismatch(format!(
                "target grid {}x{} is not twice the rows of {}x{}",
                geometry.rows(),
                geometry.cols(),
                low.rows(),
                low.cols()
            )));
        }
        let raster = to_network_raster(low);
        let x = Tensor::from_rasters(&[&raster], low.rows(), low.cols())?;
        let y = self.infer(&x)?;
        DistanceImage::from_prediction(geometry, y.data())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_store(path, &self.params, &config::to_text(&self.config)?)
    }

    /// Loads weights using the configuration recorded next to them.
    pub fn load(path: &Path) -> Result<Self> {
        let config: UpsamplerConfig = config::from_text(&read_manifest(path)?)
            .map_err(|e| Error::CorruptFile(format!("bad manifest: {e}")))?;
        Self::load_with_config(path, config)
    }

    pub fn load_with_config(path: &Path, config: UpsamplerConfig) -> Result<Self> {
        let mut net = Self::build(config, 0)?;
        fill_store(path, &mut net.params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::lwt::{read_lwt, write_lwt, LwtEntry};
    use crate::tensor::Graph;

    fn ramp(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|k| 5.0 + ((k * 7) % 13) as f64).collect();
        Tensor::new(vec![1, 1, h, w], data).unwrap()
    }

    #[test]
    fn default_parameter_count_matches_closed_form() {
        let cfg = UpsamplerConfig::default();
        let f = 64;
        let closed = 81 * f + 2 * f + 16 * 2 * (9 * f * f + 2 * f) + 4 * f * f + 2 * f + 81 * f + 1;
        assert_eq!(closed, 1_210_753);
        assert_eq!(cfg.parameter_count(), closed);
        let net = Upsampler::build(cfg, 1).unwrap();
        assert_eq!(net.params.trainable_count(), closed);
    }

    #[test]
    fn smallest_variant_and_determinism() {
        let a = Upsampler::build(UpsamplerConfig::small(1, 8), 7).unwrap();
        let b = Upsampler::build(UpsamplerConfig::small(1, 8), 7).unwrap();
        for (p, q) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.value, q.value);
        }
        let c = Upsampler::build(UpsamplerConfig::small(1, 8), 8).unwrap();
        assert_ne!(
            a.params.value("stem.conv.weight").unwrap(),
            c.params.value("stem.conv.weight").unwrap()
        );
    }

    #[test]
    fn bad_configs() {
        let mut cfg = UpsamplerConfig::small(0, 8);
        assert!(matches!(Upsampler::build(cfg.clone(), 0), Err(Error::BadConfig(_))));
        cfg.residual_blocks = 1;
        cfg.trans_padding = (0, 0);
        assert!(matches!(Upsampler::build(cfg, 0), Err(Error::BadConfig(_))));
    }

    #[test]
    fn output_doubles_rows() {
        let net = Upsampler::build(UpsamplerConfig::small(1, 4), 3).unwrap();
        for (h, w) in [(8, 16), (16, 32), (9, 17)] {
            let y = net.infer(&ramp(h, w)).unwrap();
            assert_eq!(y.shape(), &[1, 1, 2 * h, w]);
        }
        assert!(matches!(
            net.infer(&ramp(6, 32)),
            Err(Error::InputTooSmall { h: 6, w: 32 })
        ));
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut net = Upsampler::build(UpsamplerConfig::small(1, 4), 3).unwrap();
        let shape = net.params.value("head.conv.weight").unwrap().shape().to_vec();
        net.params.set("head.conv.weight", Tensor::zeros(&shape)).unwrap();
        let y = net.infer(&ramp(8, 16)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        net.set_output_bias(12.5).unwrap();
        let y = net.infer(&ramp(8, 16)).unwrap();
        assert!(y.data().iter().all(|&v| v == 12.5));
    }

    #[test]
    fn eager_and_graph_agree() {
        let net = Upsampler::build(UpsamplerConfig::small(2, 4), 5).unwrap();
        let x = ramp(8, 16);
        for mode in [BnMode::Train, BnMode::Eval] {
            let (a, sa) = net.forward(&mut Eager, &x, mode).unwrap();
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (b, sb) = net.forward(&mut g, &xv, mode).unwrap();
            assert_eq!(&a, g.value(b));
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.lwt");
        let net = Upsampler::build(UpsamplerConfig::small(1, 4), 11).unwrap();
        net.save(&path).unwrap();
        let back = Upsampler::load(&path).unwrap();
        assert_eq!(back.config(), net.config());
        let x = ramp(8, 16);
        assert_eq!(net.infer(&x).unwrap(), back.infer(&x).unwrap());
        let again = dir.path().join("again.lwt");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.lwt");
        let net = Upsampler::build(UpsamplerConfig::small(1, 4), 11).unwrap();
        net.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(Upsampler::load(&path), Err(Error::CorruptFile(_))));

        let mut entries = read_lwt(&bytes[..]).unwrap();
        entries.push(LwtEntry {
            name: "block9.conv1.weight".into(),
            shape: vec![1],
            data: vec![0.0],
        });
        let mut buf = Vec::new();
        write_lwt(&mut buf, &entries).unwrap();
        std::fs::write(&path, buf).unwrap();
        match Upsampler::load(&path) {
            Err(Error::ShapeMismatchVsConfig { name }) => assert_eq!(name, "block9.conv1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
