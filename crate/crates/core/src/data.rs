//! Training pairs, synthetic datasets and seed-range splits.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decimate, to_network_raster, DistanceImage, Parity, SensorGeometry};
use crate::par;
use crate::sim::{simulate_scene, SceneSpec};
use crate::tensor::Tensor;

/// Low-resolution input (even rows kept) and the untouched high-resolution target.
pub fn make_pair(high: &DistanceImage) -> Result<(DistanceImage, DistanceImage)> {
    Ok((decimate(high, Parity::Even)?, high.clone()))
}

/// A pair in the form consumed by training: dense rasters plus the target mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub low: DistanceImage,
    pub high: DistanceImage,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn from_high(high: &DistanceImage) -> Result<Self> {
        let (low, high) = make_pair(high)?;
        Ok(Self {
            input: to_network_raster(&low),
            target: to_network_raster(&high),
            mask: high.valid().to_vec(),
            low,
            high,
        })
    }

    pub fn low_dims(&self) -> (usize, usize) {
        (self.low.rows(), self.low.cols())
    }

    pub fn high_dims(&self) -> (usize, usize) {
        (self.high.rows(), self.high.cols())
    }

    /// Ground-truth labels on the high-resolution grid.
    pub fn labels(&self) -> Option<&[u8]> {
        self.high.labels()
    }
}

/// Stacks input rasters of the chosen samples into an N×1×H×W tensor.
pub fn batch_inputs(samples: &[&Sample]) -> Result<Tensor> {
    let (h, w) = samples.first().ok_or(Error::EmptyDataset)?.low_dims();
    let rasters: Vec<&[f64]> = samples.iter().map(|s| s.input.as_slice()).collect();
    Tensor::from_rasters(&rasters, h, w)
}

pub fn batch_targets(samples: &[&Sample]) -> Result<Tensor> {
    let (h, w) = samples.first().ok_or(Error::EmptyDataset)?.high_dims();
    let rasters: Vec<&[f64]> = samples.iter().map(|s| s.target.as_slice()).collect();
    Tensor::from_rasters(&rasters, h, w)
}

/// Fractions of scenes assigned to training, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.62,
            val: 0.13,
            test: 0.25,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::BadConfig("split fractions must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// Consecutive seed ranges starting at `first` for `n` scenes.
    pub fn seed_ranges(&self, first: u64, n: u64) -> Result<[Range<u64>; 3]> {
        self.validate()?;
        let train = (self.train * n as f64).round() as u64;
        let val = ((self.val * n as f64).round() as u64).min(n - train);
        let a = first + train;
        let b = a + val;
        Ok([first..a, a..b, b..first + n])
    }
}

/// Simulates one frame per scene seed.
pub fn simulate_frames(seeds: Range<u64>, geometry: &Arc<SensorGeometry>) -> Result<Vec<DistanceImage>> {
    let seeds: Vec<u64> = seeds.collect();
    par::map(&seeds, |&s| simulate_scene(&SceneSpec::random_street(s), geometry))
        .into_iter()
        .collect()
}

pub fn samples(frames: &[DistanceImage]) -> Result<Vec<Sample>> {
    frames.iter().map(Sample::from_high).collect()
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Simulates `n` scenes from seed `first` and splits them by seed range.
pub fn synthetic_splits(
    first: u64,
    n: u64,
    fractions: SplitFractions,
    geometry: &Arc<SensorGeometry>,
) -> Result<Splits> {
    let [a, b, c] = fractions.seed_ranges(first, n)?;
    Ok(Splits {
        train: samples(&simulate_frames(a, geometry)?)?,
        val: samples(&simulate_frames(b, geometry)?)?,
        test: samples(&simulate_frames(c, geometry)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_geometry;

    #[test]
    fn pair_keeps_even_rows() {
        let g = Arc::new(default_geometry());
        let high = simulate_scene(&SceneSpec::random_street(1), &g).unwrap();
        let (low, target) = make_pair(&high).unwrap();
        assert_eq!((low.rows(), target.rows()), (16, 32));
        for i in 0..16 {
            for j in 0..128 {
                assert_eq!(
                    low.range(i, j).map(f64::to_bits),
                    high.range(2 * i, j).map(f64::to_bits)
                );
            }
        }
        let (lower, _) = make_pair(&low).unwrap();
        assert_eq!(lower.rows(), 8);
    }

    #[test]
    fn split_ranges_partition_seeds() {
        let [a, b, c] = SplitFractions::default().seed_ranges(10, 100).unwrap();
        assert_eq!((a.clone(), b.clone(), c.clone()), (10..72, 72..85, 85..110));
        let bad = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(bad.seed_ranges(0, 10).is_err());
    }
}
