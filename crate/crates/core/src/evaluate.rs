//! Test-set evaluation of an up-sampling method.

use crate::baselines::{interpolate, Interpolation};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::{to_network_raster, DistanceImage, IGNORE_ID};
use crate::metrics::{Confusion, ErrorSums, MetricsReport};
use crate::nets::Extractor;
use crate::nets::Upsampler;
use crate::par;
use crate::tensor::Tensor;

/// Something that turns a low-resolution scan into a high-resolution one.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    /// Returns the target itself.
    GroundTruth,
    Interpolation(Interpolation),
    Network(&'a Upsampler),
}

impl Candidate<'_> {
    /// Prediction for one sample on the sample's high-resolution grid.
    pub fn predict(&self, s: &Sample) -> Result<DistanceImage> {
        let grid = Some(s.high.geometry().clone());
        match self {
            Candidate::GroundTruth => Ok(s.high.clone()),
            Candidate::Interpolation(m) => interpolate(&s.low, *m, grid),
            Candidate::Network(net) => net.upsample(&s.low, grid),
        }
    }
}

/// Semantic labels the extractor assigns to a distance image.
pub fn segment(extractor: &Extractor, image: &DistanceImage) -> Result<Vec<u8>> {
    let raster = to_network_raster(image);
    let x = Tensor::from_rasters(&[&raster], image.rows(), image.cols())?;
    extractor.predict_labels(&x)
}

/// Pooled masked MAE/MSE over the test set and, with an extractor, the mIoU
/// of its labels on the predictions against the ground-truth labels.
pub fn evaluate(test: &[Sample], candidate: Candidate<'_>, extractor: Option<&Extractor>) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_frame = par::map(test, |s| -> Result<(ErrorSums, Option<Confusion>)> {
        let pred = candidate.predict(s)?;
        let mut errors = ErrorSums::default();
        errors.add_images(&pred, &s.high)?;
        let confusion = match extractor {
            Some(ex) => {
                let gt = s.labels().ok_or(Error::MissingLabels)?;
                let mut c = Confusion::new(ex.config().num_classes, IGNORE_ID);
                c.add(&segment(ex, &pred)?, gt)?;
                Some(c)
            }
            None => None,
        };
        Ok((errors, confusion))
    });
    let mut errors = ErrorSums::default();
    let mut confusion: Option<Confusion> = None;
    for r in per_frame {
        let (e, c) = r?;
        errors.merge(&e);
        if let Some(c) = c {
            match confusion.as_mut() {
                Some(total) => total.merge(&c),
                None => confusion = Some(c),
            }
        }
    }
    let (mse, mae) = errors.finish()?;
    Ok(MetricsReport {
        mse,
        mae,
        miou: confusion.as_ref().and_then(Confusion::miou),
        per_class_iou: confusion.map(|c| c.per_class_iou()).unwrap_or_default(),
        frames: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{samples, simulate_frames};
    use crate::nets::ExtractorConfig;
    use crate::sim::default_geometry;
    use std::sync::Arc;

    #[test]
    fn ground_truth_has_zero_error() {
        let g = Arc::new(default_geometry());
        let test = samples(&simulate_frames(0..3, &g).unwrap()).unwrap();
        let ex = Extractor::build(ExtractorConfig::with_filters(vec![4, 4, 4, 4, 4]), 1).unwrap();
        let r = evaluate(&test, Candidate::GroundTruth, Some(&ex)).unwrap();
        assert_eq!((r.mae, r.mse, r.frames), (0.0, 0.0, 3));
        // The extractor scored on the targets themselves.
        let mut c = Confusion::new(13, IGNORE_ID);
        for s in &test {
            c.add(&segment(&ex, &s.high).unwrap(), s.labels().unwrap()).unwrap();
        }
        assert_eq!(r.miou, c.miou());
        assert_eq!(r.per_class_iou.len(), 13);
    }

    #[test]
    fn interpolation_report_round_trips() {
        let g = Arc::new(default_geometry());
        let test = samples(&simulate_frames(5..7, &g).unwrap()).unwrap();
        let r = evaluate(&test, Candidate::Interpolation(Interpolation::Bilinear), None).unwrap();
        assert!(r.mae > 0.0 && r.miou.is_none() && r.per_class_iou.is_empty());
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(matches!(evaluate(&[], Candidate::GroundTruth, None), Err(Error::EmptyDataset)));
    }
}
