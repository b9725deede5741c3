//! Evaluation metrics: masked range errors, class IoU and opinion-score aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::geometry::DistanceImage;

/// Running sums of range errors over cells valid in both images.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub abs: f64,
    pub sq: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn add_images(&mut self, pred: &DistanceImage, gt: &DistanceImage) -> Result<()> {
        if pred.rows() != gt.rows() || pred.cols() != gt.cols() {
            return Err(shape_err(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.rows(),
                pred.cols(),
                gt.rows(),
                gt.cols()
            )));
        }
        self.add(pred.ranges(), pred.valid(), gt.ranges(), gt.valid());
        Ok(())
    }

    pub fn add(&mut self, pred: &[f64], pred_valid: &[bool], gt: &[f64], gt_valid: &[bool]) {
        for k in 0..gt.len() {
            if gt_valid[k] && pred_valid[k] {
                let d = pred[k] - gt[k];
                self.abs += d.abs();
                self.sq += d * d;
                self.count += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.abs += other.abs;
        self.sq += other.sq;
        self.count += other.count;
    }

    /// `(mse, mae)`.
    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.count == 0 {
            return Err(Error::EmptyOverlap);
        }
        let n = self.count as f64;
        Ok((self.sq / n, self.abs / n))
    }
}

/// Mean squared and mean absolute error over cells valid in both images.
pub fn masked_errors(pred: &DistanceImage, gt: &DistanceImage) -> Result<(f64, f64)> {
    let mut s = ErrorSums::default();
    s.add_images(pred, gt)?;
    s.finish()
}

/// Confusion counts per class for IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    ignore: u8,
}

impl Confusion {
    pub fn new(num_classes: usize, ignore: u8) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            ignore,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds cells whose ground truth is not the ignore id.
    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(shape_err(format!("{} predicted labels vs {} ground-truth", pred.len(), gt.len())));
        }
        let n = self.num_classes();
        for (&p, &g) in pred.iter().zip(gt) {
            if g == self.ignore {
                continue;
            }
            if g as usize >= n {
                return Err(Error::BadClassId(g));
            }
            if p as usize >= n {
                return Err(Error::BadClassId(p));
            }
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fn_[g as usize] += 1;
                self.fp[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// IoU per class; `None` where a class appears in neither prediction nor ground truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (union > 0).then(|| self.tp[c] as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with a non-empty union; `None` if there are none.
    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
}

pub fn miou(pred: &[u8], gt: &[u8], num_classes: usize, ignore: u8) -> Result<MiouReport> {
    let mut c = Confusion::new(num_classes, ignore);
    c.add(pred, gt)?;
    Ok(MiouReport {
        miou: c.miou(),
        per_class_iou: c.per_class_iou(),
    })
}

/// Test-set summary written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub frames: usize,
}

/// One blinded judgment of one rendered scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject: String,
    pub scene: String,
    /// Blinded method token, or the method name once de-blinded.
    pub alias: String,
    pub score: u8,
    #[serde(default)]
    pub timestamp: String,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.score) {
            return Err(Error::BadScore(self.score));
        }
        Ok(())
    }
}

/// Parses JSON lines; blank lines and lines starting with `#` are skipped.
pub fn parse_ratings(text: &str) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let r: RatingRecord = serde_json::from_str(line)?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_ratings(records: &[RatingRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    /// Vote counts for scores 1 through 5.
    pub distribution: [usize; 5],
    pub mean: f64,
    pub votes: usize,
}

/// A subject × scene × method combination without a vote.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingVote {
    pub subject: String,
    pub scene: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MosReport {
    pub methods: BTreeMap<String, MethodScores>,
    pub missing: Vec<MissingVote>,
    /// Subjects with at least one missing vote.
    pub incomplete_subjects: Vec<String>,
}

/// Per-method score distribution and mean. The completeness check spans
/// every subject, scene and method that appears anywhere in the records.
pub fn mos_aggregate(records: &[RatingRecord]) -> Result<MosReport> {
    let mut seen = BTreeSet::new();
    let mut per_method: BTreeMap<String, [usize; 5]> = BTreeMap::new();
    let (mut subjects, mut scenes) = (BTreeSet::new(), BTreeSet::new());
    for r in records {
        r.validate()?;
        if !seen.insert((r.subject.as_str(), r.scene.as_str(), r.alias.as_str())) {
            return Err(Error::DuplicateVote {
                subject: r.subject.clone(),
                scene: r.scene.clone(),
                method: r.alias.clone(),
            });
        }
        per_method.entry(r.alias.clone()).or_default()[r.score as usize - 1] += 1;
        subjects.insert(r.subject.as_str());
        scenes.insert(r.scene.as_str());
    }
    let mut missing = Vec::new();
    for &subject in &subjects {
        for &scene in &scenes {
            for method in per_method.keys() {
                if !seen.contains(&(subject, scene, method.as_str())) {
                    missing.push(MissingVote {
                        subject: subject.to_string(),
                        scene: scene.to_string(),
                        method: method.clone(),
                    });
                }
            }
        }
    }
    let incomplete_subjects: BTreeSet<String> = missing.iter().map(|m| m.subject.clone()).collect();
    let methods = per_method
        .into_iter()
        .map(|(m, distribution)| {
            let votes: usize = distribution.iter().sum();
            let total: usize = distribution.iter().enumerate().map(|(k, &c)| (k + 1) * c).sum();
            let scores = MethodScores {
                distribution,
                mean: total as f64 / votes as f64,
                votes,
            };
            (m, scores)
        })
        .collect();
    Ok(MosReport {
        methods,
        missing,
        incomplete_subjects: incomplete_subjects.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SensorGeometry;
    use std::sync::Arc;

    fn img(vals: &[Option<f64>]) -> DistanceImage {
        let g = Arc::new(SensorGeometry::new(vec![0.0, 0.1], vals.len() / 2, 100.0).unwrap());
        DistanceImage::from_parts(
            g,
            vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            vals.iter().map(Option::is_some).collect(),
            None,
        )
        .unwrap()
    }

    fn vote(subject: &str, scene: &str, alias: &str, score: u8) -> RatingRecord {
        RatingRecord {
            subject: subject.into(),
            scene: scene.into(),
            alias: alias.into(),
            score,
            timestamp: String::new(),
        }
    }

    #[test]
    fn error_hand_values() {
        let gt = img(&[Some(1.0), Some(2.0), Some(3.0), None, Some(5.0), Some(6.0), Some(7.0), Some(8.0)]);
        assert_eq!(masked_errors(&gt, &gt).unwrap(), (0.0, 0.0));
        let pred = img(&[Some(3.0), Some(2.0), Some(3.0), Some(9.0), None, Some(6.0), Some(7.0), Some(8.0)]);
        // Overlap excludes cell 3 (gt missing) and 4 (prediction missing); one Δ = 2.
        let (mse, mae) = masked_errors(&pred, &gt).unwrap();
        assert!((mse - 4.0 / 6.0).abs() < 1e-15 && (mae - 2.0 / 6.0).abs() < 1e-15);
        let none = img(&[None; 8]);
        assert!(matches!(masked_errors(&none, &gt), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn single_cell_delta() {
        let mut gt = vec![None; 8];
        let mut pred = vec![None; 8];
        gt[0] = Some(5.0);
        pred[0] = Some(7.0);
        let (gt, pred) = (img(&gt), img(&pred));
        assert_eq!(masked_errors(&pred, &gt).unwrap(), (4.0, 2.0));
    }

    #[test]
    fn iou_hand_values() {
        let gt = [0, 1, 2, 3];
        assert_eq!(miou(&gt, &gt, 13, 255).unwrap().miou, Some(1.0));
        // TP=3, FP=1, FN=1 for both classes.
        let gt = [0, 0, 0, 0, 1, 1, 1, 1];
        let pred = [0, 0, 0, 1, 1, 1, 1, 0];
        let r = miou(&pred, &gt, 2, 255).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.6), Some(0.6)]);
        assert!((r.miou.unwrap() - 0.6).abs() < 1e-15);
        let r = miou(&[0; 8], &gt, 13, 255).unwrap();
        assert_eq!(r.miou, Some(0.25));
        assert_eq!(r.per_class_iou[2], None);
        assert!(matches!(miou(&[0], &[14], 13, 255), Err(Error::BadClassId(14))));
        assert_eq!(miou(&[3], &[255], 13, 255).unwrap().miou, None);
    }

    #[test]
    fn mos_hand_values() {
        let recs: Vec<_> = [5, 5, 4, 4]
            .iter()
            .enumerate()
            .map(|(k, &s)| vote(&format!("s{k}"), "a", "m", s))
            .collect();
        let r = mos_aggregate(&recs).unwrap();
        let m = &r.methods["m"];
        assert_eq!(m.mean, 4.5);
        assert_eq!(m.distribution, [0, 0, 0, 2, 2]);
        assert_eq!(m.votes, 4);
        assert!(r.missing.is_empty());
        assert_eq!(mos_aggregate(&[]).unwrap(), MosReport::default());
    }

    #[test]
    fn mos_duplicates_and_holes() {
        let dup = [vote("s", "a", "m", 3), vote("s", "a", "m", 4)];
        match mos_aggregate(&dup) {
            Err(Error::DuplicateVote { subject, scene, method }) => {
                assert_eq!((subject.as_str(), scene.as_str(), method.as_str()), ("s", "a", "m"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let holes = [vote("s1", "a", "m", 3), vote("s1", "a", "n", 3), vote("s2", "a", "m", 3)];
        let r = mos_aggregate(&holes).unwrap();
        assert_eq!(
            r.missing,
            vec![MissingVote {
                subject: "s2".into(),
                scene: "a".into(),
                method: "n".into()
            }]
        );
        assert_eq!(r.incomplete_subjects, vec!["s2".to_string()]);
        assert!(matches!(mos_aggregate(&[vote("s", "a", "m", 6)]), Err(Error::BadScore(6))));
    }

    #[test]
    fn ratings_lines_round_trip() {
        let recs = vec![vote("s1", "a", "x1", 2), vote("s2", "b", "x2", 5)];
        let text = format!("# partial session\n{}\n", write_ratings(&recs).unwrap());
        assert_eq!(parse_ratings(&text).unwrap(), recs);
        assert!(parse_ratings("{\"subject\":\"s\"}").is_err());
    }
}
