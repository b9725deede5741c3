//! Cylindrical projection between point clouds and distance images.
//!
//! A scan grid is defined by an elevation table (one angle per layer) and a
//! uniform azimuth table. Cells without a return are tracked by an explicit
//! validity mask; the numeric proxy for missing cells is only introduced when
//! a raster is exported for the network (see [`to_network_raster`]).

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of semantic classes carried in label rasters.
pub const NUM_CLASSES: usize = 13;
/// Label id for cells without an annotation.
pub const IGNORE_ID: u8 = 255;

const AZIMUTH_UNIFORMITY_TOL: f64 = 1e-9;

/// The scan grid: per-layer elevation angles and per-column azimuth angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    elevations: Vec<f64>,
    azimuths: Vec<f64>,
    max_range: f64,
}

/// Which layers survive decimation, by 0-based row parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    #[default]
    Even,
    Odd,
}

impl Parity {
    fn keeps(self, row: usize) -> bool {
        match self {
            Parity::Even => row.is_multiple_of(2),
            Parity::Odd => row % 2 == 1,
        }
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Parity::Even),
            "odd" => Ok(Parity::Odd),
            other => Err(Error::BadConfig(format!("unknown parity `{other}`"))),
        }
    }
}

fn check_monotone(elevations: &[f64]) -> Result<()> {
    if elevations.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonMonotoneElevations);
    }
    if elevations.len() < 2 {
        return Ok(());
    }
    let increasing = elevations.windows(2).all(|w| w[1] > w[0]);
    let decreasing = elevations.windows(2).all(|w| w[1] < w[0]);
    if increasing || decreasing {
        Ok(())
    } else {
        Err(Error::NonMonotoneElevations)
    }
}

fn check_range(max_range: f64) -> Result<()> {
    if max_range.is_finite() && max_range > 0.0 {
        Ok(())
    } else {
        Err(Error::BadRange(format!("max_range must be positive, got {max_range}")))
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a
}

impl SensorGeometry {
    /// Builds a sensor with `azimuth_count` uniform columns starting at -π.
    ///
    /// The layer count must be even and at least two so that the grid can be
    /// decimated into a low-resolution counterpart.
    pub fn new(elevations: Vec<f64>, azimuth_count: usize, max_range: f64) -> Result<Self> {
        if elevations.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        check_monotone(&elevations)?;
        if elevations.len() < 2 || !elevations.len().is_multiple_of(2) {
            return Err(Error::OddLayerCount(elevations.len()));
        }
        if azimuth_count < 4 {
            return Err(Error::BadAzimuths(format!(
                "need at least 4 azimuth columns, got {azimuth_count}"
            )));
        }
        check_range(max_range)?;
        let step = 2.0 * PI / azimuth_count as f64;
        let azimuths = (0..azimuth_count).map(|j| -PI + step * j as f64).collect();
        Ok(Self {
            elevations,
            azimuths,
            max_range,
        })
    }

    /// Builds a geometry from explicit tables, e.g. ones read back from a file.
    ///
    /// Unlike [`SensorGeometry::new`] any positive layer count is accepted, since
    /// decimated grids may end up with an odd number of rows.
    pub fn from_tables(elevations: Vec<f64>, azimuths: Vec<f64>, max_range: f64) -> Result<Self> {
        if elevations.is_empty() || azimuths.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        check_monotone(&elevations)?;
        check_range(max_range)?;
        if azimuths.len() >= 2 {
            let step = azimuths[1] - azimuths[0];
            if !(step > 0.0) {
                return Err(Error::BadAzimuths("azimuths must strictly increase".into()));
            }
            for (j, a) in azimuths.iter().enumerate() {
                let expect = azimuths[0] + step * j as f64;
                if (a - expect).abs() > AZIMUTH_UNIFORMITY_TOL || !a.is_finite() {
                    return Err(Error::BadAzimuths(format!(
                        "column {j} deviates from uniform spacing"
                    )));
                }
            }
            if step * azimuths.len() as f64 > 2.0 * PI + AZIMUTH_UNIFORMITY_TOL {
                return Err(Error::BadAzimuths("azimuth span exceeds a full turn".into()));
            }
        }
        Ok(Self {
            elevations,
            azimuths,
            max_range,
        })
    }

    pub fn rows(&self) -> usize {
        self.elevations.len()
    }

    pub fn cols(&self) -> usize {
        self.azimuths.len()
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    /// Copy of this geometry with a different range limit.
    pub fn with_max_range(&self, max_range: f64) -> Result<Self> {
        check_range(max_range)?;
        Ok(Self {
            max_range,
            ..self.clone()
        })
    }

    pub fn azimuth_step(&self) -> f64 {
        if self.azimuths.len() >= 2 {
            self.azimuths[1] - self.azimuths[0]
        } else {
            2.0 * PI
        }
    }

    fn covers_full_turn(&self) -> bool {
        (self.azimuth_step() * self.cols() as f64 - 2.0 * PI).abs() < 1e-6
    }

    /// Unit direction of the beam for cell (`row`, `col`).
    pub fn ray(&self, row: usize, col: usize) -> [f64; 3] {
        let (st, ct) = self.elevations[row].sin_cos();
        let (sp, cp) = self.azimuths[col].sin_cos();
        [ct * cp, ct * sp, st]
    }

    /// Nearest layer for an elevation angle; ties resolve to the lower index.
    /// Angles more than half a layer spacing outside the table yield `None`.
    pub fn elevation_index(&self, theta: f64) -> Option<usize> {
        let e = &self.elevations;
        let (lo_idx, hi_idx) = if e[0] <= e[e.len() - 1] {
            (0, e.len() - 1)
        } else {
            (e.len() - 1, 0)
        };
        let (lo_margin, hi_margin) = if e.len() >= 2 {
            let lo_next = if lo_idx == 0 { 1 } else { lo_idx - 1 };
            let hi_next = if hi_idx == 0 { 1 } else { hi_idx - 1 };
            (
                0.5 * (e[lo_next] - e[lo_idx]).abs(),
                0.5 * (e[hi_idx] - e[hi_next]).abs(),
            )
        } else {
            (0.0, 0.0)
        };
        if theta < e[lo_idx] - lo_margin || theta > e[hi_idx] + hi_margin {
            return None;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &t) in e.iter().enumerate() {
            let d = (theta - t).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        Some(best)
    }

    /// Nearest column for an azimuth angle; exact half-way ties go to the lower index.
    pub fn azimuth_index(&self, phi: f64) -> Option<usize> {
        let w = self.cols();
        let step = self.azimuth_step();
        let u = wrap_angle(phi - self.azimuths[0]) / step;
        let k = u.floor();
        let frac = u - k;
        let mut idx = k as usize + usize::from(frac > 0.5);
        if self.covers_full_turn() {
            idx %= w;
        } else if idx >= w {
            // Below the first column, reached by wrapping around.
            let back = (2.0 * PI) / step - u;
            return if back <= 0.5 { Some(0) } else { None };
        }
        Some(idx)
    }

    /// Geometry restricted to rows of the given parity.
    pub fn decimated(&self, parity: Parity) -> Result<Self> {
        if !self.rows().is_multiple_of(2) {
            return Err(Error::OddLayerCount(self.rows()));
        }
        let elevations = self
            .elevations
            .iter()
            .enumerate()
            .filter(|(i, _)| parity.keeps(*i))
            .map(|(_, &e)| e)
            .collect();
        Ok(Self {
            elevations,
            azimuths: self.azimuths.clone(),
            max_range: self.max_range,
        })
    }

    /// Twice-as-dense layer table for a grid produced by even-parity decimation:
    /// original layers at even rows, midpoints at odd rows, the final row
    /// extrapolated by the last spacing.
    pub fn upsampled(&self) -> Result<Self> {
        let e = &self.elevations;
        if e.len() < 2 {
            return Err(Error::TooFewRows {
                rows: e.len(),
                needed: 2,
            });
        }
        let mut out = Vec::with_capacity(2 * e.len());
        for i in 0..e.len() {
            out.push(e[i]);
            if i + 1 < e.len() {
                out.push(0.5 * (e[i] + e[i + 1]));
            } else {
                out.push(e[i] + 0.5 * (e[i] - e[i - 1]));
            }
        }
        Ok(Self {
            elevations: out,
            azimuths: self.azimuths.clone(),
            max_range: self.max_range,
        })
    }
}

/// An L×W range raster with its validity mask and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceImage {
    geometry: Arc<SensorGeometry>,
    ranges: Vec<f64>,
    valid: Vec<bool>,
    labels: Option<Vec<u8>>,
}

impl DistanceImage {
    /// An image with every cell missing.
    pub fn empty(geometry: Arc<SensorGeometry>) -> Self {
        let n = geometry.rows() * geometry.cols();
        Self {
            geometry,
            ranges: vec![f64::NAN; n],
            valid: vec![false; n],
            labels: None,
        }
    }

    /// Assembles an image, checking every invariant. Ranges at invalid cells are
    /// ignored and stored as NaN.
    pub fn from_parts(
        geometry: Arc<SensorGeometry>,
        mut ranges: Vec<f64>,
        valid: Vec<bool>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = geometry.rows() * geometry.cols();
        if ranges.len() != n || valid.len() != n {
            return Err(Error::InvalidImage(format!(
                "raster has {} ranges / {} mask cells, geometry needs {n}",
                ranges.len(),
                valid.len()
            )));
        }
        let max = geometry.max_range();
        for (k, (r, &v)) in ranges.iter_mut().zip(&valid).enumerate() {
            if v {
                if !(*r > 0.0 && *r <= max) {
                    return Err(Error::InvalidImage(format!(
                        "cell {k}: valid range {r} outside (0, {max}]"
                    )));
                }
            } else {
                *r = f64::NAN;
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidImage("label raster size mismatch".into()));
            }
            if let Some(&bad) = l
                .iter()
                .find(|&&c| c as usize >= NUM_CLASSES && c != IGNORE_ID)
            {
                return Err(Error::BadClassId(bad));
            }
        }
        Ok(Self {
            geometry,
            ranges,
            valid,
            labels,
        })
    }

    /// Interprets a dense raster as a prediction: finite values in
    /// (0, max_range] are valid, everything else is missing.
    pub fn from_prediction(geometry: Arc<SensorGeometry>, raster: &[f64]) -> Result<Self> {
        let max = geometry.max_range();
        let valid = raster
            .iter()
            .map(|&r| r.is_finite() && r > 0.0 && r <= max)
            .collect();
        Self::from_parts(geometry, raster.to_vec(), valid, None)
    }

    pub fn geometry(&self) -> &Arc<SensorGeometry> {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols()
    }

    /// Row-major ranges; NaN at missing cells.
    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn range(&self, row: usize, col: usize) -> Option<f64> {
        let k = row * self.cols() + col;
        self.valid[k].then_some(self.ranges[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Replaces the label raster.
    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.ranges.len() {
                return Err(Error::InvalidImage("label raster size mismatch".into()));
            }
            if let Some(&bad) = l
                .iter()
                .find(|&&c| c as usize >= NUM_CLASSES && c != IGNORE_ID)
            {
                return Err(Error::BadClassId(bad));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Same data on a different (same-sized) geometry.
    pub fn with_geometry(self, geometry: Arc<SensorGeometry>) -> Result<Self> {
        if geometry.rows() != self.rows() || geometry.cols() != self.cols() {
            return Err(Error::InvalidImage(format!(
                "geometry {}x{} does not match image {}x{}",
                geometry.rows(),
                geometry.cols(),
                self.rows(),
                self.cols()
            )));
        }
        Self::from_parts(geometry, self.ranges, self.valid, self.labels)
    }
}

/// Cartesian points with optional grid provenance and class ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub provenance: Option<Vec<(u32, u32)>>,
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self {
            points,
            provenance: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Bins every point into its nearest (elevation, azimuth) cell.
///
/// When several points land in one cell the nearest one wins; equal ranges
/// are broken by coordinates so the result does not depend on point order.
/// Points outside the elevation fan or beyond the range limit are dropped.
pub fn project(cloud: &PointCloud, geometry: &Arc<SensorGeometry>) -> Result<DistanceImage> {
    let w = geometry.cols();
    let n = geometry.rows() * w;
    if n == 0 {
        return Err(Error::EmptyGeometry);
    }
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];
    for (idx, p) in cloud.points.iter().enumerate() {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinitePoint { index: idx });
        }
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return Err(Error::OriginPoint { index: idx });
        }
        if r > geometry.max_range() {
            continue;
        }
        let theta = p[2].atan2(p[0].hypot(p[1]));
        let phi = p[1].atan2(p[0]);
        let (Some(i), Some(j)) = (geometry.elevation_index(theta), geometry.azimuth_index(phi))
        else {
            continue;
        };
        let cell = &mut best[i * w + j];
        let wins = match *cell {
            None => true,
            Some((br, bidx)) => match r.total_cmp(&br) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => {
                    let q = &cloud.points[bidx];
                    let key = |v: &[f64; 3]| (v[0], v[1], v[2]);
                    let (a, b) = (key(p), key(q));
                    a.0.total_cmp(&b.0)
                        .then(a.1.total_cmp(&b.1))
                        .then(a.2.total_cmp(&b.2))
                        .is_lt()
                }
            },
        };
        if wins {
            *cell = Some((r, idx));
        }
    }
    let mut ranges = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    let mut labels = cloud.labels.as_ref().map(|_| vec![IGNORE_ID; n]);
    for (k, b) in best.iter().enumerate() {
        if let Some((r, idx)) = *b {
            ranges[k] = r;
            valid[k] = true;
            if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels.as_ref()) {
                out[k] = src[idx];
            }
        }
    }
    DistanceImage::from_parts(geometry.clone(), ranges, valid, labels)
}

/// Spherical-to-Cartesian reconstruction of every valid cell.
pub fn back_project(image: &DistanceImage) -> PointCloud {
    let g = image.geometry();
    let w = g.cols();
    let mut points = Vec::with_capacity(image.valid_count());
    let mut provenance = Vec::with_capacity(points.capacity());
    let mut labels = image.labels().map(|_| Vec::with_capacity(points.capacity()));
    for (k, &v) in image.valid().iter().enumerate() {
        if !v {
            continue;
        }
        let (i, j) = (k / w, k % w);
        let r = image.ranges()[k];
        let d = g.ray(i, j);
        points.push([r * d[0], r * d[1], r * d[2]]);
        provenance.push((i as u32, j as u32));
        if let (Some(out), Some(src)) = (labels.as_mut(), image.labels()) {
            out.push(src[k]);
        }
    }
    PointCloud {
        points,
        provenance: Some(provenance),
        labels,
    }
}

/// Drops every other layer, keeping the rows of the given parity.
pub fn decimate(image: &DistanceImage, parity: Parity) -> Result<DistanceImage> {
    let geometry = Arc::new(image.geometry().decimated(parity)?);
    let w = image.cols();
    let keep: Vec<usize> = (0..image.rows()).filter(|&i| parity.keeps(i)).collect();
    let pick = |src: &[f64]| -> Vec<f64> {
        keep.iter()
            .flat_map(|&i| src[i * w..(i + 1) * w].iter().copied())
            .collect()
    };
    let ranges = pick(image.ranges());
    let valid = keep
        .iter()
        .flat_map(|&i| image.valid()[i * w..(i + 1) * w].iter().copied())
        .collect();
    let labels = image.labels().map(|l| {
        keep.iter()
            .flat_map(|&i| l[i * w..(i + 1) * w].iter().copied())
            .collect()
    });
    DistanceImage::from_parts(geometry, ranges, valid, labels)
}

/// Dense row-major raster for the network: range in meters at valid cells,
/// exactly 0.0 at missing cells.
pub fn to_network_raster(image: &DistanceImage) -> Vec<f64> {
    image
        .ranges()
        .iter()
        .zip(image.valid())
        .map(|(&r, &v)| if v { r } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(rows: usize, cols: usize) -> Arc<SensorGeometry> {
        let e: Vec<f64> = (0..rows)
            .map(|i| -0.2 + 0.3 * i as f64 / (rows - 1) as f64)
            .collect();
        Arc::new(SensorGeometry::new(e, cols, 100.0).unwrap())
    }

    #[test]
    fn build_sensor_uniform_grid() {
        let g = geom(4, 16);
        assert_eq!((g.rows(), g.cols()), (4, 16));
        assert_eq!(g.azimuths()[0], -PI);
        assert!((g.azimuths()[8] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn build_sensor_rejects_bad_tables() {
        assert!(matches!(
            SensorGeometry::new(vec![0.1, 0.1, 0.2, 0.3], 16, 100.0),
            Err(Error::NonMonotoneElevations)
        ));
        assert!(matches!(
            SensorGeometry::new(vec![0.1, 0.2, 0.3], 16, 100.0),
            Err(Error::OddLayerCount(3))
        ));
        assert!(matches!(
            SensorGeometry::new(vec![0.1, 0.2], 16, 0.0),
            Err(Error::BadRange(_))
        ));
        assert!(SensorGeometry::new(vec![0.1, 0.2], 3, 10.0).is_err());
    }

    #[test]
    fn non_equidistant_layers_are_legal() {
        // denser near the horizon, decreasing order
        let e = vec![0.26, 0.1, 0.04, 0.01, -0.01, -0.04, -0.1, -0.4];
        assert!(SensorGeometry::new(e, 32, 200.0).is_ok());
    }

    #[test]
    fn project_empty_and_single_point() {
        let g = geom(4, 16);
        let img = project(&PointCloud::default(), &g).unwrap();
        assert_eq!(img.valid_count(), 0);

        // rows: -0.2, -0.1, 0.0, 0.1 ; column 8 is φ = 0
        let img = project(&PointCloud::new(vec![[10.0, 0.0, 0.0]]), &g).unwrap();
        assert_eq!(img.valid_count(), 1);
        assert_eq!(img.range(2, 8), Some(10.0));
    }

    #[test]
    fn nearest_point_wins() {
        let g = geom(4, 16);
        let cloud = PointCloud::new(vec![[12.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let img = project(&cloud, &g).unwrap();
        assert_eq!(img.range(2, 8), Some(10.0));
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn origin_point_rejected() {
        let g = geom(4, 16);
        let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert!(matches!(
            project(&cloud, &g),
            Err(Error::OriginPoint { index: 1 })
        ));
    }

    #[test]
    fn points_outside_fan_are_dropped() {
        let g = geom(4, 16);
        // elevation 0.5 rad is far above the top layer (0.1 + 0.05 margin)
        let p = [0.5f64.cos() * 10.0, 0.0, 0.5f64.sin() * 10.0];
        let img = project(&PointCloud::new(vec![p]), &g).unwrap();
        assert_eq!(img.valid_count(), 0);
    }

    #[test]
    fn azimuth_ties_go_low() {
        let g = geom(4, 16);
        let step = g.azimuth_step();
        let mid = g.azimuths()[3] + 0.5 * step;
        assert_eq!(g.azimuth_index(mid), Some(3));
        assert_eq!(g.azimuth_index(PI), Some(0));
        assert_eq!(g.azimuth_index(-PI), Some(0));
    }

    #[test]
    fn back_project_axis_aligned() {
        let g = geom(4, 16);
        let mut ranges = vec![0.0; 64];
        let mut valid = vec![false; 64];
        ranges[2 * 16 + 8] = 10.0;
        valid[2 * 16 + 8] = true;
        let img = DistanceImage::from_parts(g.clone(), ranges, valid, None).unwrap();
        let c = back_project(&img);
        assert_eq!(c.len(), 1);
        let p = c.points[0];
        assert!((p[0] - 10.0).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        assert_eq!(c.provenance.unwrap()[0], (2, 8));
        assert!(back_project(&DistanceImage::empty(g)).is_empty());
    }

    #[test]
    fn decimate_keeps_parity_rows() {
        let g = geom(4, 16);
        let ranges: Vec<f64> = (0..64).map(|k| (k / 16 + 1) as f64).collect();
        let img = DistanceImage::from_parts(g.clone(), ranges, vec![true; 64], None).unwrap();
        let low = decimate(&img, Parity::Even).unwrap();
        assert_eq!(low.rows(), 2);
        assert_eq!(low.range(0, 0), Some(1.0));
        assert_eq!(low.range(1, 5), Some(3.0));
        assert_eq!(low.geometry().elevations(), &[g.elevations()[0], g.elevations()[2]]);
        let odd = decimate(&img, Parity::Odd).unwrap();
        assert_eq!(odd.range(0, 0), Some(2.0));

        let g8 = geom(8, 16);
        let twice = decimate(&decimate(&DistanceImage::empty(g8.clone()), Parity::Even).unwrap(), Parity::Even).unwrap();
        assert_eq!(twice.rows(), 2);
        assert!(twice
            .geometry()
            .elevations()
            .iter()
            .all(|e| g8.elevations().contains(e)));
    }

    #[test]
    fn decimate_full_size_frame() {
        let e: Vec<f64> = (0..32).map(|i| -0.4 + 0.02 * i as f64).collect();
        let g = Arc::new(SensorGeometry::new(e, 1800, 120.0).unwrap());
        let low = decimate(&DistanceImage::empty(g), Parity::Even).unwrap();
        assert_eq!((low.rows(), low.cols()), (16, 1800));
    }

    #[test]
    fn decimate_rejects_odd_layer_count() {
        let g = Arc::new(SensorGeometry::from_tables(vec![0.0, 0.1, 0.2], vec![0.0, 1.0], 10.0).unwrap());
        assert!(matches!(
            decimate(&DistanceImage::empty(g), Parity::Even),
            Err(Error::OddLayerCount(3))
        ));
    }

    #[test]
    fn network_raster_uses_zero_proxy() {
        let e = vec![-0.1, 0.1];
        let g = Arc::new(SensorGeometry::from_tables(e, vec![0.0, 0.5], 10.0).unwrap());
        let img = DistanceImage::from_parts(
            g.clone(),
            vec![5.0, 9.0, 9.0, 9.0],
            vec![true, false, false, false],
            None,
        )
        .unwrap();
        assert_eq!(to_network_raster(&img), vec![5.0, 0.0, 0.0, 0.0]);

        let full = DistanceImage::from_parts(g.clone(), vec![0.3, 1.0, 2.0, 3.0], vec![true; 4], None).unwrap();
        assert_eq!(to_network_raster(&full), vec![0.3, 1.0, 2.0, 3.0]);

        // a zero range can never be valid
        assert!(DistanceImage::from_parts(g, vec![0.0; 4], vec![true; 4], None).is_err());
    }
}
