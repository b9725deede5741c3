//! Classical vertical interpolation of distance images.
//!
//! Output row `2i` is input row `i`. Row `2i + 1` is interpolated per column
//! from the surrounding input rows; if any row it draws on is missing at that
//! column, the inserted cell is missing too. The final output row has no
//! lower neighbour and repeats the last input row.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DistanceImage, SensorGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Interpolation {
    pub const ALL: [Interpolation; 3] = [Self::Nearest, Self::Bilinear, Self::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        }
    }

    pub fn min_rows(self) -> usize {
        match self {
            Self::Bicubic => 4,
            _ => 2,
        }
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown interpolation `{s}`")))
    }
}

/// Catmull-Rom weights for the midpoint between the two centre taps.
const CUBIC_MID: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];

/// Doubles the row count of `low`. The result lives on `target` when given,
/// otherwise on the input grid with midpoint layers inserted.
pub fn interpolate(
    low: &DistanceImage,
    method: Interpolation,
    target: Option<Arc<SensorGeometry>>,
) -> Result<DistanceImage> {
    let (rows, cols) = (low.rows(), low.cols());
    if rows < method.min_rows() {
        return Err(Error::TooFewRows {
            rows,
            needed: method.min_rows(),
        });
    }
    let geometry = match target {
        Some(g) => g,
        None => Arc::new(low.geometry().upsampled()?),
    };
    if geometry.rows() != 2 * rows || geometry.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "target grid {}x{} is not twice the rows of {rows}x{cols}",
            geometry.rows(),
            geometry.cols()
        )));
    }
    let src = |i: usize, j: usize| low.range(i, j);
    let max = geometry.max_range();
    let mut ranges = vec![f64::NAN; 2 * rows * cols];
    let mut valid = vec![false; 2 * rows * cols];
    let mut put = |row: usize, j: usize, v: Option<f64>| {
        if let Some(r) = v.filter(|r| *r > 0.0 && *r <= max) {
            ranges[row * cols + j] = r;
            valid[row * cols + j] = true;
        }
    };
    for i in 0..rows {
        for j in 0..cols {
            put(2 * i, j, src(i, j));
            let inserted = if i + 1 == rows {
                src(i, j)
            } else {
                match method {
                    Interpolation::Nearest => src(i + 1, j).and(src(i, j)),
                    Interpolation::Bilinear => match (src(i, j), src(i + 1, j)) {
                        (Some(a), Some(b)) => Some(0.5 * (a + b)),
                        _ => None,
                    },
                    Interpolation::Bicubic => {
                        let taps = [i.saturating_sub(1), i, i + 1, (i + 2).min(rows - 1)];
                        let mut acc = 0.0;
                        let mut all = true;
                        for (w, &r) in CUBIC_MID.iter().zip(&taps) {
                            match src(r, j) {
                                Some(v) => acc += w * v,
                                None => all = false,
                            }
                        }
                        all.then_some(acc)
                    }
                }
            };
            put(2 * i + 1, j, inserted);
        }
    }
    DistanceImage::from_parts(geometry, ranges, valid, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[Option<f64>]) -> DistanceImage {
        let l = values.len();
        let elev: Vec<f64> = (0..l).map(|i| -0.2 + 0.02 * i as f64).collect();
        let g = Arc::new(SensorGeometry::from_tables(elev, vec![0.0], 100.0).unwrap());
        let ranges = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let valid = values.iter().map(Option::is_some).collect();
        DistanceImage::from_parts(g, ranges, valid, None).unwrap()
    }

    fn rows(img: &DistanceImage) -> Vec<Option<f64>> {
        (0..img.rows()).map(|i| img.range(i, 0)).collect()
    }

    #[test]
    fn two_row_hand_values() {
        let low = column(&[Some(2.0), Some(4.0)]);
        let bil = interpolate(&low, Interpolation::Bilinear, None).unwrap();
        assert_eq!(rows(&bil), vec![Some(2.0), Some(3.0), Some(4.0), Some(4.0)]);
        let near = interpolate(&low, Interpolation::Nearest, None).unwrap();
        assert_eq!(rows(&near), vec![Some(2.0), Some(2.0), Some(4.0), Some(4.0)]);
        assert!(matches!(
            interpolate(&low, Interpolation::Bicubic, None),
            Err(Error::TooFewRows { rows: 2, needed: 4 })
        ));
    }

    #[test]
    fn bicubic_is_exact_on_cubics() {
        let f = |x: f64| 10.0 + 0.5 * x + 0.1 * x * x - 0.01 * x * x * x;
        let low = column(&(0..6).map(|i| Some(f(i as f64))).collect::<Vec<_>>());
        let out = interpolate(&low, Interpolation::Bicubic, None).unwrap();
        // Interior midpoints with all four taps in range.
        for i in 1..4 {
            let got = out.range(2 * i + 1, 0).unwrap();
            assert!((got - f(i as f64 + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_support_propagates() {
        let low = column(&[Some(2.0), None, Some(6.0), Some(8.0)]);
        for m in Interpolation::ALL {
            let out = interpolate(&low, m, None).unwrap();
            assert_eq!(out.range(1, 0), None, "{m:?}");
            assert_eq!(out.range(3, 0), None, "{m:?}");
            assert_eq!(out.range(7, 0), Some(8.0), "{m:?}");
        }
    }

    #[test]
    fn parse_names() {
        for m in Interpolation::ALL {
            assert_eq!(m.name().parse::<Interpolation>().unwrap(), m);
        }
        assert!("cubic".parse::<Interpolation>().is_err());
    }
}
