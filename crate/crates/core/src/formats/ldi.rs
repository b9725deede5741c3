//! `LDI1` distance-image files.
//!
//! ```text
//! "LDI1" | u32 L | u32 W | u32 flags
//!   [L × f32 elevations]   if flags & 1
//!   [W × f32 azimuths]     if flags & 2
//!   L·W × f32 ranges (row-major, NaN = missing)
//!   [L·W × u8 class ids]   if flags & 4   (255 = ignore)
//! ```

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DistanceImage, SensorGeometry};

const MAGIC: &[u8; 4] = b"LDI1";
const HAS_ELEVATIONS: u32 = 1;
const HAS_AZIMUTHS: u32 = 2;
const HAS_LABELS: u32 = 4;

/// Range limit assumed when a file carries its own tables but no geometry is supplied.
pub const DEFAULT_MAX_RANGE: f64 = 200.0;

pub fn write_ldi<W: Write>(mut w: W, image: &DistanceImage, include_tables: bool) -> Result<()> {
    let g = image.geometry();
    let mut flags = 0;
    if include_tables {
        flags |= HAS_ELEVATIONS | HAS_AZIMUTHS;
    }
    if image.labels().is_some() {
        flags |= HAS_LABELS;
    }
    let mut buf = Vec::with_capacity(16 + image.ranges().len() * 5);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(g.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(g.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&flags.to_le_bytes());
    if include_tables {
        for &e in g.elevations() {
            buf.extend_from_slice(&(e as f32).to_le_bytes());
        }
        for &a in g.azimuths() {
            buf.extend_from_slice(&(a as f32).to_le_bytes());
        }
    }
    for (&r, &v) in image.ranges().iter().zip(image.valid()) {
        let r = if v { r as f32 } else { f32::NAN };
        buf.extend_from_slice(&r.to_le_bytes());
    }
    if let Some(labels) = image.labels() {
        buf.extend_from_slice(labels);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
}

/// Rebuilds an exactly uniform azimuth table from single-precision values.
fn snap_azimuths(stored: &[f64]) -> Result<Vec<f64>> {
    let w = stored.len();
    if w < 2 {
        return Ok(stored.to_vec());
    }
    let full = 2.0 * PI / w as f64;
    let mean_step = (stored[w - 1] - stored[0]) / (w - 1) as f64;
    let step = if (mean_step - full).abs() < 1e-5 { full } else { mean_step };
    let start = if (stored[0] + PI).abs() < 1e-5 { -PI } else { stored[0] };
    let snapped: Vec<f64> = (0..w).map(|j| start + step * j as f64).collect();
    let worst = snapped
        .iter()
        .zip(stored)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > 1e-4 {
        return Err(Error::CorruptFile("azimuth table is not uniform".into()));
    }
    Ok(snapped)
}

/// Reads an image. Tables stored in the file take precedence; `geometry`
/// supplies whatever the file lacks (and the range limit).
pub fn read_ldi<R: Read>(mut r: R, geometry: Option<&Arc<SensorGeometry>>) -> Result<DistanceImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptFile("missing LDI1 header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (l, w, flags) = (word(0) as usize, word(1) as usize, word(2));
    if flags & !(HAS_ELEVATIONS | HAS_AZIMUTHS | HAS_LABELS) != 0 {
        return Err(Error::CorruptFile(format!("unknown flags {flags:#x}")));
    }
    let cells = l
        .checked_mul(w)
        .ok_or_else(|| Error::CorruptFile("grid too large".into()))?;
    let mut expected = 16 + cells * 4;
    if flags & HAS_ELEVATIONS != 0 {
        expected += l * 4;
    }
    if flags & HAS_AZIMUTHS != 0 {
        expected += w * 4;
    }
    if flags & HAS_LABELS != 0 {
        expected += cells;
    }
    if bytes.len() != expected {
        return Err(Error::CorruptFile(format!(
            "expected {expected} bytes for a {l}x{w} image, found {}",
            bytes.len()
        )));
    }
    let mut pos = 16;
    let mut section = |n: usize| {
        let s = &bytes[pos..pos + n];
        pos += n;
        s
    };
    let elevations: Option<Vec<f64>> =
        (flags & HAS_ELEVATIONS != 0).then(|| f32s(section(l * 4)).map(f64::from).collect());
    let azimuths: Option<Vec<f64>> =
        (flags & HAS_AZIMUTHS != 0).then(|| f32s(section(w * 4)).map(f64::from).collect());
    let ranges_raw = section(cells * 4);
    let labels = (flags & HAS_LABELS != 0).then(|| section(cells).to_vec());

    let geometry = match (elevations, azimuths, geometry) {
        (None, None, Some(g)) => {
            if g.rows() != l || g.cols() != w {
                return Err(Error::CorruptFile(format!(
                    "file is {l}x{w} but geometry is {}x{}",
                    g.rows(),
                    g.cols()
                )));
            }
            g.clone()
        }
        (e, a, g) => {
            let e = match (e, g) {
                (Some(e), _) => e,
                (None, Some(g)) if g.rows() == l => g.elevations().to_vec(),
                _ => return Err(Error::CorruptFile("no elevation table available".into())),
            };
            let a = match (a, g) {
                (Some(a), _) => snap_azimuths(&a)?,
                (None, Some(g)) if g.cols() == w => g.azimuths().to_vec(),
                _ => return Err(Error::CorruptFile("no azimuth table available".into())),
            };
            let max_range = g.map_or(DEFAULT_MAX_RANGE, |g| g.max_range());
            Arc::new(SensorGeometry::from_tables(e, a, max_range)?)
        }
    };

    let mut ranges = Vec::with_capacity(cells);
    let mut valid = Vec::with_capacity(cells);
    for r in f32s(ranges_raw) {
        let ok = r.is_finite();
        valid.push(ok);
        ranges.push(if ok { f64::from(r) } else { f64::NAN });
    }
    // A file may hold ranges beyond the assumed limit when no geometry was given.
    let max_seen = ranges
        .iter()
        .zip(&valid)
        .filter(|(_, &v)| v)
        .map(|(r, _)| *r)
        .fold(0.0, f64::max);
    let geometry = if max_seen > geometry.max_range() {
        Arc::new(geometry.with_max_range(max_seen)?)
    } else {
        geometry
    };
    DistanceImage::from_parts(geometry, ranges, valid, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> DistanceImage {
        let g = Arc::new(SensorGeometry::new(vec![-0.1, 0.0, 0.1, 0.2], 8, 50.0).unwrap());
        let ranges: Vec<f64> = (0..32).map(|k| 1.0 + k as f64 * 0.5).collect();
        let valid: Vec<bool> = (0..32).map(|k| k % 3 != 0).collect();
        let labels: Vec<u8> = (0..32).map(|k| if k % 5 == 0 { 255 } else { (k % 13) as u8 }).collect();
        DistanceImage::from_parts(g, ranges, valid, Some(labels)).unwrap()
    }

    #[test]
    fn header_and_nan_encoding() {
        let img = image();
        let mut buf = Vec::new();
        write_ldi(&mut buf, &img, false).unwrap();
        assert_eq!(&buf[..4], b"LDI1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        assert!(f32::from_le_bytes(buf[16..20].try_into().unwrap()).is_nan());
        assert_eq!(buf.len(), 16 + 32 * 4 + 32);
    }

    #[test]
    fn round_trip_with_and_without_tables() {
        let img = image();
        for tables in [true, false] {
            let mut buf = Vec::new();
            write_ldi(&mut buf, &img, tables).unwrap();
            let back = read_ldi(&buf[..], Some(img.geometry())).unwrap();
            assert_eq!(back.valid(), img.valid());
            assert_eq!(back.labels(), img.labels());
            for (a, b) in back.ranges().iter().zip(img.ranges()) {
                assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-5);
            }
            assert_eq!(back.geometry().azimuths(), img.geometry().azimuths());
        }
        let mut buf = Vec::new();
        write_ldi(&mut buf, &img, true).unwrap();
        let standalone = read_ldi(&buf[..], None).unwrap();
        assert_eq!(standalone.geometry().max_range(), DEFAULT_MAX_RANGE);
    }

    #[test]
    fn table_less_file_needs_geometry() {
        let mut buf = Vec::new();
        write_ldi(&mut buf, &image(), false).unwrap();
        assert!(matches!(read_ldi(&buf[..], None), Err(Error::CorruptFile(_))));
        assert!(read_ldi(&buf[..buf.len() - 1], Some(image().geometry())).is_err());
    }
}
