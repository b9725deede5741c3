//! Raw Velodyne `.bin` scans: consecutive `f32` little-endian `(x, y, z, reflectance)` records.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{project, DistanceImage, PointCloud, SensorGeometry};

const RECORD: usize = 16;

/// Decodes records into points, dropping reflectance. Returns the raw points in file order.
pub fn parse_bin(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::MalformedFile(format!(
            "{} bytes is not a whole number of {RECORD}-byte records",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(RECORD)
        .map(|r| {
            let f = |k: usize| f32::from_le_bytes(r[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            [f(0), f(1), f(2)]
        })
        .collect())
}

/// Reads a scan and projects it. Returns at the exact origin carry no
/// direction and are skipped, as are non-finite records.
pub fn ingest_bin(path: &Path, geometry: &Arc<SensorGeometry>) -> Result<DistanceImage> {
    let bytes = std::fs::read(path)?;
    let points = parse_bin(&bytes)?
        .into_iter()
        .filter(|p| p.iter().all(|c| c.is_finite()) && p.iter().any(|&c| c != 0.0))
        .collect();
    project(&PointCloud::new(points), geometry)
}
