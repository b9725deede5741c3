//! On-disk formats: distance images, weights, point clouds and raw scans.

pub mod kitti;
pub mod ldi;
pub mod lwt;
pub mod ply;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::geometry::{DistanceImage, SensorGeometry};

pub use kitti::{ingest_bin, parse_bin};
pub use ldi::{read_ldi, write_ldi};
pub use lwt::{read_lwt, write_lwt, LwtEntry};
pub use ply::{read_ply, write_ply};

pub fn save_ldi(path: &Path, image: &DistanceImage, include_tables: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ldi(&mut w, image, include_tables)?;
    w.flush()?;
    Ok(())
}

pub fn load_ldi(path: &Path, geometry: Option<&Arc<SensorGeometry>>) -> Result<DistanceImage> {
    read_ldi(BufReader::new(File::open(path)?), geometry)
}
