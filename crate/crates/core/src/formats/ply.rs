//! Binary little-endian PLY with float `x y z` and an optional `uchar class`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    let with_class = cloud.labels.is_some();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if with_class {
        header.push_str("property uchar class\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 13);
    for (k, p) in cloud.points.iter().enumerate() {
        for c in p {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(l) = &cloud.labels {
            buf.push(l[k]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, cloud)?;
    w.flush()?;
    Ok(())
}

/// Reads files written by [`write_ply`]. Other layouts are rejected.
pub fn read_ply<R: Read>(r: R) -> Result<PointCloud> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next = |r: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::CorruptFile("PLY header ended early".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next(&mut r)? != "ply" {
        return Err(Error::CorruptFile("not a PLY file".into()));
    }
    if next(&mut r)? != "format binary_little_endian 1.0" {
        return Err(Error::CorruptFile("only binary_little_endian 1.0 is supported".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let l = next(&mut r)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::CorruptFile(format!("bad vertex count `{n}`")))?,
                )
            }
            ["property", ty, name] => props.push(format!("{ty} {name}")),
            _ => return Err(Error::CorruptFile(format!("unsupported header line `{l}`"))),
        }
    }
    let count = count.ok_or_else(|| Error::CorruptFile("no vertex element".into()))?;
    let with_class = match props.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["float x", "float y", "float z"] => false,
        ["float x", "float y", "float z", "uchar class"] => true,
        _ => return Err(Error::CorruptFile(format!("unsupported properties {props:?}"))),
    };
    let stride = if with_class { 13 } else { 12 };
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * stride {
        return Err(Error::CorruptFile(format!(
            "expected {} vertex bytes, found {}",
            count * stride,
            body.len()
        )));
    }
    let mut points = Vec::with_capacity(count);
    let mut labels = with_class.then(|| Vec::with_capacity(count));
    for rec in body.chunks_exact(stride) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        points.push([f(0), f(1), f(2)]);
        if let Some(l) = labels.as_mut() {
            l.push(rec[12]);
        }
    }
    let mut cloud = PointCloud::new(points);
    cloud.labels = labels;
    Ok(cloud)
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    read_ply(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_labels() {
        let mut cloud = PointCloud::new(vec![[1.0, 2.0, 3.0], [-0.5, 0.25, 8.0]]);
        cloud.labels = Some(vec![4, 255]);
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\nelement vertex 2\n"));
        assert!(text.contains("property uchar class\nend_header\n"));
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.labels, cloud.labels);
    }

    #[test]
    fn empty_cloud_without_labels() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &PointCloud::new(vec![])).unwrap();
        let back = read_ply(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert!(back.labels.is_none());
        assert!(read_ply(&buf[..buf.len() - 3]).is_err());
    }
}
