//! `LWT1` weight files: a flat list of named f32 tensors.
//!
//! ```text
//! "LWT1" | u32 count | count × { u16 name_len | name | u8 rank | rank × u32 dim | f32 data }
//! ```
//! All integers and floats are little-endian; data is row-major.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LWT1";

#[derive(Debug, Clone, PartialEq)]
pub struct LwtEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl LwtEntry {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

pub fn write_lwt<W: Write>(mut w: W, entries: &[LwtEntry]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::BadConfig(format!("tensor name too long: {}", e.name)))?;
        let rank = u8::try_from(e.shape.len())
            .map_err(|_| Error::BadConfig(format!("rank too large for `{}`", e.name)))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for &d in &e.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::BadConfig(format!("dimension too large in `{}`", e.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(e.data.len() * 4);
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptFile(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_lwt<R: Read>(mut r: R) -> Result<Vec<LwtEntry>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptFile("bad magic, expected LWT1".into()));
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap());
        let name = std::str::from_utf8(c.take(name_len as usize, "name")?)
            .map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::CorruptFile(format!("`{name}` is impossibly large")))?;
        let raw = c.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::CorruptFile(format!("`{name}` is impossibly large")))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(LwtEntry { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptFile("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let e = LwtEntry {
            name: "ab".into(),
            shape: vec![2],
            data: vec![1.0, -2.0],
        };
        let mut buf = Vec::new();
        write_lwt(&mut buf, std::slice::from_ref(&e)).unwrap();
        let mut expect = b"LWT1".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u16.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.push(1);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
        assert_eq!(read_lwt(&buf[..]).unwrap(), vec![e]);
    }

    #[test]
    fn truncation_is_corrupt() {
        let e = LwtEntry {
            name: "w".into(),
            shape: vec![3, 2],
            data: vec![0.5; 6],
        };
        let mut buf = Vec::new();
        write_lwt(&mut buf, &[e]).unwrap();
        for cut in [0, 3, 9, buf.len() - 1] {
            assert!(matches!(read_lwt(&buf[..cut]), Err(Error::CorruptFile(_))));
        }
    }
}
