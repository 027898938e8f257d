//! `MDB1` checkpoint files.
//!
//! Layout (little-endian): the magic `MDB1`, then two sections, parameters
//! followed by optimizer state. Each section is a `u32` entry count and, per
//! entry, a `u32` name length, the UTF-8 name, a `u32` rank, `rank` × `u32`
//! dims and `f32` values.

use std::io::{Read, Write};

use super::AutodiffError;

const MAGIC: &[u8; 4] = b"MDB1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl CheckpointEntry {
    pub fn from_f64(name: impl Into<String>, shape: &[usize], values: &[f64]) -> Self {
        CheckpointEntry {
            name: name.into(),
            shape: shape.to_vec(),
            values: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<CheckpointEntry>,
    pub optimizer: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&CheckpointEntry> {
        self.params.iter().find(|e| e.name == name)
    }
}

fn write_section<W: Write>(w: &mut W, entries: &[CheckpointEntry]) -> std::io::Result<()> {
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), AutodiffError> {
    for e in ckpt.params.iter().chain(&ckpt.optimizer) {
        if e.values.len() != e.shape.iter().product::<usize>() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "checkpoint entry `{}` length disagrees with shape",
                e.name
            )));
        }
    }
    w.write_all(MAGIC)?;
    write_section(&mut w, &ckpt.params)?;
    write_section(&mut w, &ckpt.optimizer)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], AutodiffError> {
        if self.buf.len() - self.pos < n {
            return Err(AutodiffError::FormatViolation(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<Vec<CheckpointEntry>, AutodiffError> {
        let count = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| AutodiffError::FormatViolation("entry name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(
                n.checked_mul(4)
                    .ok_or_else(|| AutodiffError::FormatViolation("entry too large".into()))?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push(CheckpointEntry { name, shape, values });
        }
        Ok(out)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, AutodiffError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)
        .map_err(|_| AutodiffError::FormatViolation("missing magic".into()))?
        != MAGIC
    {
        return Err(AutodiffError::FormatViolation("bad magic, expected MDB1".into()));
    }
    let params = c.section()?;
    let optimizer = c.section()?;
    if c.pos != buf.len() {
        return Err(AutodiffError::FormatViolation(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    Ok(Checkpoint { params, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: vec![
                CheckpointEntry::from_f64("conv.weight", &[2, 1, 1, 1, 1], &[0.5, -1.25]),
                CheckpointEntry::from_f64("bn.scale", &[2], &[1.0, 1.0]),
            ],
            optimizer: vec![CheckpointEntry::from_f64("step", &[1], &[3.0])],
        }
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"MDB1");
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn truncated_and_bad_magic_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(AutodiffError::FormatViolation(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&bad[..]),
            Err(AutodiffError::FormatViolation(_))
        ));
    }
}
