//! Little-endian cursor helpers shared by the binary containers.

use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| CliError::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(CliError::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CliError::format(self.path, format!("length {v} out of range")))
    }

    /// Reads `n` f32 values widened to f64.
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| CliError::format(self.path, "array length overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}
