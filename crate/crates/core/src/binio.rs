//! Little-endian helpers shared by the binary file formats.

use crate::error::{HegError, Result};

/// Cursor over an in-memory file that reports the byte offset of any
/// truncation or malformed field.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> HegError {
        HegError::Format {
            offset: self.offset(),
            message: message.into(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: expected {n} bytes, found {}",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(HegError::Format {
                offset: start as u64,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// A u64 count or index that must fit in memory.
    pub fn usize(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| HegError::Format {
            offset: start as u64,
            message: format!("{what} {v} does not fit in usize"),
        })
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// Checks that `count` items of `item_size` bytes are present before any
    /// allocation sized by an untrusted count.
    pub fn require(&self, count: usize, item_size: usize, what: &str) -> Result<()> {
        let need = count
            .checked_mul(item_size)
            .ok_or_else(|| self.error(format!("{what}: size overflow")))?;
        if self.remaining() < need {
            return Err(self.error(format!(
                "truncated {what}: expected {need} bytes, found {}",
                self.remaining()
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}
