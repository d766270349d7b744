//! Little-endian wire helpers shared by the `ADPC` and `ADPK` codecs.
//!
//! Readers operate on an in-memory byte slice with an explicit cursor and
//! report truncation against the *total* file length, so a short file fails
//! with one precise [`FormatError::Truncated`] instead of a panic.

use crate::error::FormatError;

/// Cursor over a fully loaded file. Loading the whole file first keeps
/// parsing atomic: either the buffer validates end to end or nothing is
/// constructed.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Fails unless exactly `expected` bytes remain unread.
    pub fn expect_exhausted(&self, expected_total: u64) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::TrailingData {
                expected: expected_total,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                expected: (self.pos + n) as u64,
                found: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f32_slice(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(count.checked_mul(4).ok_or_else(|| {
            FormatError::Header(format!("element count {count} overflows"))
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u32_slice(&mut self, count: usize) -> Result<Vec<u32>, FormatError> {
        let raw = self.take(count.checked_mul(4).ok_or_else(|| {
            FormatError::Header(format!("element count {count} overflows"))
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn f64_slice(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| {
            FormatError::Header(format!("element count {count} overflows"))
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                f64::from_bits(u64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]))
            })
            .collect())
    }
}

/// Append-only encoder; every writer below is the exact inverse of the
/// corresponding reader.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn f32_slice(&mut self, vs: impl IntoIterator<Item = f32>) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u32_slice(&mut self, vs: &[u32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
}
