//! Big-endian length-prefixed framing helpers shared by every wire format.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("field too long: {0}")]
    FieldTooLong(&'static str),
    #[error("invalid utf-8 in {0}")]
    BadUtf8(&'static str),
    #[error("bad magic")]
    BadMagic,
    #[error("{0}")]
    Invalid(&'static str),
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn str16(&mut self, field: &'static str, s: &str) -> Result<&mut Self, CodecError> {
        self.bytes16(field, s.as_bytes())
    }

    pub fn bytes16(&mut self, field: &'static str, b: &[u8]) -> Result<&mut Self, CodecError> {
        let len = u16::try_from(b.len()).map_err(|_| CodecError::FieldTooLong(field))?;
        Ok(self.u16(len).bytes(b))
    }

    pub fn bytes32(&mut self, field: &'static str, b: &[u8]) -> Result<&mut Self, CodecError> {
        let len = u32::try_from(b.len()).map_err(|_| CodecError::FieldTooLong(field))?;
        Ok(self.u32(len).bytes(b))
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a borrowed buffer. Every read is bounds-checked against the
/// remaining input; nothing ever reads past a declared length.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if n > self.remaining() {
            return Err(CodecError::Truncated { offset: self.pos, needed: n });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn expect(&mut self, magic: &[u8]) -> Result<(), CodecError> {
        if self.take(magic.len()).map_err(|_| CodecError::BadMagic)? == magic {
            Ok(())
        } else {
            Err(CodecError::BadMagic)
        }
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bytes16(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    pub fn bytes32(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str16(&mut self, field: &'static str) -> Result<String, CodecError> {
        let b = self.bytes16()?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::BadUtf8(field))
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CodecError::Invalid("trailing bytes"))
        }
    }
}
