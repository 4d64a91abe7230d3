//! Little-endian binary reading helpers shared by the tensor, checkpoint
//! and dataset formats. The reader tracks its byte offset so format errors
//! can point at the offending position, and it never pre-allocates from
//! untrusted length fields.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub struct ByteReader<R> {
    inner: R,
    offset: u64,
    what: &'static str,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        ByteReader {
            inner,
            offset: 0,
            what,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, msg: impl ToString) -> Error {
        Error::format(self.what, self.offset, msg)
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(self.error(format!(
                "truncated: expected {} more bytes",
                buf.len()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    /// Reads exactly `len` bytes, or returns None at a clean end of stream.
    /// A partial read (EOF mid-record) is a truncation error.
    pub fn read_exact_or_eof(&mut self, buf: &mut [u8]) -> Result<Option<()>> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    if filled == 0 {
                        return Ok(None);
                    }
                    self.offset += filled as u64;
                    return Err(self.error(format!(
                        "truncated: got {} of {} bytes",
                        filled,
                        buf.len()
                    )));
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += filled as u64;
        Ok(Some(()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads `len` bytes without trusting `len` for the allocation: the
    /// buffer grows as bytes actually arrive, so a bogus length field in a
    /// hostile file cannot force a huge up-front allocation.
    pub fn bytes(&mut self, len: u64) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner)
            .take(len)
            .read_to_end(&mut buf)
            .map_err(Error::from)?;
        self.offset += got as u64;
        if (got as u64) < len {
            return Err(self.error(format!("truncated: got {got} of {len} bytes")));
        }
        Ok(buf)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.read_exact(&mut got)?;
        if &got != magic {
            return Err(Error::format(
                self.what,
                self.offset - 4,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(magic),
                    got
                ),
            ));
        }
        Ok(())
    }
}

pub struct ByteWriter<W> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub fn new(inner: W) -> Self {
        ByteWriter { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
