//! Versioned little-endian container shared by the `.trkz`, `.winz` and
//! `.ckpt` files.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes
//! version    u32
//! header     u64 length + UTF-8 JSON text
//! body       u64 length + bytes
//! digest     32 bytes, SHA-256 of everything above
//! ```

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a {expected} file")]
    BadMagic { expected: String },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

pub(crate) fn encode(magic: &[u8; 4], version: u32, header: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + 8 + body.len() + 32);
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(version).unwrap();
    out.write_u64::<LittleEndian>(header.len() as u64).unwrap();
    out.extend_from_slice(header.as_bytes());
    out.write_u64::<LittleEndian>(body.len() as u64).unwrap();
    out.extend_from_slice(body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub(crate) struct Decoded<'a> {
    pub header: String,
    pub body: &'a [u8],
}

pub(crate) fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Decoded<'a>, ContainerError> {
    let name = String::from_utf8_lossy(magic).to_string();
    if bytes.len() < 8 {
        return if bytes.len() >= 4 && &bytes[..4] != magic {
            Err(ContainerError::BadMagic { expected: name })
        } else {
            Err(ContainerError::Corrupt("file shorter than its preamble".into()))
        };
    }
    if &bytes[..4] != magic {
        return Err(ContainerError::BadMagic { expected: name });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(ContainerError::VersionMismatch {
            found,
            supported: version,
        });
    }
    if bytes.len() < 8 + 8 + 8 + 32 {
        return Err(ContainerError::Corrupt("truncated".into()));
    }
    let (payload, digest) = bytes.split_at(bytes.len() - 32);
    let mut cur = Cursor::new(&payload[8..]);
    let header_len = read_len(&mut cur, payload.len())?;
    let start = 8 + cur.position() as usize;
    let header = std::str::from_utf8(&payload[start..start + header_len])
        .map_err(|_| ContainerError::Corrupt("header is not UTF-8".into()))?
        .to_string();
    let mut cur = Cursor::new(&payload[start + header_len..]);
    let body_len = read_len(&mut cur, payload.len())?;
    let body_start = start + header_len + 8;
    if body_start + body_len != payload.len() {
        return Err(ContainerError::Corrupt("length fields disagree with file size".into()));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(ContainerError::Corrupt("checksum mismatch".into()));
    }
    Ok(Decoded {
        header,
        body: &payload[body_start..],
    })
}

fn read_len(cur: &mut Cursor<&[u8]>, limit: usize) -> Result<usize, ContainerError> {
    let len = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| ContainerError::Corrupt("truncated length field".into()))?;
    let remaining = cur.get_ref().len() as u64 - cur.position();
    if len > remaining || len as usize > limit {
        return Err(ContainerError::Corrupt("length field exceeds file size".into()));
    }
    Ok(len as usize)
}

/// Append-only little-endian encoder for container bodies.
#[derive(Default)]
pub(crate) struct BodyWriter {
    pub buf: Vec<u8>,
}

impl BodyWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.write_i64::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

pub(crate) struct BodyReader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> BodyReader<'a> {
    pub fn new(body: &'a [u8]) -> Self {
        Self {
            cur: Cursor::new(body),
        }
    }

    fn short(_: std::io::Error) -> ContainerError {
        ContainerError::Corrupt("body ended early".into())
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        self.cur.read_u8().map_err(Self::short)
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        self.cur.read_u32::<LittleEndian>().map_err(Self::short)
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        self.cur.read_u64::<LittleEndian>().map_err(Self::short)
    }

    pub fn i64(&mut self) -> Result<i64, ContainerError> {
        self.cur.read_i64::<LittleEndian>().map_err(Self::short)
    }

    pub fn f64(&mut self) -> Result<f64, ContainerError> {
        self.cur.read_f64::<LittleEndian>().map_err(Self::short)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ContainerError> {
        self.ensure(n.saturating_mul(8))?;
        (0..n).map(|_| self.f64()).collect()
    }

    /// A count that must be backed by at least `min_item_bytes` per item.
    pub fn count(&mut self, min_item_bytes: usize) -> Result<usize, ContainerError> {
        let n = self.u64()? as usize;
        self.ensure(n.saturating_mul(min_item_bytes))?;
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String, ContainerError> {
        let len = self.u32()? as usize;
        self.ensure(len)?;
        let mut buf = vec![0; len];
        self.cur.read_exact(&mut buf).map_err(Self::short)?;
        String::from_utf8(buf).map_err(|_| ContainerError::Corrupt("string is not UTF-8".into()))
    }

    fn ensure(&self, n: usize) -> Result<(), ContainerError> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) > remaining {
            return Err(ContainerError::Corrupt("body ended early".into()));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), ContainerError> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(ContainerError::Corrupt("trailing bytes after body".into()));
        }
        Ok(())
    }
}
