//! Canonical binary layout for shares, queries and responses.
//!
//! Every message starts with a tag byte and the field modulus (`u64`), then
//! the server index (`u32`). Sections are prefixed with a `u32` element
//! count, and field elements are big-endian integers of the minimal width
//! that holds `q − 1`. All integers are big-endian.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{FieldElement, FieldModulus};
use crate::protocol::{ColumnQuery, QueryBundle, ResponseBundle, StorageShare};

pub const TAG_STORAGE: u8 = 1;
pub const TAG_QUERY: u8 = 2;
pub const TAG_RESPONSE: u8 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message ends early")]
    Truncated,
    #[error("expected tag {expected}, found {found}")]
    BadTag { expected: u8, found: u8 },
    #[error("value {0} is not a field element")]
    BadValue(u64),
    #[error("invalid modulus {0}")]
    BadModulus(u64),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

struct Writer {
    buf: Vec<u8>,
    width: usize,
}

impl Writer {
    fn new(tag: u8, q: FieldModulus, server: usize) -> Self {
        let mut w = Writer {
            buf: vec![tag],
            width: q.byte_width(),
        };
        w.buf.extend_from_slice(&q.q().to_be_bytes());
        w.u32(server);
        w
    }

    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_be_bytes());
    }

    fn elems(&mut self, values: &[FieldElement]) {
        self.u32(values.len());
        for v in values {
            self.buf.extend_from_slice(&v.value().to_be_bytes()[8 - self.width..]);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    modulus: FieldModulus,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], tag: u8) -> Result<(Self, usize), WireError> {
        let (&found, rest) = bytes.split_first().ok_or(WireError::Truncated)?;
        if found != tag {
            return Err(WireError::BadTag { expected: tag, found });
        }
        let q_bytes: [u8; 8] = rest.get(..8).ok_or(WireError::Truncated)?.try_into().expect("8 bytes");
        let q = u64::from_be_bytes(q_bytes);
        let modulus = FieldModulus::new(q).map_err(|_| WireError::BadModulus(q))?;
        let mut r = Reader {
            bytes: &rest[8..],
            modulus,
        };
        let server = r.u32()?;
        Ok((r, server))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn elems(&mut self) -> Result<Vec<FieldElement>, WireError> {
        let count = self.u32()?;
        let width = self.modulus.byte_width();
        (0..count)
            .map(|_| {
                let v = self.take(width)?.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64);
                if v >= self.modulus.q() {
                    return Err(WireError::BadValue(v));
                }
                Ok(self.modulus.elem(v))
            })
            .collect()
    }

    fn finish(self) -> Result<(), WireError> {
        match self.bytes.len() {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn modulus_of<'a>(mut values: impl Iterator<Item = &'a FieldElement>) -> FieldModulus {
    values
        .next()
        .map(|v| v.modulus())
        .unwrap_or_else(|| FieldModulus::new(2).expect("2 is prime"))
}

pub fn encode_response(r: &ResponseBundle) -> Vec<u8> {
    let mut w = Writer::new(TAG_RESPONSE, modulus_of(r.values.iter()), r.server);
    w.u32(r.column);
    w.elems(&r.values);
    w.buf
}

pub fn decode_response(bytes: &[u8]) -> Result<ResponseBundle, WireError> {
    let (mut r, server) = Reader::new(bytes, TAG_RESPONSE)?;
    let column = r.u32()?;
    let values = r.elems()?;
    r.finish()?;
    Ok(ResponseBundle {
        server,
        column,
        values,
    })
}

pub fn encode_storage_share(s: &StorageShare) -> Vec<u8> {
    let mut w = Writer::new(TAG_STORAGE, modulus_of(s.values.iter().flatten()), s.server);
    w.u32(s.values.len());
    for file in &s.values {
        w.elems(file);
    }
    w.buf
}

pub fn decode_storage_share(bytes: &[u8]) -> Result<StorageShare, WireError> {
    let (mut r, server) = Reader::new(bytes, TAG_STORAGE)?;
    let files = r.u32()?;
    let values = (0..files).map(|_| r.elems()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(StorageShare { server, values })
}

pub fn encode_query_bundle(b: &QueryBundle) -> Vec<u8> {
    let all = b.columns.iter().flat_map(|c| c.values.iter().flatten().flatten());
    let mut w = Writer::new(TAG_QUERY, modulus_of(all), b.server);
    w.u32(b.columns.len());
    for c in &b.columns {
        w.u32(c.column);
        w.u32(c.rows.len());
        for &row in &c.rows {
            w.u32(row);
        }
        w.u32(c.values.len());
        for per_file in &c.values {
            w.u32(per_file.len());
            for per_row in per_file {
                w.elems(per_row);
            }
        }
    }
    w.buf
}

pub fn decode_query_bundle(bytes: &[u8]) -> Result<QueryBundle, WireError> {
    let (mut r, server) = Reader::new(bytes, TAG_QUERY)?;
    let ncols = r.u32()?;
    let mut columns = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let column = r.u32()?;
        let nrows = r.u32()?;
        let rows = (0..nrows).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let files = r.u32()?;
        let mut values = Vec::with_capacity(files);
        for _ in 0..files {
            let per = r.u32()?;
            values.push((0..per).map(|_| r.elems()).collect::<Result<_, _>>()?);
        }
        columns.push(ColumnQuery { column, rows, values });
    }
    r.finish()?;
    Ok(QueryBundle { server, columns })
}

/// Lowercase hex SHA-256 of a canonical encoding.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
