//! `SGSE` tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "SGSE"
//! u16    format version (1)
//! u16    rank
//! u32    dims[rank]
//! u8     dtype (1 = f32, 2 = u8)
//! ...    payload, row-major, product(dims) * dtype size bytes
//! u32    CRC-32 of the payload
//! ```

use std::fs;
use std::path::Path;

use segse_core::Tensor;

use crate::error::FormatError;

pub const MAGIC: [u8; 4] = *b"SGSE";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::U8 { shape, .. } => shape,
        }
    }

    fn dtype_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::U8 { .. } => "u8",
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>, FormatError> {
        match self {
            TensorData::F32(t) => Ok(t),
            other => Err(FormatError::WrongDtype {
                expected: "f32",
                found: other.dtype_name(),
            }),
        }
    }

    pub fn into_u8(self) -> Result<(Vec<usize>, Vec<u8>), FormatError> {
        match self {
            TensorData::U8 { shape, data } => Ok((shape, data)),
            other => Err(FormatError::WrongDtype {
                expected: "u8",
                found: other.dtype_name(),
            }),
        }
    }
}

/// Appends the encoding of `t` to `out`.
pub fn encode_into(t: &TensorData, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let shape = t.shape();
    out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let start = out.len() + 1;
    match t {
        TensorData::F32(t) => {
            out.push(1);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorData::U8 { data, .. } => {
            out.push(2);
            out.extend_from_slice(data);
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

pub fn encode(t: &TensorData) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(t, &mut out);
    out
}

/// Cursor over a byte slice with truncation-aware reads.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Decodes one tensor starting at the reader position.
pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<TensorData, FormatError> {
    let magic = r.array::<4>()?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version {
            expected: VERSION,
            found: version,
        });
    }
    let rank = r.u16()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Malformed(format!("dims {shape:?} overflow")))?;
    let dtype = r.u8()?;
    let size = match dtype {
        1 => 4,
        2 => 1,
        other => return Err(FormatError::Dtype(other)),
    };
    let len = count
        .checked_mul(size)
        .ok_or_else(|| FormatError::Malformed(format!("dims {shape:?} overflow")))?;
    let payload = r.take(len)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Crc { stored, computed });
    }
    Ok(match dtype {
        1 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            TensorData::F32(Tensor::new(&shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?)
        }
        _ => TensorData::U8 {
            shape,
            data: payload.to_vec(),
        },
    })
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<TensorData, FormatError> {
    let mut r = Reader::new(bytes);
    let t = decode_from(&mut r)?;
    match r.remaining() {
        0 => Ok(t),
        n => Err(FormatError::Trailing(n)),
    }
}

pub fn write_tensor(path: &Path, t: &TensorData) -> Result<(), FormatError> {
    fs::write(path, encode(t)).map_err(|e| FormatError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<TensorData, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes)
}

/// CRC-32 of a whole file, for index listings.
pub fn file_crc(path: &Path) -> Result<u32, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Ok(crc32fast::hash(&bytes))
}
