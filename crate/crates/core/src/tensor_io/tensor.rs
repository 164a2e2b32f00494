//! The `CLTENSR1` binary tensor format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "CLTENSR1"
//! rank    u8       1..=8
//! dims    rank x u64
//! payload product(dims) x f32, row-major (last dimension fastest)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLTENSR1";
pub const MAX_RANK: usize = 8;

/// Shape-tagged row-major `f32` array. Every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                reason: format!("shape holds {expected} elements but data has {}", data.len()),
                shape,
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Size of the encoded file in bytes.
    pub fn encoded_len(&self) -> usize {
        header_len(self.rank()) + 4 * self.data.len()
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("rank must be in 1..={MAX_RANK}"),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

fn header_len(rank: usize) -> usize {
    MAGIC.len() + 1 + 8 * rank
}

/// Encodes `t` into `out`, returning the number of bytes written.
pub fn write_tensor<W: Write>(t: &TensorF32, mut out: W) -> Result<usize> {
    validate_shape(&t.shape)?;
    check_finite(&t.data)?;

    let mut buf = Vec::with_capacity(t.encoded_len());
    buf.extend_from_slice(MAGIC);
    buf.push(t.shape.len() as u8);
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(buf.len())
}

/// Reads only the magic, rank and dims.
pub fn read_header<R: Read>(mut src: R) -> Result<Vec<usize>> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(&mut src, &mut magic, 0)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut rank = [0u8; 1];
    read_exact_or_truncated(&mut src, &mut rank, 8)?;
    let rank = rank[0] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: vec![],
            reason: format!("declared rank {rank} not in 1..={MAX_RANK}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut dim = [0u8; 8];
        read_exact_or_truncated(&mut src, &mut dim, 9 + 8 * i)?;
        let dim = u64::from_le_bytes(dim);
        let dim = usize::try_from(dim).map_err(|_| Error::InvalidShape {
            shape: shape.clone(),
            reason: format!("dimension {dim} does not fit in memory"),
        })?;
        shape.push(dim);
    }
    validate_shape(&shape)?;
    Ok(shape)
}

fn read_exact_or_truncated<R: Read>(src: &mut R, buf: &mut [u8], offset: usize) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::TruncatedPayload {
                    expected: offset + buf.len(),
                    found: offset + filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Decodes a tensor, rejecting bad magic, truncation, trailing bytes and non-finite values.
pub fn read_tensor<R: Read>(mut src: R) -> Result<TensorF32> {
    let shape = read_header(&mut src)?;
    let expected = shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows".into(),
        })?;

    let mut payload = Vec::new();
    src.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes(payload.len() - expected));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    check_finite(&data)?;
    Ok(TensorF32 { shape, data })
}

pub fn write_tensor_file(t: &TensorF32, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(Error::io_at(path))?;
    write_tensor(t, BufWriter::new(file))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorF32> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io_at(path))?;
    read_tensor(BufReader::new(file))
}

/// Reads the declared shape of a tensor file and checks that the file length matches it.
pub fn probe_tensor_file(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io_at(path))?;
    let len = file.metadata().map_err(Error::io_at(path))?.len() as usize;
    let shape = read_header(BufReader::new(file))?;
    let expected = header_len(shape.len()) + 4 * shape.iter().product::<usize>();
    if len < expected {
        return Err(Error::TruncatedPayload {
            expected: expected - header_len(shape.len()),
            found: len.saturating_sub(header_len(shape.len())),
        });
    }
    if len > expected {
        return Err(Error::TrailingBytes(len - expected));
    }
    Ok(shape)
}
