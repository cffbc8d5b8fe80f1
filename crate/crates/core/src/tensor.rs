//! Dense row-major float tensors and the `.ten` binary file format.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! magic "TNSR" (4 bytes) | version u8 = 1 | rank u8 | rank x u32 dims | f32 payload
//! ```
//!
//! Rank must be in `1..=255` and every dimension must fit in a `u32`.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 1;

/// Dense n-dimensional float array with explicit shape, stored row-major.
///
/// Invariants enforced at construction: every dimension is positive, the
/// buffer length equals the shape product, and every element is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = checked_len(&shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} elements for shape {shape:?}"),
                actual: format!("{} elements", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor. Panics if the shape is invalid; intended for
    /// internally computed shapes.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = checked_len(&shape).expect("valid tensor shape");
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep elements finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch {
            expected: "positive dimensions".into(),
            actual: format!("{shape:?}"),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeOverflow(format!("{shape:?}")))
}

/// Affinely map a tensor onto `[0, 1]`: the minimum goes to exactly 0 and the
/// maximum to exactly 1. Errors with [`Error::ConstantVolume`] when max == min.
pub fn normalize(t: &Tensor) -> Result<Tensor> {
    let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in t.data() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return Err(Error::ConstantVolume);
    }
    let range = max - min;
    // Per-element division keeps the endpoints exact ((max-min)/(max-min) == 1),
    // which also makes normalize idempotent.
    let data = t.data().iter().map(|&v| (v - min) / range).collect();
    Tensor::new(t.shape().to_vec(), data)
}

/// Write a tensor in the `.ten` format to `w`.
pub fn write_tensor_to<W: Write>(t: &Tensor, w: &mut W) -> Result<()> {
    let rank = t.rank();
    if rank == 0 || rank > 255 {
        return Err(Error::ShapeOverflow(format!(
            "rank {rank} outside supported range 1..=255"
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, rank as u8])?;
    for &d in t.shape() {
        let d32 = u32::try_from(d)
            .map_err(|_| Error::ShapeOverflow(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d32.to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one tensor from `r`, consuming exactly its bytes.
pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut head = [0u8; 2];
    read_exact(r, &mut head)?;
    if head[0] != VERSION {
        return Err(Error::UnsupportedVersion(head[0]));
    }
    let rank = head[1] as usize;
    if rank == 0 {
        return Err(Error::ShapeOverflow("rank 0".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut dim = [0u8; 4];
        read_exact(r, &mut dim)?;
        shape.push(u32::from_le_bytes(dim) as usize);
    }
    let n = checked_len(&shape)?;
    let mut payload = vec![0u8; n * 4];
    read_exact(r, &mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile
        } else {
            Error::Io(e)
        }
    })
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor_from(&mut r)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(t),
        _ => Err(Error::TrailingData),
    }
}
