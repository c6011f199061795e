//! Parameter checkpoints: a little-endian binary format holding named
//! tensors — magic "PCKP", u32 version, u32 tensor count, then per tensor
//! a u16 name length + UTF-8 name, u8 rank, extents as u64, and float64
//! data. Buffers of narrower scalar types are upcast to f64 on save.

use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, TensorError};

const MAGIC: &[u8; 4] = b"PCKP";
const VERSION: u32 = 1;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckpointEntry {
    /// Builds an entry from a buffer of any supported scalar type.
    pub fn from_buffer<T: Scalar>(name: &str, shape: &[usize], data: &[T]) -> Self {
        CheckpointEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.iter().map(|v| v.f64()).collect(),
        }
    }

    /// Converts the stored f64 data to the target scalar type.
    pub fn to_buffer<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::fr(v)).collect()
    }
}

/// Writes a checkpoint to `w`.
pub fn write_checkpoint<W: Write>(
    entries: &[CheckpointEntry],
    mut w: W,
) -> Result<(), TensorError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(TensorError::CheckpointFormat(format!(
                "tensor name too long ({} bytes)",
                name.len()
            )));
        }
        if e.shape.len() > u8::MAX as usize {
            return Err(TensorError::CheckpointFormat(format!(
                "rank {} exceeds format limit",
                e.shape.len()
            )));
        }
        let count: usize = e.shape.iter().product();
        if count != e.data.len() {
            return Err(TensorError::CheckpointFormat(format!(
                "tensor {}: {} values for shape {:?}",
                e.name,
                e.data.len(),
                e.shape
            )));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.shape.len() as u8])?;
        for &ext in &e.shape {
            w.write_all(&(ext as u64).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint from `r`.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::CheckpointFormat("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(TensorError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| TensorError::CheckpointFormat(format!("bad name: {e}")))?;
        let mut rank_byte = [0u8; 1];
        r.read_exact(&mut rank_byte)?;
        let rank = rank_byte[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut u64buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let elems: usize = shape.iter().product();
        let mut data = Vec::with_capacity(elems);
        for _ in 0..elems {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok(entries)
}

/// Writes a checkpoint file.
pub fn save_checkpoint(entries: &[CheckpointEntry], path: &Path) -> Result<(), TensorError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(entries, std::io::BufWriter::new(file))
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, TensorError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
